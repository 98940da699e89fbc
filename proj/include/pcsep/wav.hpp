#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "pcsep/dsp.hpp"

namespace pcsep::dsp {

// RIFF/WAVE with PCM 16-bit or IEEE float 32-bit samples, any channel count
// (WAVE_FORMAT_EXTENSIBLE included). Malformed input raises ParseError with
// the byte offset.
MultiChannelAudio parse_wav(std::string_view bytes);
MultiChannelAudio read_wav(const std::filesystem::path& path);

// Mono PCM 16-bit. Samples outside [-1, 1] saturate and log one warning.
std::string to_wav(const AudioClip& clip);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace pcsep::dsp
