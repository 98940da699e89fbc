#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace pcsep::metrics {

// estimate = s_target + e_interf + e_noise + e_artif.
struct Decomposition {
  std::vector<double> s_target;
  std::vector<double> e_interf;
  std::vector<double> e_noise;  // always zero here
  std::vector<double> e_artif;
};

// s_target is the orthogonal projection of the estimate onto the target
// reference, e_interf the projection onto span(all references) minus s_target,
// e_artif the remainder. Throws on zero-energy or linearly dependent references
// and on length mismatch.
Decomposition decompose(std::span<const double> estimate, std::span<const std::vector<double>> references,
                        std::size_t target);

// A ratio in dB, or +inf when the denominator energy is exactly zero.
struct Ratio {
  double db = 0.0;
  bool infinite = false;
};

Ratio sdr(const Decomposition& d);
Ratio sir(const Decomposition& d);
Ratio sar(const Decomposition& d);

struct SiSdr {
  Ratio ratio;
  double alpha = 0.0;  // argmin_a ||a s - estimate||^2
};
SiSdr si_sdr(std::span<const double> reference, std::span<const double> estimate);

struct MetricReport {
  std::string item_id;
  std::string instrument;
  std::size_t sources = 0;
  std::string method;
  Ratio sdr, sir, sar, si_sdr;
  double alpha_si = 0.0;
};

MetricReport evaluate_estimate(std::span<const double> estimate, std::span<const std::vector<double>> references,
                               std::size_t target);

// Per-item mean of each ratio over the items whose ratios are all finite.
// Items with any +inf ratio are only counted.
struct Aggregate {
  std::string method;
  std::size_t sources = 0;
  std::size_t items = 0;
  double sdr = 0.0, sir = 0.0, sar = 0.0, si_sdr = 0.0;
  std::size_t infinite = 0;
};
Aggregate aggregate(std::span<const MetricReport> rows);

// Tab-separated: item_id instrument N method sdr sir sar si_sdr. Infinite
// ratios print as "inf".
void write_tsv(std::ostream& os, std::span<const MetricReport> rows, std::span<const Aggregate> aggregates);
// {"items": [...], "aggregate": [...]} with infinite ratios as the string "inf".
void write_json(std::ostream& os, std::span<const MetricReport> rows, std::span<const Aggregate> aggregates);

}  // namespace pcsep::metrics
