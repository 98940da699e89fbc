#include "pcsep/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "pcsep/errors.hpp"

namespace pcsep::metrics {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double energy(std::span<const double> a) { return dot(a, a); }

Ratio ratio_db(double num, double den) {
  if (den == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(num / den), false};
}

// Projection of x onto span(basis) through a modified Gram-Schmidt
// orthonormal basis.
class Projector {
 public:
  void add(std::span<const double> v, double dependency_tol) {
    std::vector<double> q(v.begin(), v.end());
    const double original = std::sqrt(energy(q));
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis_) {
        const double c = dot(q, b);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] -= c * b[i];
      }
    }
    const double n = std::sqrt(energy(q));
    if (!(n > dependency_tol * original)) throw NumericalError("decompose: references are linearly dependent");
    for (double& x : q) x /= n;
    basis_.push_back(std::move(q));
  }

  // Projection onto basis vectors [first, end).
  std::vector<double> project(std::span<const double> x, std::size_t first = 0) const {
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t k = first; k < basis_.size(); ++k) {
      const auto& b = basis_[k];
      const double c = dot(x, b);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] += c * b[i];
    }
    return out;
  }

 private:
  std::vector<std::vector<double>> basis_;
};

}  // namespace

Decomposition decompose(std::span<const double> estimate, std::span<const std::vector<double>> references,
                        std::size_t target) {
  if (references.empty()) throw EmptyInputError("decompose: no references");
  if (target >= references.size()) throw ContractError("decompose: target index out of range");
  const std::size_t n = estimate.size();
  for (const auto& r : references) {
    if (r.size() != n) throw DimensionError("decompose: reference and estimate lengths differ");
    if (energy(r) == 0.0) throw NumericalError("decompose: zero-energy reference");
  }
  const auto& s = references[target];
  Decomposition d;
  const double a = dot(estimate, s) / energy(s);
  d.s_target.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.s_target[i] = a * s[i];

  // span(all) = span(s) + its orthogonal complement within the references;
  // the residual after the target projection is projected onto the latter.
  Projector all;
  all.add(s, 1e-10);
  for (std::size_t j = 0; j < references.size(); ++j)
    if (j != target) all.add(references[j], 1e-10);
  std::vector<double> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i] = estimate[i] - d.s_target[i];
  d.e_interf = all.project(residual, 1);
  d.e_noise.assign(n, 0.0);
  d.e_artif.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.e_artif[i] = residual[i] - d.e_interf[i];
  return d;
}

Ratio sdr(const Decomposition& d) {
  std::vector<double> err(d.s_target.size());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = d.e_interf[i] + d.e_noise[i] + d.e_artif[i];
  return ratio_db(energy(d.s_target), energy(err));
}

Ratio sir(const Decomposition& d) { return ratio_db(energy(d.s_target), energy(d.e_interf)); }

Ratio sar(const Decomposition& d) {
  std::vector<double> num(d.s_target.size());
  for (std::size_t i = 0; i < num.size(); ++i) num[i] = d.s_target[i] + d.e_interf[i] + d.e_noise[i];
  return ratio_db(energy(num), energy(d.e_artif));
}

SiSdr si_sdr(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size()) throw DimensionError("si_sdr: length mismatch");
  const double ref_energy = energy(reference);
  if (ref_energy == 0.0) throw NumericalError("si_sdr: zero-energy reference");
  const double alpha = dot(estimate, reference) / ref_energy;
  double target = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    target += t * t;
    noise += (t - estimate[i]) * (t - estimate[i]);
  }
  return {ratio_db(target, noise), alpha};
}

MetricReport evaluate_estimate(std::span<const double> estimate, std::span<const std::vector<double>> references,
                               std::size_t target) {
  const Decomposition d = decompose(estimate, references, target);
  MetricReport r;
  r.sources = references.size();
  r.sdr = sdr(d);
  r.sir = sir(d);
  r.sar = sar(d);
  const SiSdr si = si_sdr(references[target], estimate);
  r.si_sdr = si.ratio;
  r.alpha_si = si.alpha;
  return r;
}

Aggregate aggregate(std::span<const MetricReport> rows) {
  Aggregate a;
  if (rows.empty()) return a;
  a.method = rows.front().method;
  a.sources = rows.front().sources;
  a.items = rows.size();
  std::size_t finite = 0;
  for (const auto& r : rows) {
    if (r.sdr.infinite || r.sir.infinite || r.sar.infinite || r.si_sdr.infinite) {
      ++a.infinite;
      continue;
    }
    a.sdr += r.sdr.db;
    a.sir += r.sir.db;
    a.sar += r.sar.db;
    a.si_sdr += r.si_sdr.db;
    ++finite;
  }
  if (finite > 0) {
    const double inv = 1.0 / static_cast<double>(finite);
    a.sdr *= inv;
    a.sir *= inv;
    a.sar *= inv;
    a.si_sdr *= inv;
  }
  return a;
}

namespace {

std::string fmt(const Ratio& r) {
  if (r.infinite) return "inf";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << r.db;
  return ss.str();
}

nlohmann::json json_ratio(const Ratio& r) {
  if (r.infinite) return "inf";
  return r.db;
}

}  // namespace

void write_tsv(std::ostream& os, std::span<const MetricReport> rows, std::span<const Aggregate> aggregates) {
  os << "item_id\tinstrument\tN\tmethod\tsdr\tsir\tsar\tsi_sdr\n";
  for (const auto& r : rows) {
    os << r.item_id << '\t' << r.instrument << '\t' << r.sources << '\t' << r.method << '\t' << fmt(r.sdr) << '\t'
       << fmt(r.sir) << '\t' << fmt(r.sar) << '\t' << fmt(r.si_sdr) << '\n';
  }
  for (const auto& a : aggregates) {
    os << "mean\tall\t" << a.sources << '\t' << a.method << '\t' << fmt({a.sdr, false}) << '\t'
       << fmt({a.sir, false}) << '\t' << fmt({a.sar, false}) << '\t' << fmt({a.si_sdr, false}) << '\n';
  }
}

void write_json(std::ostream& os, std::span<const MetricReport> rows, std::span<const Aggregate> aggregates) {
  nlohmann::json doc;
  doc["items"] = nlohmann::json::array();
  for (const auto& r : rows) {
    doc["items"].push_back({{"item_id", r.item_id},
                            {"instrument", r.instrument},
                            {"N", r.sources},
                            {"method", r.method},
                            {"sdr", json_ratio(r.sdr)},
                            {"sir", json_ratio(r.sir)},
                            {"sar", json_ratio(r.sar)},
                            {"si_sdr", json_ratio(r.si_sdr)},
                            {"alpha_si", r.alpha_si}});
  }
  doc["aggregate"] = nlohmann::json::array();
  for (const auto& a : aggregates) {
    doc["aggregate"].push_back({{"method", a.method},
                                {"N", a.sources},
                                {"items", a.items},
                                {"infinite_items", a.infinite},
                                {"sdr", a.sdr},
                                {"sir", a.sir},
                                {"sar", a.sar},
                                {"si_sdr", a.si_sdr}});
  }
  os << doc.dump(2) << '\n';
}

}  // namespace pcsep::metrics
