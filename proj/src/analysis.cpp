#include "gridmind/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gridmind::analysis {

Json TestResult::to_json() const {
  return {{"statistic", statistic},
          {"p_value", p_value},
          {"n_resamples", n_resamples},
          {"seed", seed}};
}

double mean(const std::vector<double>& x) {
  if (x.empty()) throw ValidationError("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 3) throw ValidationError("pearson: need at least 3 points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw ValidationError("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double two_sided_p(std::size_t below, std::size_t above, std::size_t n) {
  const double dn = static_cast<double>(n);
  const double p = 2.0 * std::min(static_cast<double>(below), static_cast<double>(above)) / dn;
  return std::clamp(p, 2.0 / dn, 1.0);
}

TestResult bootstrap_test(const std::vector<double>& a,
                          const std::vector<double>& b, int n,
                          std::uint64_t seed) {
  if (a.size() < 2 || b.size() < 2) {
    throw ValidationError("bootstrap_test: each sample needs at least 2 values");
  }
  if (n < 1) throw ValidationError("bootstrap_test: n must be positive");
  Rng rng(seed);
  std::size_t below = 0, above = 0;
  for (int k = 0; k < n; ++k) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sa += a[uniform_index(rng, a.size())];
    for (std::size_t i = 0; i < b.size(); ++i) sb += b[uniform_index(rng, b.size())];
    const double d = sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
    if (d <= 0.0) ++below;
    if (d >= 0.0) ++above;
  }
  TestResult r;
  r.statistic = mean(a) - mean(b);
  r.p_value = two_sided_p(below, above, static_cast<std::size_t>(n));
  r.n_resamples = n;
  r.seed = seed;
  return r;
}

TestResult perm_corr_diff(const std::vector<double>& x,
                          const std::vector<double>& y1,
                          const std::vector<double>& y2, int n,
                          std::uint64_t seed) {
  if (x.size() != y1.size() || x.size() != y2.size()) {
    throw ValidationError("perm_corr_diff: length mismatch");
  }
  if (n < 1) throw ValidationError("perm_corr_diff: n must be positive");
  const double obs = pearson(x, y1) - pearson(x, y2);
  Rng rng(seed);
  std::vector<double> a(y1), b(y2);
  std::size_t below = 0, above = 0;
  for (int k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool swap = uniform01(rng) < 0.5;
      a[i] = swap ? y2[i] : y1[i];
      b[i] = swap ? y1[i] : y2[i];
    }
    double d = 0.0;
    // A permuted column can be constant even when neither input is.
    try {
      d = pearson(x, a) - pearson(x, b);
    } catch (const ValidationError&) {
      d = 0.0;
    }
    if (d <= obs + 1e-12) ++below;
    if (d >= obs - 1e-12) ++above;
  }
  TestResult r;
  r.statistic = obs;
  r.p_value = two_sided_p(below, above, static_cast<std::size_t>(n));
  r.n_resamples = n;
  r.seed = seed;
  return r;
}

std::vector<std::vector<double>> rsa_matrix(
    const std::vector<std::vector<double>>& v) {
  if (v.size() < 2) throw ValidationError("rsa_matrix: need at least 2 vectors");
  for (const auto& x : v) {
    if (x.size() != v.front().size()) throw ValidationError("rsa_matrix: dim mismatch");
  }
  const std::size_t k = v.size();
  std::vector<std::vector<double>> m(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      m[i][j] = m[j][i] = pearson(v[i], v[j]);
    }
  }
  return m;
}

KsResult ks_uniform(std::vector<double> s) {
  if (s.empty()) throw ValidationError("ks_uniform: empty sample");
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = std::clamp(s[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  // Kolmogorov distribution with the Stephens small-sample correction.
  const double t = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    p += 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * t * t);
  }
  return {d, std::clamp(p, 0.0, 1.0)};
}

Interval bootstrap_ci(const std::vector<double>& x, double level, int n,
                      std::uint64_t seed) {
  if (x.empty()) throw ValidationError("bootstrap_ci: empty sample");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("bootstrap_ci: bad level");
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(n));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[uniform_index(rng, x.size())];
    m = s / static_cast<double>(x.size());
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  return {at(alpha), at(1.0 - alpha)};
}

Json DlReport::to_json() const {
  Json rs = Json::array();
  for (const auto& r : rows) {
    rs.push_back({{"board_id", r.board_id},
                  {"human", r.human},
                  {"synthetic", r.synthetic},
                  {"program_lib", r.program_lib},
                  {"program_nolib", r.program_nolib}});
  }
  return {{"boards", rs},
          {"pearson_human_lib", r_human_lib},
          {"pearson_human_nolib", r_human_nolib},
          {"correlation_difference", diff.to_json()}};
}

std::string DlReport::to_csv() const {
  std::ostringstream out;
  out << "board_id,human,synthetic,program_lib,program_nolib\n";
  for (const auto& r : rows) {
    out << r.board_id << ',' << r.human << ',' << r.synthetic << ','
        << r.program_lib << ',' << r.program_nolib << '\n';
  }
  return out.str();
}

DlReport dl_report(const std::map<std::string, double>& human,
                   const std::map<std::string, double>& synthetic,
                   const std::map<std::string, double>& program_lib,
                   const std::map<std::string, double>& program_nolib,
                   int n_resamples, std::uint64_t seed) {
  DlReport rep;
  std::vector<double> h, lib, nolib;
  for (const auto& [id, v] : human) {
    if (!synthetic.count(id) || !program_lib.count(id) || !program_nolib.count(id)) {
      throw ValidationError("dl_report: board '" + id + "' missing from a source");
    }
    rep.rows.push_back({id, v, synthetic.at(id), program_lib.at(id), program_nolib.at(id)});
    h.push_back(v);
    lib.push_back(program_lib.at(id));
    nolib.push_back(program_nolib.at(id));
  }
  if (synthetic.size() != human.size() || program_lib.size() != human.size() ||
      program_nolib.size() != human.size()) {
    throw ValidationError("dl_report: sources cover different boards");
  }
  rep.r_human_lib = pearson(h, lib);
  rep.r_human_nolib = pearson(h, nolib);
  rep.diff = perm_corr_diff(h, lib, nolib, n_resamples, seed);
  return rep;
}

}  // namespace gridmind::analysis
