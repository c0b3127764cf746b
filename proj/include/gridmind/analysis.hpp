#ifndef GRIDMIND_ANALYSIS_HPP_
#define GRIDMIND_ANALYSIS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gridmind/common.hpp"

namespace gridmind::analysis {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int n_resamples = 0;
  std::uint64_t seed = 0;

  Json to_json() const;
};

double mean(const std::vector<double>& x);

// Sample Pearson correlation. Throws ValidationError on length < 3,
// mismatched lengths, or zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Two-sided resampling p-value: 2 * min(frac(d <= 0), frac(d >= 0)) for
// bootstrap draws, clamped to [2/n, 1].
double two_sided_p(std::size_t at_or_below, std::size_t at_or_above,
                   std::size_t n);

// Independent-samples bootstrap on the difference of means.
TestResult bootstrap_test(const std::vector<double>& a,
                          const std::vector<double>& b, int n = 10000,
                          std::uint64_t seed = 0);

// Permutation test for pearson(x, y1) - pearson(x, y2), swapping (y1_i, y2_i)
// per item with probability 1/2. The p-value compares the null draws
// against the observed statistic on both tails.
TestResult perm_corr_diff(const std::vector<double>& x,
                          const std::vector<double>& y1,
                          const std::vector<double>& y2, int n = 10000,
                          std::uint64_t seed = 0);

// k x k Pearson correlation matrix between vectors.
std::vector<std::vector<double>> rsa_matrix(
    const std::vector<std::vector<double>>& vectors);

// One-sample Kolmogorov-Smirnov statistic against U[0, 1] and its asymptotic
// p-value.
struct KsResult {
  double d = 0.0;
  double p_value = 1.0;
};
KsResult ks_uniform(std::vector<double> samples);

// Percentile bootstrap confidence interval for the mean.
struct Interval {
  double low = 0.0;
  double high = 0.0;
};
Interval bootstrap_ci(const std::vector<double>& x, double level = 0.95,
                      int n = 10000, std::uint64_t seed = 0);

struct DlRow {
  std::string board_id;
  double human = 0.0;
  double synthetic = 0.0;
  double program_lib = 0.0;
  double program_nolib = 0.0;
};

struct DlReport {
  std::vector<DlRow> rows;
  double r_human_lib = 0.0;
  double r_human_nolib = 0.0;
  TestResult diff;

  Json to_json() const;
  std::string to_csv() const;
};

// Per-board mean description lengths of four sources, their correlations,
// and the correlation-difference permutation test. All maps must share ids.
DlReport dl_report(const std::map<std::string, double>& human,
                   const std::map<std::string, double>& synthetic,
                   const std::map<std::string, double>& program_lib,
                   const std::map<std::string, double>& program_nolib,
                   int n_resamples = 10000, std::uint64_t seed = 0);

}  // namespace gridmind::analysis

#endif  // GRIDMIND_ANALYSIS_HPP_
