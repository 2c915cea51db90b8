#pragma once

#include <Eigen/Dense>

#include <set>
#include <string>
#include <vector>

namespace convar {

/// Sample CRPS: mean |x_i - y| - (1 / 2m^2) sum_ij |x_i - x_j|, with the
/// pairwise sum taken from the sorted samples.
double crps_sample(std::vector<double> samples, double obs);

/// Reference O(m^2) evaluation of the same estimator.
double crps_double_sum(const std::vector<double>& samples, double obs);

/// Median with the midpoint convention for even counts.
double median(std::vector<double> samples);

double mae_median(std::vector<double> samples, double obs);

/// Linear-interpolation quantile of the order statistics (p in [0, 1]).
double quantile(std::vector<double> samples, double p);

/// One verified forecast: the ensemble for a target and the value that occurred.
struct ScoredForecast {
  Eigen::Index lead = 0;
  std::string target_class;
  Eigen::Index time = 0;
  std::vector<double> samples;
  double obs = 0.0;
};

struct ScoreRow {
  Eigen::Index lead = 0;
  std::string target_class;
  std::string metric;  // "CRPS" or "MAE"
  double value = 0.0;
  long n = 0;
};

/// Mean CRPS and MAE of the median per (lead, class), sorted by lead, class,
/// metric. Forecasts valid at an excluded time are skipped.
std::vector<ScoreRow> score_table(const std::vector<ScoredForecast>& forecasts,
                                  const std::set<Eigen::Index>& excluded_times = {});

}  // namespace convar
