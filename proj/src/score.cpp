#include "convar/score.hpp"

#include "convar/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace convar {

namespace {

void check_samples(const std::vector<double>& samples, double obs) {
  if (samples.empty()) throw ValidationError("empty sample list");
  if (!std::isfinite(obs)) throw ValidationError("non-finite observation");
  for (double x : samples) {
    if (!std::isfinite(x)) throw ValidationError("non-finite sample");
  }
}

}  // namespace

double crps_sample(std::vector<double> samples, double obs) {
  check_samples(samples, obs);
  std::sort(samples.begin(), samples.end());
  const auto m = static_cast<double>(samples.size());
  double abs_dev = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    abs_dev += std::abs(samples[i] - obs);
    pair += (2.0 * static_cast<double>(i + 1) - m - 1.0) * samples[i];
  }
  // pair is half the double sum over ordered pairs
  return std::max(abs_dev / m - pair / (m * m), 0.0);
}

double crps_double_sum(const std::vector<double>& samples, double obs) {
  check_samples(samples, obs);
  const auto m = static_cast<double>(samples.size());
  double abs_dev = 0.0, pair = 0.0;
  for (double x : samples) {
    abs_dev += std::abs(x - obs);
    for (double z : samples) pair += std::abs(x - z);
  }
  return abs_dev / m - pair / (2.0 * m * m);
}

double median(std::vector<double> samples) {
  if (samples.empty()) throw ValidationError("median of an empty sample");
  const std::size_t mid = samples.size() / 2;
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(mid), samples.end());
  const double upper = samples[mid];
  if (samples.size() % 2 == 1) return upper;
  const double lower = *std::max_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double mae_median(std::vector<double> samples, double obs) {
  check_samples(samples, obs);
  return std::abs(median(std::move(samples)) - obs);
}

double quantile(std::vector<double> samples, double p) {
  if (samples.empty()) throw ValidationError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile level outside [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double h = p * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

std::vector<ScoreRow> score_table(const std::vector<ScoredForecast>& forecasts,
                                  const std::set<Eigen::Index>& excluded_times) {
  std::map<std::pair<Eigen::Index, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& f : forecasts) {
    if (excluded_times.count(f.time)) continue;
    auto& g = groups[{f.lead, f.target_class}];
    g.first.push_back(crps_sample(f.samples, f.obs));
    g.second.push_back(mae_median(f.samples, f.obs));
  }
  auto mean = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::vector<ScoreRow> rows;
  for (const auto& [key, g] : groups) {
    const auto n = static_cast<long>(g.first.size());
    rows.push_back({key.first, key.second, "CRPS", mean(g.first), n});
    rows.push_back({key.first, key.second, "MAE", mean(g.second), n});
  }
  return rows;
}

}  // namespace convar
