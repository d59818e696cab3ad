#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "episir/errors.hpp"
#include "episir/grid.hpp"

namespace episir {

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
};

// pointwise_loglik: rows = retained draws, cols = modeled cells.
// lppd = sum_cells log(mean_draws exp(ll)); p_waic = sum_cells var_draws(ll)
// (sample variance, n-1); waic = -2(lppd - p_waic).
inline WaicResult waic(const Grid<double>& pointwise_loglik) {
  const std::size_t n = pointwise_loglik.rows();
  const std::size_t cells = pointwise_loglik.cols();
  if (n < 2) throw TooFewDraws("WAIC needs at least 2 draws");
  if (cells < 1) throw TooFewDraws("WAIC needs at least 1 cell");

  WaicResult r;
  for (std::size_t c = 0; c < cells; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < n; ++d) mx = std::max(mx, pointwise_loglik(d, c));
    // log-mean-exp with max shift
    double sum_exp = 0.0;
    double mean_ll = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      sum_exp += std::exp(pointwise_loglik(d, c) - mx);
      mean_ll += pointwise_loglik(d, c);
    }
    mean_ll /= static_cast<double>(n);
    r.lppd += mx + std::log(sum_exp / static_cast<double>(n));
    double ss = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      const double dev = pointwise_loglik(d, c) - mean_ll;
      ss += dev * dev;
    }
    r.p_waic += ss / static_cast<double>(n - 1);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

// Mean over draws of the deviance -2 * sum_cells ll.
inline double mean_deviance(const Grid<double>& pointwise_loglik) {
  const std::size_t n = pointwise_loglik.rows();
  if (n < 1) throw TooFewDraws("mean deviance needs at least 1 draw");
  double acc = 0.0;
  for (std::size_t d = 0; d < n; ++d) {
    double row = 0.0;
    for (std::size_t c = 0; c < pointwise_loglik.cols(); ++c) {
      row += pointwise_loglik(d, c);
    }
    acc += -2.0 * row;
  }
  return acc / static_cast<double>(n);
}

struct GewekeResult {
  double z = 0.0;
  bool degenerate = false;  // zero spectral variance in a window
};

namespace detail {

// Spectral density at frequency zero by non-overlapping batch means with
// floor(sqrt(n)) batches: s = batch_size * var(batch means).
inline double spectral_density_zero(const double* x, std::size_t n) {
  const auto n_batches = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  if (n_batches < 2) return 0.0;
  const std::size_t batch = n / n_batches;  // trailing remainder dropped
  std::vector<double> means(n_batches, 0.0);
  for (std::size_t b = 0; b < n_batches; ++b) {
    double s = 0.0;
    for (std::size_t t = 0; t < batch; ++t) s += x[b * batch + t];
    means[b] = s / static_cast<double>(batch);
  }
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= static_cast<double>(n_batches);
  double ss = 0.0;
  for (double v : means) ss += (v - grand) * (v - grand);
  return static_cast<double>(batch) * ss / static_cast<double>(n_batches - 1);
}

}  // namespace detail

// z = (mean_A - mean_B) / sqrt(s_A/n_A + s_B/n_B), A = first frac_a of the
// chain, B = last frac_b; s estimated by batch means. A flat chain has no
// admissible variance estimate: by convention z = 0 with the degenerate flag.
inline GewekeResult geweke(const std::vector<double>& chain, double frac_a = 0.1,
                           double frac_b = 0.5) {
  const std::size_t n = chain.size();
  if (n < 100) {
    throw ChainTooShort("Geweke needs a chain of length >= 100, got " +
                        std::to_string(n));
  }
  const auto n_a = static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac_a));
  const auto n_b = static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac_b));
  const double* a = chain.data();
  const double* b = chain.data() + (n - n_b);

  auto window_mean = [](const double* x, std::size_t len) {
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) s += x[t];
    return s / static_cast<double>(len);
  };
  const double mean_a = window_mean(a, n_a);
  const double mean_b = window_mean(b, n_b);
  const double s_a = detail::spectral_density_zero(a, n_a);
  const double s_b = detail::spectral_density_zero(b, n_b);

  GewekeResult r;
  const double denom = s_a / static_cast<double>(n_a) + s_b / static_cast<double>(n_b);
  if (denom <= 0.0) {
    r.degenerate = true;
    r.z = mean_a == mean_b ? 0.0
                           : std::copysign(std::numeric_limits<double>::infinity(),
                                           mean_a - mean_b);
    return r;
  }
  r.z = (mean_a - mean_b) / std::sqrt(denom);
  return r;
}

// Posterior mean of a 0/1 indicator chain; inclusion decided at >= 0.5.
inline double inclusion_probability(const std::vector<int>& draws) {
  if (draws.empty()) throw TooFewDraws("inclusion probability needs draws");
  double s = 0.0;
  for (int g : draws) {
    if (g != 0 && g != 1) throw DataError("indicator draws must be 0 or 1");
    s += g;
  }
  return s / static_cast<double>(draws.size());
}

inline bool inclusion_decision(double prob) { return prob >= 0.5; }

// Linear-interpolation quantile on a sorted copy: h = (n-1)p, interpolate
// between the two straddling order statistics.
inline double quantile_linear(std::vector<double> sorted_copy, double p) {
  std::sort(sorted_copy.begin(), sorted_copy.end());
  const std::size_t n = sorted_copy.size();
  const double h = static_cast<double>(n - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted_copy[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted_copy[lo] + frac * (sorted_copy[lo + 1] - sorted_copy[lo]);
}

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

inline ParamSummary posterior_summary(const std::string& name,
                                      const std::vector<double>& draws) {
  if (draws.size() < 2) throw TooFewDraws("posterior summary needs >= 2 draws");
  ParamSummary s;
  s.name = name;
  for (double v : draws) s.mean += v;
  s.mean /= static_cast<double>(draws.size());
  double ss = 0.0;
  for (double v : draws) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(draws.size() - 1));
  s.q025 = quantile_linear(draws, 0.025);
  s.q975 = quantile_linear(draws, 0.975);
  return s;
}

// Full per-run report: goodness of fit, per-parameter summaries and
// convergence scores, and (for GVS fits) inclusion probabilities.
struct FitReport {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
  double mean_deviance = 0.0;
  std::vector<ParamSummary> summaries;
  std::vector<std::pair<std::string, GewekeResult>> geweke_scores;
  std::vector<double> inclusion_probs;  // per predictor; empty unless GVS
  long long n_retained = 0;
  long long dropped_cells = 0;
};

}  // namespace episir
