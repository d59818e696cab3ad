#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "episir/errors.hpp"

namespace episir {

// Full parameter vector for any catalog model. Fields a given model does not
// use stay empty/at defaults and are never written by the sampler.
struct ParameterState {
  static constexpr int k_predictors = 3;

  double alpha0 = 0.0;  // intercept
  double alpha1 = 0.0;  // self-lag coefficient
  double alpha2 = 0.0;  // neighborhood-lag coefficient

  // Predictor effects under GVS: beta_k = gamma_k * theta_k. Fixed-predictor
  // models pin gamma at 1.
  std::array<double, k_predictors> theta{0.0, 0.0, 0.0};
  std::array<int, k_predictors> gamma{1, 1, 1};

  // Uncorrelated heterogeneity: per-area v_i, or per-cell v_ij stored
  // row-major as i*n_days + j (day 0 unused, held at 0).
  std::vector<double> v;

  // ICAR spatially correlated effect, centered to sum zero each sweep.
  std::vector<double> u;

  // Mobility change-point coefficients eta_1..eta_P.
  std::vector<double> eta;

  double tau_v = 1.0;          // precision of v (scalar case)
  std::vector<double> tau_vj;  // per-day precision of v_ij (time-varying case)
  double tau_u = 1.0;          // ICAR precision
  double tau_y = 1.0;          // lognormal observation precision (scalar)
  std::vector<double> tau_yj;  // per-day observation precision

  double beta(int k) const {
    return static_cast<double>(gamma[static_cast<std::size_t>(k)]) *
           theta[static_cast<std::size_t>(k)];
  }
};

// Hyperparameters. The Ga(0.5, 0.1) pair for time-varying precisions is the
// one prior the source analysis pins down; the rest are weakly informative
// defaults chosen for stability.
struct PriorConfig {
  double coef_sd = 10.0;  // N(0, sd^2) for alpha, theta, eta

  double prec_shape = 0.5;  // Ga(shape, rate) for tau_v, tau_u, tau_y
  double prec_rate = 0.0005;

  double tvprec_shape = 0.5;  // Ga(shape, rate) for per-day tau_vj / tau_yj
  double tvprec_rate = 0.1;

  double gvs_prior_inclusion = 0.5;

  // GVS pseudo-priors N(pseudo_mean, pseudo_sd^2), tuned from a pilot run of
  // the fixed-predictor variant; sd <= 0 means not yet tuned.
  std::array<double, ParameterState::k_predictors> pseudo_mean{0.0, 0.0, 0.0};
  std::array<double, ParameterState::k_predictors> pseudo_sd{-1.0, -1.0, -1.0};

  void validate() const {
    if (!(coef_sd > 0.0)) throw ConfigError("coefficient prior sd must be > 0");
    if (!(prec_shape > 0.0) || !(prec_rate > 0.0) || !(tvprec_shape > 0.0) ||
        !(tvprec_rate > 0.0)) {
      throw ConfigError("precision prior shapes and rates must be > 0");
    }
    if (!(gvs_prior_inclusion > 0.0) || !(gvs_prior_inclusion < 1.0)) {
      throw ConfigError("GVS prior inclusion probability must lie in (0, 1)");
    }
  }
};

}  // namespace episir
