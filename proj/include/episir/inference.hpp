#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "episir/errors.hpp"
#include "episir/grid.hpp"
#include "episir/model.hpp"
#include "episir/rng.hpp"
#include "episir/spatial_graph.hpp"
#include "episir/state.hpp"

namespace episir {

inline constexpr double k_log_2pi = 1.8378770664093453;

// Modeled cells are (area i, day j >= 1), flattened as i*(T-1) + (j-1).
inline std::size_t cell_index(int i, int j, int n_days) {
  return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_days - 1) +
         static_cast<std::size_t>(j - 1);
}

inline std::size_t n_cells(const ModelData& data) {
  return static_cast<std::size_t>(data.n_areas) *
         static_cast<std::size_t>(data.n_days - 1);
}

// Poisson log-density in terms of log mu; overflow of exp(log mu) means a
// mean astronomically above any count, so the density is effectively -inf.
inline double poisson_logpdf_count(double y, double log_mu) {
  if (log_mu > 700.0) return -std::numeric_limits<double>::infinity();
  return y * log_mu - std::exp(log_mu) - std::lgamma(y + 1.0);
}

inline double normal_logpdf_prec(double x, double mean, double prec) {
  const double r = x - mean;
  return 0.5 * (std::log(prec) - k_log_2pi) - 0.5 * prec * r * r;
}

// Conjugate precision draw: effects ~ N(0, tau^-1) i.i.d., tau ~ Ga(a, b)
// gives tau | effects ~ Ga(a + n/2, b + SS/2).
inline double gibbs_precision_update(const std::vector<double>& effects,
                                     double shape, double rate, Rng& rng) {
  if (effects.empty()) throw EngineError("precision update needs >= 1 effect");
  double ss = 0.0;
  for (double v : effects) ss += v * v;
  return rng.gamma(shape + static_cast<double>(effects.size()) / 2.0,
                   rate + ss / 2.0);
}

// Full conditional of one ICAR effect: N(mean of neighbors, (tau_u * n_dlt)^-1).
inline std::pair<double, double> icar_conditional(const std::vector<double>& u,
                                                  const AdjacencyGraph& graph,
                                                  int i, double tau_u) {
  const auto& nbrs = graph.neighbors(i);
  if (nbrs.empty()) throw IslandArea("area has no neighbors: " + graph.area_ids[static_cast<std::size_t>(i)]);
  double mean = 0.0;
  for (int k : nbrs) mean += u[static_cast<std::size_t>(k)];
  mean /= static_cast<double>(nbrs.size());
  return {mean, tau_u * static_cast<double>(nbrs.size())};
}

// Pairwise-difference sum over unique edges: Sum_{i~k, i<k} (u_i - u_k)^2.
inline double icar_pairwise_ss(const std::vector<double>& u,
                               const AdjacencyGraph& graph) {
  double ss = 0.0;
  for (int i = 0; i < graph.n_areas(); ++i) {
    for (int k : graph.neighbors(i)) {
      if (k > i) {
        const double d = u[static_cast<std::size_t>(i)] - u[static_cast<std::size_t>(k)];
        ss += d * d;
      }
    }
  }
  return ss;
}

// Reference pointwise log-likelihood over modeled cells, computed from
// scratch; dropped cells contribute exactly 0.
inline std::vector<double> log_likelihood_pointwise(const ModelPreset& preset,
                                                    const ParameterState& state,
                                                    const ModelData& data) {
  std::vector<double> out(n_cells(data), 0.0);
  for (int i = 0; i < data.n_areas; ++i) {
    for (int j = 1; j < data.n_days; ++j) {
      const auto si = static_cast<std::size_t>(i);
      const auto sj = static_cast<std::size_t>(j);
      if (data.dropped(si, sj)) continue;
      const double lp = log_mean(preset.spec, state, data, i, j);
      const double y = data.response(si, sj);
      double ll;
      if (preset.data_model.kind == DataKind::poisson_daily) {
        ll = poisson_logpdf_count(y, lp);
      } else {
        const double tau = preset.data_model.tv_obs_precision ? state.tau_yj[sj]
                                                              : state.tau_y;
        ll = normal_logpdf_prec(y, lp, tau);
      }
      out[cell_index(i, j, data.n_days)] = ll;
    }
  }
  return out;
}

// Robbins-Monro step-size adaptation on the log scale toward a 0.44
// acceptance rate; used only during burn-in.
struct AdaptiveStep {
  double ls = -2.302585092994046;  // log(0.1)
  long long t = 0;

  double step() const { return std::exp(ls); }

  void update(double accept_prob) {
    ++t;
    ls += std::pow(static_cast<double>(t), -0.6) * (accept_prob - 0.44);
    if (!(ls > -35.0 && ls < 35.0)) {
      throw AdaptationDiverged("proposal step size diverged (log step " +
                               std::to_string(ls) + ")");
    }
  }
};

struct BlockStat {
  std::string name;
  long long proposals = 0;
  long long accepts = 0;
  void add(bool accepted) {
    ++proposals;
    if (accepted) ++accepts;
  }
  double rate() const {
    return proposals > 0 ? static_cast<double>(accepts) / static_cast<double>(proposals)
                         : 0.0;
  }
};

struct McmcControls {
  long long n_iter = 20000;
  long long burn_in = 10000;
  long long thin = 10;
  int n_chains = 2;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_iter <= 0 || burn_in < 0 || thin <= 0 || n_chains <= 0) {
      throw ConfigError("sampler controls must be positive (burn_in >= 0)");
    }
    if (burn_in >= n_iter) throw ConfigError("burn_in must be < n_iter");
  }
  long long n_retained() const { return (n_iter - burn_in) / thin; }
};

struct ChainOutput {
  std::vector<std::string> param_names;
  Grid<double> draws;             // retained x n_params
  Grid<double> pointwise_loglik;  // retained x n_cells
  Grid<double> log_mean_draws;    // retained x n_cells (0 where dropped)
  std::vector<std::pair<std::string, double>> acceptance_rates;
  std::uint64_t master_seed = 0;
  int chain_index = 0;
  long long n_iter = 0, burn_in = 0, thin = 0;
  long long dropped_cells = 0;
};

// Flattened draw layout; one column per scalar the model actually carries.
inline std::vector<std::string> parameter_names(const ModelPreset& preset,
                                                const ModelData& data) {
  const PropagatorSpec& s = preset.spec;
  std::vector<std::string> names;
  names.push_back("alpha0");
  if (s.include_self_lag) names.push_back("alpha1");
  if (s.include_neighbor_lag) names.push_back("alpha2");
  if (s.predictor_mode != PredictorMode::none) {
    for (int k = 1; k <= ParameterState::k_predictors; ++k) {
      names.push_back("theta" + std::to_string(k));
    }
  }
  if (s.predictor_mode == PredictorMode::gvs) {
    for (int k = 1; k <= ParameterState::k_predictors; ++k) {
      names.push_back("gamma" + std::to_string(k));
    }
  }
  if (s.mobility) {
    for (int p = 1; p <= data.mobility->n_periods(); ++p) {
      names.push_back("eta_" + std::to_string(p));
    }
  }
  if (s.uh_mode == UhMode::spatial) {
    for (const auto& id : data.graph->area_ids) names.push_back("v_" + id);
  }
  if (s.icar) {
    for (const auto& id : data.graph->area_ids) names.push_back("u_" + id);
  }
  if (s.uh_mode == UhMode::spatial || s.uh_mode == UhMode::spacetime) {
    names.push_back("tau_v");
  } else if (s.uh_mode == UhMode::spacetime_tvprec) {
    for (int j = 1; j < data.n_days; ++j) {
      names.push_back("tau_v_d" + std::to_string(j));
    }
  }
  if (s.icar) names.push_back("tau_u");
  if (preset.data_model.kind == DataKind::lognormal_3d) {
    if (preset.data_model.tv_obs_precision) {
      for (int j = 1; j < data.n_days; ++j) {
        names.push_back("tau_y_d" + std::to_string(j));
      }
    } else {
      names.push_back("tau_y");
    }
  }
  return names;
}

inline void flatten_state(const ParameterState& st, const ModelPreset& preset,
                          const ModelData& data, double* out) {
  const PropagatorSpec& s = preset.spec;
  std::size_t c = 0;
  out[c++] = st.alpha0;
  if (s.include_self_lag) out[c++] = st.alpha1;
  if (s.include_neighbor_lag) out[c++] = st.alpha2;
  if (s.predictor_mode != PredictorMode::none) {
    for (int k = 0; k < ParameterState::k_predictors; ++k) {
      out[c++] = st.theta[static_cast<std::size_t>(k)];
    }
  }
  if (s.predictor_mode == PredictorMode::gvs) {
    for (int k = 0; k < ParameterState::k_predictors; ++k) {
      out[c++] = static_cast<double>(st.gamma[static_cast<std::size_t>(k)]);
    }
  }
  if (s.mobility) {
    for (double e : st.eta) out[c++] = e;
  }
  if (s.uh_mode == UhMode::spatial) {
    for (int i = 0; i < data.n_areas; ++i) out[c++] = st.v[static_cast<std::size_t>(i)];
  }
  if (s.icar) {
    for (int i = 0; i < data.n_areas; ++i) out[c++] = st.u[static_cast<std::size_t>(i)];
  }
  if (s.uh_mode == UhMode::spatial || s.uh_mode == UhMode::spacetime) {
    out[c++] = st.tau_v;
  } else if (s.uh_mode == UhMode::spacetime_tvprec) {
    for (int j = 1; j < data.n_days; ++j) out[c++] = st.tau_vj[static_cast<std::size_t>(j)];
  }
  if (s.icar) out[c++] = st.tau_u;
  if (preset.data_model.kind == DataKind::lognormal_3d) {
    if (preset.data_model.tv_obs_precision) {
      for (int j = 1; j < data.n_days; ++j) out[c++] = st.tau_yj[static_cast<std::size_t>(j)];
    } else {
      out[c++] = st.tau_y;
    }
  }
}

// One-chain Metropolis-within-Gibbs engine. Keeps the log mean and pointwise
// log-likelihood cached per cell; scalar proposals shift the cache through
// each parameter's additive covariate, so an update touches only the cells
// its block enters.
class Sampler {
 public:
  Sampler(const ModelPreset& preset, const ModelData& data,
          const PriorConfig& prior, Rng& rng)
      : preset_(preset),
        spec_(preset.spec),
        data_(data),
        prior_(prior),
        rng_(rng),
        m_(data.n_areas),
        T_(data.n_days),
        cells_(n_cells(data)) {
    if (spec_.predictor_mode == PredictorMode::gvs) {
      for (int k = 0; k < ParameterState::k_predictors; ++k) {
        if (!(prior_.pseudo_sd[static_cast<std::size_t>(k)] > 0.0)) {
          throw PseudoPriorUnset("GVS pseudo-prior not tuned for predictor " +
                                 std::to_string(k + 1));
        }
      }
    }
    state_ = init_state(preset_, data_);
    initialize_coefficients();
    active_.assign(cells_, 1);
    for (int i = 0; i < m_; ++i) {
      for (int j = 1; j < T_; ++j) {
        if (data_.dropped(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) {
          active_[cell_index(i, j, T_)] = 0;
        }
      }
    }
    lp_.assign(cells_, 0.0);
    ll_.assign(cells_, 0.0);
    scratch_lp_.assign(cells_, 0.0);
    scratch_ll_.assign(cells_, 0.0);
    if (spec_.mobility) {
      cells_by_period_.resize(static_cast<std::size_t>(data_.mobility->n_periods()));
      for (int i = 0; i < m_; ++i) {
        for (int j = 1; j < T_; ++j) {
          const int p = data_.mobility->period_index[static_cast<std::size_t>(j)];
          cells_by_period_[static_cast<std::size_t>(p - 1)].push_back(cell_index(i, j, T_));
        }
      }
    }
    step_alpha0_ = AdaptiveStep{};
    step_alpha1_ = AdaptiveStep{};
    step_alpha2_ = AdaptiveStep{};
    step_theta_.assign(ParameterState::k_predictors, AdaptiveStep{});
    if (spec_.mobility) {
      step_eta_.assign(state_.eta.size(), AdaptiveStep{});
    }
    if (spec_.uh_mode == UhMode::spatial) {
      step_v_.assign(static_cast<std::size_t>(m_), AdaptiveStep{});
    } else if (uses_spacetime_v(spec_) &&
               preset_.data_model.kind == DataKind::poisson_daily) {
      step_v_.assign(state_.v.size(), AdaptiveStep{});
    }
    if (spec_.icar) step_u_.assign(static_cast<std::size_t>(m_), AdaptiveStep{});

    stats_ = {{"alpha0"}, {"alpha1"}, {"alpha2"}, {"theta"}, {"eta"}, {"v"}, {"u"}};
    refresh_cache();
    if (!std::isfinite(total_ll_)) {
      throw NonFiniteLikelihoodAtInit("log-likelihood not finite at initialization");
    }
  }

  const ParameterState& state() const { return state_; }
  ParameterState& mutable_state() { return state_; }
  double total_loglik() const { return total_ll_; }
  const std::vector<double>& pointwise() const { return ll_; }
  const std::vector<double>& log_means() const { return lp_; }

  std::vector<std::pair<std::string, double>> acceptance_rates() const {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& s : stats_) {
      if (s.proposals > 0) out.emplace_back(s.name, s.rate());
    }
    return out;
  }

  // One full sweep over all blocks, in a fixed order.
  void iterate(bool adapt) {
    update_alpha_blocks(adapt);
    update_predictors(adapt);
    update_eta(adapt);
    update_v(adapt);
    update_u(adapt);
    update_precisions();
    ++sweep_;
    if (sweep_ % 512 == 0) refresh_cache();
    total_ll_ = sum_ll();
  }

  // Recomputes the cached log means and likelihoods exactly from the state.
  void refresh_cache() {
    for (int i = 0; i < m_; ++i) {
      for (int j = 1; j < T_; ++j) {
        const std::size_t c = cell_index(i, j, T_);
        if (!active_[c]) {
          lp_[c] = 0.0;
          ll_[c] = 0.0;
          continue;
        }
        lp_[c] = log_mean(spec_, state_, data_, i, j);
        ll_[c] = cell_ll(c, lp_[c]);
      }
    }
    total_ll_ = sum_ll();
  }

 private:
  int day_of(std::size_t c) const { return static_cast<int>(c % static_cast<std::size_t>(T_ - 1)) + 1; }
  int area_of(std::size_t c) const { return static_cast<int>(c / static_cast<std::size_t>(T_ - 1)); }

  double obs_precision(std::size_t c) const {
    if (preset_.data_model.tv_obs_precision) {
      return state_.tau_yj[static_cast<std::size_t>(day_of(c))];
    }
    return state_.tau_y;
  }

  double cell_ll(std::size_t c, double lp) const {
    const double y = data_.response(static_cast<std::size_t>(area_of(c)),
                                    static_cast<std::size_t>(day_of(c)));
    if (preset_.data_model.kind == DataKind::poisson_daily) {
      return poisson_logpdf_count(y, lp);
    }
    return normal_logpdf_prec(y, lp, obs_precision(c));
  }

  double sum_ll() const {
    double s = 0.0;
    for (std::size_t c = 0; c < cells_; ++c) s += ll_[c];
    return s;
  }

  // Data-scale starting intercept keeps the initial likelihood finite on
  // real-shaped panels; everything else starts at zero / prior mean.
  void initialize_coefficients() {
    double resp = 0.0, logs = 0.0;
    long long n = 0;
    for (int i = 0; i < m_; ++i) {
      for (int j = 1; j < T_; ++j) {
        const auto si = static_cast<std::size_t>(i);
        const auto sj = static_cast<std::size_t>(j);
        if (data_.dropped(si, sj)) continue;
        resp += data_.response(si, sj);
        logs += data_.log_S(si, sj);
        ++n;
      }
    }
    if (n == 0) throw DataError("no modeled cells: susceptibles exhausted everywhere");
    resp /= static_cast<double>(n);
    logs /= static_cast<double>(n);
    if (preset_.data_model.kind == DataKind::poisson_daily) {
      state_.alpha0 = std::log(resp + 1e-8) - logs;
    } else {
      state_.alpha0 = resp - logs;  // response already on the log scale
    }
    const double prec_mean = prior_.prec_shape / prior_.prec_rate;
    const double tvprec_mean = prior_.tvprec_shape / prior_.tvprec_rate;
    state_.tau_v = prec_mean;
    state_.tau_u = prec_mean;
    state_.tau_y = prec_mean;
    for (auto& t : state_.tau_vj) t = tvprec_mean;
    for (auto& t : state_.tau_yj) t = tvprec_mean;
  }

  // Generic scalar random-walk update over the cells a parameter enters,
  // with an additive covariate z(c) and a Normal(mean, prec) prior.
  template <typename CellsFn, typename ZFn>
  void scalar_mh(double& param, AdaptiveStep& st, double prior_mean,
                 double prior_prec, CellsFn&& for_each_cell, ZFn&& z,
                 BlockStat& stat, bool adapt) {
    const double delta = st.step() * rng_.normal(0.0, 1.0);
    const double proposed = param + delta;
    double dll = 0.0;
    scratch_cells_.clear();
    for_each_cell([&](std::size_t c) {
      if (!active_[c]) return;
      const double nlp = lp_[c] + delta * z(c);
      const double nll = cell_ll(c, nlp);
      scratch_lp_[c] = nlp;
      scratch_ll_[c] = nll;
      scratch_cells_.push_back(c);
      dll += nll - ll_[c];
    });
    const double dp = proposed - prior_mean;
    const double cur = param - prior_mean;
    const double logr = dll - 0.5 * prior_prec * (dp * dp - cur * cur);
    double accept_prob;
    if (std::isnan(logr)) {
      accept_prob = 0.0;
    } else {
      accept_prob = logr >= 0.0 ? 1.0 : std::exp(logr);
    }
    const bool accepted = rng_.uniform() < accept_prob;
    if (accepted) {
      for (std::size_t c : scratch_cells_) {
        lp_[c] = scratch_lp_[c];
        ll_[c] = scratch_ll_[c];
      }
      param = proposed;
    }
    stat.add(accepted);
    if (adapt) st.update(accept_prob);
  }

  void update_alpha_blocks(bool adapt) {
    const double cprec = 1.0 / (prior_.coef_sd * prior_.coef_sd);
    auto all = [this](auto&& f) {
      for (std::size_t c = 0; c < cells_; ++c) f(c);
    };
    scalar_mh(state_.alpha0, step_alpha0_, 0.0, cprec, all,
              [](std::size_t) { return 1.0; }, stats_[0], adapt);
    if (spec_.include_self_lag) {
      scalar_mh(state_.alpha1, step_alpha1_, 0.0, cprec, all,
                [this](std::size_t c) {
                  return data_.lag_self(static_cast<std::size_t>(area_of(c)),
                                        static_cast<std::size_t>(day_of(c)));
                },
                stats_[1], adapt);
    }
    if (spec_.include_neighbor_lag) {
      scalar_mh(state_.alpha2, step_alpha2_, 0.0, cprec, all,
                [this](std::size_t c) {
                  return data_.lag_nb(static_cast<std::size_t>(area_of(c)),
                                      static_cast<std::size_t>(day_of(c)));
                },
                stats_[2], adapt);
    }
  }

  void update_predictors(bool adapt) {
    if (spec_.predictor_mode == PredictorMode::none) return;
    const double cprec = 1.0 / (prior_.coef_sd * prior_.coef_sd);
    auto all = [this](auto&& f) {
      for (std::size_t c = 0; c < cells_; ++c) f(c);
    };
    for (int k = 0; k < ParameterState::k_predictors; ++k) {
      const auto sk = static_cast<std::size_t>(k);
      if (spec_.predictor_mode == PredictorMode::gvs) update_gamma(k);
      if (state_.gamma[sk] == 1) {
        scalar_mh(state_.theta[sk], step_theta_[sk], 0.0, cprec, all,
                  [this, k](std::size_t c) { return data_.x(area_of(c), k); },
                  stats_[3], adapt);
      } else {
        // With gamma_k = 0 the likelihood is flat in theta_k: sample the
        // pseudo-prior exactly.
        state_.theta[sk] = prior_.pseudo_mean[sk] +
                           prior_.pseudo_sd[sk] * rng_.normal(0.0, 1.0);
      }
    }
  }

  // Bernoulli full conditional for gamma_k: odds weigh the likelihood with
  // the term in vs out, the real prior vs the pseudo-prior at the current
  // theta_k, and the prior inclusion probability.
  void update_gamma(int k) {
    const auto sk = static_cast<std::size_t>(k);
    const double theta = state_.theta[sk];
    const double sign = state_.gamma[sk] == 1 ? -1.0 : 1.0;  // toggle direction
    double ll_other = 0.0;
    scratch_cells_.clear();
    for (std::size_t c = 0; c < cells_; ++c) {
      if (!active_[c]) continue;
      const double nlp = lp_[c] + sign * theta * data_.x(area_of(c), k);
      const double nll = cell_ll(c, nlp);
      scratch_lp_[c] = nlp;
      scratch_ll_[c] = nll;
      scratch_cells_.push_back(c);
      ll_other += nll;
    }
    double ll_in, ll_out;
    const double ll_cur = sum_ll();
    if (state_.gamma[sk] == 1) {
      ll_in = ll_cur;
      ll_out = ll_other;
    } else {
      ll_in = ll_other;
      ll_out = ll_cur;
    }
    const double cprec = 1.0 / (prior_.coef_sd * prior_.coef_sd);
    const double pseudo_prec =
        1.0 / (prior_.pseudo_sd[sk] * prior_.pseudo_sd[sk]);
    const double p = prior_.gvs_prior_inclusion;
    const double log_odds = (ll_in + normal_logpdf_prec(theta, 0.0, cprec) +
                             std::log(p)) -
                            (ll_out +
                             normal_logpdf_prec(theta, prior_.pseudo_mean[sk],
                                                pseudo_prec) +
                             std::log(1.0 - p));
    double p_in;
    if (log_odds > 35.0) {
      p_in = 1.0;
    } else if (log_odds < -35.0) {
      p_in = 0.0;
    } else {
      p_in = 1.0 / (1.0 + std::exp(-log_odds));
    }
    const int new_gamma = rng_.uniform() < p_in ? 1 : 0;
    if (new_gamma != state_.gamma[sk]) {
      for (std::size_t c : scratch_cells_) {
        lp_[c] = scratch_lp_[c];
        ll_[c] = scratch_ll_[c];
      }
      state_.gamma[sk] = new_gamma;
    }
  }

  void update_eta(bool adapt) {
    if (!spec_.mobility) return;
    const double cprec = 1.0 / (prior_.coef_sd * prior_.coef_sd);
    for (std::size_t p = 0; p < state_.eta.size(); ++p) {
      auto period_cells = [this, p](auto&& f) {
        for (std::size_t c : cells_by_period_[p]) f(c);
      };
      scalar_mh(state_.eta[p], step_eta_[p], 0.0, cprec, period_cells,
                [this](std::size_t c) {
                  return data_.mobility->work(static_cast<std::size_t>(area_of(c)),
                                              static_cast<std::size_t>(day_of(c)));
                },
                stats_[4], adapt);
    }
  }

  void update_v(bool adapt) {
    if (spec_.uh_mode == UhMode::none) return;
    if (spec_.uh_mode == UhMode::spatial) {
      for (int i = 0; i < m_; ++i) {
        const auto si = static_cast<std::size_t>(i);
        auto area_cells = [this, i](auto&& f) {
          const std::size_t lo = cell_index(i, 1, T_);
          for (std::size_t c = lo; c < lo + static_cast<std::size_t>(T_ - 1); ++c) f(c);
        };
        scalar_mh(state_.v[si], step_v_[si], 0.0, state_.tau_v, area_cells,
                  [](std::size_t) { return 1.0; }, stats_[5], adapt);
      }
      return;
    }
    // space-time v_ij
    const bool lognormal = preset_.data_model.kind == DataKind::lognormal_3d;
    for (int i = 0; i < m_; ++i) {
      for (int j = 1; j < T_; ++j) {
        const std::size_t vc = static_cast<std::size_t>(i) * static_cast<std::size_t>(T_) +
                               static_cast<std::size_t>(j);
        const double prior_prec = spec_.uh_mode == UhMode::spacetime_tvprec
                                      ? state_.tau_vj[static_cast<std::size_t>(j)]
                                      : state_.tau_v;
        const std::size_t c = cell_index(i, j, T_);
        if (!active_[c]) {
          // no likelihood term: exact draw from the prior
          state_.v[vc] = rng_.normal(0.0, 1.0 / std::sqrt(prior_prec));
          continue;
        }
        if (lognormal) {
          // conjugate Normal full conditional
          const double tau_obs = obs_precision(c);
          const double base = lp_[c] - state_.v[vc];
          const double resid = data_.response(static_cast<std::size_t>(i),
                                              static_cast<std::size_t>(j)) -
                               base;
          const double post_prec = tau_obs + prior_prec;
          const double post_mean = tau_obs * resid / post_prec;
          state_.v[vc] = post_mean + rng_.normal(0.0, 1.0 / std::sqrt(post_prec));
          lp_[c] = base + state_.v[vc];
          ll_[c] = cell_ll(c, lp_[c]);
        } else {
          auto one_cell = [c](auto&& f) { f(c); };
          scalar_mh(state_.v[vc], step_v_[vc], 0.0, prior_prec, one_cell,
                    [](std::size_t) { return 1.0; }, stats_[5], adapt);
        }
      }
    }
  }

  void update_u(bool adapt) {
    if (!spec_.icar) return;
    for (int i = 0; i < m_; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const auto [cmean, cprec] = icar_conditional(state_.u, *data_.graph, i, state_.tau_u);
      auto area_cells = [this, i](auto&& f) {
        const std::size_t lo = cell_index(i, 1, T_);
        for (std::size_t c = lo; c < lo + static_cast<std::size_t>(T_ - 1); ++c) f(c);
      };
      scalar_mh(state_.u[si], step_u_[si], cmean, cprec, area_cells,
                [](std::size_t) { return 1.0; }, stats_[6], adapt);
    }
    // Sum-to-zero centering; the mean moves into the intercept, so every
    // cell's log mean (and the likelihood) is untouched.
    double mean_u = 0.0;
    for (double u : state_.u) mean_u += u;
    mean_u /= static_cast<double>(state_.u.size());
    for (double& u : state_.u) u -= mean_u;
    state_.alpha0 += mean_u;
  }

  void update_precisions() {
    if (spec_.uh_mode == UhMode::spatial) {
      state_.tau_v = gibbs_precision_update(state_.v, prior_.prec_shape,
                                            prior_.prec_rate, rng_);
    } else if (spec_.uh_mode == UhMode::spacetime) {
      double ss = 0.0;
      long long n = 0;
      for (int i = 0; i < m_; ++i) {
        for (int j = 1; j < T_; ++j) {
          const double v = state_.v[static_cast<std::size_t>(i) * static_cast<std::size_t>(T_) +
                                    static_cast<std::size_t>(j)];
          ss += v * v;
          ++n;
        }
      }
      state_.tau_v = rng_.gamma(prior_.prec_shape + static_cast<double>(n) / 2.0,
                                prior_.prec_rate + ss / 2.0);
    } else if (spec_.uh_mode == UhMode::spacetime_tvprec) {
      for (int j = 1; j < T_; ++j) {
        double ss = 0.0;
        for (int i = 0; i < m_; ++i) {
          const double v = state_.v[static_cast<std::size_t>(i) * static_cast<std::size_t>(T_) +
                                    static_cast<std::size_t>(j)];
          ss += v * v;
        }
        state_.tau_vj[static_cast<std::size_t>(j)] =
            rng_.gamma(prior_.tvprec_shape + static_cast<double>(m_) / 2.0,
                       prior_.tvprec_rate + ss / 2.0);
      }
    }
    if (spec_.icar) {
      // ICAR precision: rank n - (number of connected components)
      const double ss = icar_pairwise_ss(state_.u, *data_.graph);
      const double rank = static_cast<double>(m_ - data_.graph->component_count());
      state_.tau_u = rng_.gamma(prior_.prec_shape + rank / 2.0,
                                prior_.prec_rate + ss / 2.0);
    }
    if (preset_.data_model.kind == DataKind::lognormal_3d) {
      if (preset_.data_model.tv_obs_precision) {
        for (int j = 1; j < T_; ++j) {
          double ss = 0.0;
          long long n = 0;
          for (int i = 0; i < m_; ++i) {
            const std::size_t c = cell_index(i, j, T_);
            if (!active_[c]) continue;
            const double r = data_.response(static_cast<std::size_t>(i),
                                            static_cast<std::size_t>(j)) -
                             lp_[c];
            ss += r * r;
            ++n;
          }
          if (n == 0) {
            state_.tau_yj[static_cast<std::size_t>(j)] =
                rng_.gamma(prior_.tvprec_shape, prior_.tvprec_rate);
          } else {
            state_.tau_yj[static_cast<std::size_t>(j)] =
                rng_.gamma(prior_.tvprec_shape + static_cast<double>(n) / 2.0,
                           prior_.tvprec_rate + ss / 2.0);
          }
        }
      } else {
        double ss = 0.0;
        long long n = 0;
        for (std::size_t c = 0; c < cells_; ++c) {
          if (!active_[c]) continue;
          const double r = data_.response(static_cast<std::size_t>(area_of(c)),
                                          static_cast<std::size_t>(day_of(c))) -
                           lp_[c];
          ss += r * r;
          ++n;
        }
        state_.tau_y = rng_.gamma(prior_.prec_shape + static_cast<double>(n) / 2.0,
                                  prior_.prec_rate + ss / 2.0);
      }
      // observation precision changed: every cached likelihood moves
      for (std::size_t c = 0; c < cells_; ++c) {
        if (active_[c]) ll_[c] = cell_ll(c, lp_[c]);
      }
    }
  }

  const ModelPreset& preset_;
  const PropagatorSpec& spec_;
  const ModelData& data_;
  const PriorConfig& prior_;
  Rng& rng_;
  int m_, T_;
  std::size_t cells_;
  ParameterState state_;
  std::vector<char> active_;
  std::vector<double> lp_, ll_, scratch_lp_, scratch_ll_;
  std::vector<std::size_t> scratch_cells_;
  std::vector<std::vector<std::size_t>> cells_by_period_;
  double total_ll_ = 0.0;
  long long sweep_ = 0;

  AdaptiveStep step_alpha0_, step_alpha1_, step_alpha2_;
  std::vector<AdaptiveStep> step_theta_, step_eta_, step_v_, step_u_;
  std::vector<BlockStat> stats_;
};

// Short fixed-predictor pilot; its theta posteriors become the GVS
// pseudo-priors, keeping them near each predictor's conditional posterior.
inline void tune_pseudo_priors(const ModelPreset& preset, const ModelData& data,
                               PriorConfig& prior, std::uint64_t master_seed) {
  ModelPreset pilot_preset = preset;
  pilot_preset.spec.predictor_mode = PredictorMode::fixed;
  Rng rng = Rng::substream(master_seed, 0x70696c6f74ULL);  // dedicated stream
  Sampler pilot(pilot_preset, data, prior, rng);
  constexpr long long k_pilot_iter = 2000, k_pilot_burn = 1000;
  std::vector<std::vector<double>> theta_draws(ParameterState::k_predictors);
  for (long long t = 1; t <= k_pilot_iter; ++t) {
    pilot.iterate(t <= k_pilot_burn);
    if (t > k_pilot_burn) {
      for (int k = 0; k < ParameterState::k_predictors; ++k) {
        theta_draws[static_cast<std::size_t>(k)].push_back(
            pilot.state().theta[static_cast<std::size_t>(k)]);
      }
    }
  }
  for (int k = 0; k < ParameterState::k_predictors; ++k) {
    const auto& d = theta_draws[static_cast<std::size_t>(k)];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(d.size());
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(d.size() - 1));
    prior.pseudo_mean[static_cast<std::size_t>(k)] = mean;
    prior.pseudo_sd[static_cast<std::size_t>(k)] = std::max(sd, 1e-3);
  }
}

inline std::vector<ChainOutput> mcmc_run(const ModelPreset& preset,
                                         const ModelData& data,
                                         PriorConfig prior,
                                         const McmcControls& controls) {
  controls.validate();
  prior.validate();
  if (preset.spec.predictor_mode == PredictorMode::gvs &&
      !(prior.pseudo_sd[0] > 0.0)) {
    tune_pseudo_priors(preset, data, prior, controls.seed);
  }
  const std::vector<std::string> names = parameter_names(preset, data);
  const long long retained = controls.n_retained();
  std::vector<ChainOutput> chains;
  chains.reserve(static_cast<std::size_t>(controls.n_chains));
  for (int ch = 0; ch < controls.n_chains; ++ch) {
    Rng rng = Rng::substream(controls.seed, static_cast<std::uint64_t>(ch) + 1);
    Sampler sampler(preset, data, prior, rng);
    ChainOutput out;
    out.param_names = names;
    out.draws = Grid<double>(static_cast<std::size_t>(retained), names.size());
    out.pointwise_loglik =
        Grid<double>(static_cast<std::size_t>(retained), n_cells(data));
    out.log_mean_draws =
        Grid<double>(static_cast<std::size_t>(retained), n_cells(data));
    out.master_seed = controls.seed;
    out.chain_index = ch;
    out.n_iter = controls.n_iter;
    out.burn_in = controls.burn_in;
    out.thin = controls.thin;
    out.dropped_cells = data.dropped_cells;
    long long row = 0;
    for (long long t = 1; t <= controls.n_iter; ++t) {
      sampler.iterate(t <= controls.burn_in);
      if (t > controls.burn_in && (t - controls.burn_in) % controls.thin == 0 &&
          row < retained) {
        flatten_state(sampler.state(), preset, data,
                      &out.draws(static_cast<std::size_t>(row), 0));
        const std::vector<double>& pw = sampler.pointwise();
        const std::vector<double>& lm = sampler.log_means();
        for (std::size_t c = 0; c < pw.size(); ++c) {
          out.pointwise_loglik(static_cast<std::size_t>(row), c) = pw[c];
          out.log_mean_draws(static_cast<std::size_t>(row), c) = lm[c];
        }
        ++row;
      }
    }
    out.acceptance_rates = sampler.acceptance_rates();
    chains.push_back(std::move(out));
  }
  return chains;
}

}  // namespace episir
