#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "episir/data.hpp"
#include "episir/dates.hpp"
#include "episir/errors.hpp"
#include "episir/model.hpp"
#include "episir/rng.hpp"
#include "episir/spatial_graph.hpp"
#include "episir/state.hpp"

namespace episir {

// Ground-truth generator settings. Random effects are either supplied in
// true_state or (draw_effects) drawn once from their priors at the
// true_state precisions and recorded for recovery scoring.
struct SimScenario {
  const AdjacencyGraph* graph = nullptr;
  int n_days = 0;
  SerialDay start_date = days_from_civil(2020, 3, 6);
  std::vector<long long> population;
  std::vector<long long> seed_infections;  // y_{i,0}
  ParameterState true_state;
  ModelPreset model;
  double lambda = 0.0;
  double death_rate = 0.0;  // deaths(j) ~ Binomial(cases(j - death_lag), rate)
  int death_lag = 7;
  bool draw_effects = false;
  const PredictorTable* predictors = nullptr;
  const MobilityPanel* mobility = nullptr;

  void validate() const {
    if (graph == nullptr) throw ConfigError("simulation scenario needs a graph");
    if (n_days < 2) throw ConfigError("simulation needs n_days >= 2");
    const auto m = static_cast<std::size_t>(graph->n_areas());
    if (population.size() != m || seed_infections.size() != m) {
      throw LengthMismatch("population/seed_infections must have one entry per area");
    }
    for (long long p : population) {
      if (p <= 0) throw ConfigError("simulated populations must be positive");
    }
    for (long long y : seed_infections) {
      if (y < 0) throw ConfigError("seed infections must be >= 0");
    }
    if (lambda < 0.0) throw NegativeLambda("asymptomatic multiplier must be >= 0");
    if (death_rate < 0.0 || death_rate > 1.0) {
      throw ConfigError("death rate must lie in [0, 1]");
    }
    if (model.spec.predictor_mode != PredictorMode::none && predictors == nullptr) {
      throw ConfigError("scenario model needs a predictor table");
    }
    if (model.spec.mobility &&
        (mobility == nullptr || mobility->n_days() < n_days)) {
      throw ConfigError("scenario model needs a mobility panel covering n_days");
    }
  }
};

struct SimResult {
  CaseSeriesPanel panel;
  ParameterState realized;           // effects actually used
  bool depleted_everywhere = false;  // all susceptibles hit 0 before J/2
};

namespace detail {

// i.i.d. surrogate draw for ICAR effects, centered to sum zero; the ICAR
// joint is improper so a proper stand-in is used for scenario generation.
inline void draw_centered_normal(std::vector<double>& u, double tau, Rng& rng) {
  const double sd = 1.0 / std::sqrt(tau);
  double mean = 0.0;
  for (double& x : u) {
    x = rng.normal(0.0, sd);
    mean += x;
  }
  mean /= static_cast<double>(u.size());
  for (double& x : u) x -= mean;
}

}  // namespace detail

// Forward generation: day 0 is the seed, then for j = 1..J-1 the
// susceptibles follow the accounting equation on the simulated history, the
// mean comes from the propagator at the true parameters, and counts are
// drawn Poisson (or lognormal for 3-day-average scenarios, with the drawn
// series standing in for the smoothed data).
inline SimResult simulate_panel(const SimScenario& scenario, Rng& rng) {
  scenario.validate();
  const AdjacencyGraph& graph = *scenario.graph;
  const int m = graph.n_areas();
  const int J = scenario.n_days;
  const auto sm = static_cast<std::size_t>(m);
  const auto sJ = static_cast<std::size_t>(J);
  const bool lognormal = scenario.model.data_model.kind == DataKind::lognormal_3d;

  SimResult out;
  out.realized = scenario.true_state;
  ParameterState& st = out.realized;
  // size any unsupplied effect vectors
  {
    ParameterState shape;
    ModelData probe;  // only extents are needed for init_state
    probe.n_areas = m;
    probe.n_days = J;
    probe.mobility = scenario.mobility;
    shape = init_state(scenario.model, probe);
    if (st.v.size() != shape.v.size()) st.v = shape.v;
    if (st.u.size() != shape.u.size()) st.u = shape.u;
    if (st.eta.size() != shape.eta.size()) st.eta = shape.eta;
    if (st.tau_vj.size() != shape.tau_vj.size()) {
      st.tau_vj.assign(shape.tau_vj.size(), st.tau_v);
    }
    if (st.tau_yj.size() != shape.tau_yj.size()) {
      st.tau_yj.assign(shape.tau_yj.size(), st.tau_y);
    }
  }
  if (scenario.draw_effects) {
    // fill in only the effects the scenario left unspecified (all-zero)
    const auto unset = [](const std::vector<double>& x) {
      for (double e : x) {
        if (e != 0.0) return false;
      }
      return true;
    };
    const PropagatorSpec& s = scenario.model.spec;
    if (s.uh_mode == UhMode::spatial && unset(st.v)) {
      const double sd = 1.0 / std::sqrt(st.tau_v);
      for (double& v : st.v) v = rng.normal(0.0, sd);
    } else if (uses_spacetime_v(s) && unset(st.v)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 1; j < J; ++j) {
          const double tau = s.uh_mode == UhMode::spacetime_tvprec
                                 ? st.tau_vj[static_cast<std::size_t>(j)]
                                 : st.tau_v;
          st.v[static_cast<std::size_t>(i) * sJ + static_cast<std::size_t>(j)] =
              rng.normal(0.0, 1.0 / std::sqrt(tau));
        }
      }
    }
    if (s.icar && unset(st.u)) detail::draw_centered_normal(st.u, st.tau_u, rng);
  }

  CaseSeriesPanel& panel = out.panel;
  panel.area_ids = graph.area_ids;
  panel.population = scenario.population;
  panel.dates.resize(sJ);
  for (int j = 0; j < J; ++j) panel.dates[static_cast<std::size_t>(j)] = scenario.start_date + j;
  panel.cases = Grid<long long>(sm, sJ, 0);
  panel.deaths = Grid<long long>(sm, sJ, 0);
  for (int i = 0; i < m; ++i) {
    panel.cases(static_cast<std::size_t>(i), 0) = scenario.seed_infections[static_cast<std::size_t>(i)];
  }

  // evaluation bundle filled day by day as history accrues
  ModelData d;
  d.graph = &graph;
  d.n_areas = m;
  d.n_days = J;
  d.count = Grid<double>(sm, sJ, 0.0);
  d.response = Grid<double>(sm, sJ, 0.0);
  d.log_S = Grid<double>(sm, sJ, 0.0);
  d.dropped = Grid<char>(sm, sJ, 0);
  d.lag_self = Grid<double>(sm, sJ, 0.0);
  d.lag_nb = Grid<double>(sm, sJ, 0.0);
  d.predictors = scenario.predictors;
  d.mobility = scenario.mobility;

  std::vector<double> S(sm);
  for (int i = 0; i < m; ++i) {
    const auto si = static_cast<std::size_t>(i);
    S[si] = static_cast<double>(scenario.population[si]);
    d.log_S(si, 0) = std::log(S[si]);
    d.count(si, 0) = static_cast<double>(panel.cases(si, 0));
  }

  for (int j = 1; j < J; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    // lagged death stream feeds the accounting equation as removals
    if (scenario.death_rate > 0.0 && j - 1 >= scenario.death_lag) {
      for (int i = 0; i < m; ++i) {
        const auto si = static_cast<std::size_t>(i);
        const long long at_risk =
            panel.cases(si, sj - 1 - static_cast<std::size_t>(scenario.death_lag));
        panel.deaths(si, sj - 1) = rng.binomial(at_risk, scenario.death_rate);
      }
    }
    int depleted = 0;
    for (int i = 0; i < m; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const double drained =
          (1.0 + scenario.lambda) * static_cast<double>(panel.cases(si, sj - 1)) +
          static_cast<double>(panel.deaths(si, sj - 1));
      S[si] = std::max(0.0, S[si] - drained);
      if (S[si] > 0.0) {
        d.log_S(si, sj) = std::log(S[si]);
      } else {
        d.dropped(si, sj) = 1;
        ++depleted;
      }
      d.lag_self(si, sj) = std::log(d.count(si, sj - 1) + 1.0);
      double nb = 0.0;
      for (int k : graph.neighbors(i)) {
        nb += d.count(static_cast<std::size_t>(k), sj - 1);
      }
      d.lag_nb(si, sj) = std::log(1.0 + nb);
    }
    if (depleted == m && j < J / 2) out.depleted_everywhere = true;
    for (int i = 0; i < m; ++i) {
      const auto si = static_cast<std::size_t>(i);
      if (d.dropped(si, sj)) {
        panel.cases(si, sj) = 0;  // no susceptibles left to infect
        d.count(si, sj) = 0.0;
        continue;
      }
      const double lp = log_mean(scenario.model.spec, st, d, i, j);
      double value;
      if (lognormal) {
        const double tau = scenario.model.data_model.tv_obs_precision
                               ? st.tau_yj[sj]
                               : st.tau_y;
        const double ystar = rng.normal(lp, 1.0 / std::sqrt(tau));
        value = std::max(0.0, std::exp(ystar) - 1.0);
        if (value > 10.0 * S[si]) {
          throw ExplosiveTrajectory("simulated mean exceeds 10x susceptibles at day " +
                                    std::to_string(j));
        }
      } else {
        const double mu = std::exp(lp);
        if (mu > 10.0 * S[si]) {
          throw ExplosiveTrajectory("simulated mean exceeds 10x susceptibles at day " +
                                    std::to_string(j));
        }
        value = static_cast<double>(rng.poisson(mu));
      }
      panel.cases(si, sj) = std::llround(value);
      d.count(si, sj) = static_cast<double>(panel.cases(si, sj));
    }
  }
  return out;
}

}  // namespace episir
