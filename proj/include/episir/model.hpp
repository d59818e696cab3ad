#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "episir/data.hpp"
#include "episir/errors.hpp"
#include "episir/grid.hpp"
#include "episir/spatial_graph.hpp"
#include "episir/state.hpp"

namespace episir {

enum class UhMode { none, spatial, spacetime, spacetime_tvprec };
enum class PredictorMode { none, fixed, gvs };

// Term structure of the propagator p^r_{i,j-1}. The intercept is always
// present.
struct PropagatorSpec {
  bool include_self_lag = true;
  bool include_neighbor_lag = false;
  UhMode uh_mode = UhMode::none;
  bool icar = false;
  PredictorMode predictor_mode = PredictorMode::none;
  bool mobility = false;
};

enum class DataKind { poisson_daily, lognormal_3d };

struct DataModelKind {
  DataKind kind = DataKind::poisson_daily;
  bool tv_obs_precision = false;  // per-day tau_yj; lognormal only
};

struct ModelPreset {
  std::string name;
  PropagatorSpec spec;
  DataModelKind data_model;
  // Mobility-family presets (even the variant without the eta*w term) model
  // only the change-point window, so their fits stay WAIC-comparable.
  bool mobility_window = false;
};

inline bool uses_spacetime_v(const PropagatorSpec& s) {
  return s.uh_mode == UhMode::spacetime || s.uh_mode == UhMode::spacetime_tvprec;
}

// Catalog of the fitted model variants. Daily Poisson count models:
//   1    self-lag + v_i + u_i (convolution)
//   2A   self-lag + v_i
//   2B   2A + fixed deprivation predictors
//   3A   2A + GVS deprivation predictors
//   3B   1  + GVS deprivation predictors
//   4A   self-lag + neighbor-lag + v_i + u_i + GVS predictors
//   4B   self-lag + neighbor-lag + v_i + GVS predictors
//   4C   self-lag + neighbor-lag + v_i
//   5A   4C + fixed predictors
//   5B   5A + u_i
//   6A   5B with v_ij in place of v_i
//   6B   6A with per-day precision tau_vj
// Lognormal models for 3-day averaged counts:
//   3D-1 self-lag + u_i
//   3D-2 self-lag + v_i + u_i
//   3D-3 self-lag + u_i + v_ij
//   3D-4 3D-3 with per-day observation precision tau_yj
//   3D-5 self-lag + v_i + fixed predictors
//   3D-6 3D-5 + neighbor-lag
// Mobility change-point models (daily Poisson):
//   mobility-1 self-lag + neighbor-lag + v_i + fixed predictors + eta*w
//   mobility-2 mobility-1 minus the mobility term
//   mobility-3 mobility-1 minus the neighbor lag
inline ModelPreset catalog(const std::string& requested) {
  // "SC-5A" / "NJ-5B" style labels alias the bare catalog name.
  std::string name = requested;
  if (name.rfind("SC-", 0) == 0 || name.rfind("NJ-", 0) == 0) name = name.substr(3);

  ModelPreset p;
  p.name = name;
  PropagatorSpec& s = p.spec;

  if (name == "1") {
    s.uh_mode = UhMode::spatial;
    s.icar = true;
  } else if (name == "2A") {
    s.uh_mode = UhMode::spatial;
  } else if (name == "2B") {
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "3A") {
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::gvs;
  } else if (name == "3B") {
    s.uh_mode = UhMode::spatial;
    s.icar = true;
    s.predictor_mode = PredictorMode::gvs;
  } else if (name == "4A") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.icar = true;
    s.predictor_mode = PredictorMode::gvs;
  } else if (name == "4B") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::gvs;
  } else if (name == "4C") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
  } else if (name == "5A") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "5B") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.icar = true;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "6A") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spacetime;
    s.icar = true;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "6B") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spacetime_tvprec;
    s.icar = true;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "3D-1") {
    p.data_model.kind = DataKind::lognormal_3d;
    s.icar = true;
  } else if (name == "3D-2") {
    p.data_model.kind = DataKind::lognormal_3d;
    s.uh_mode = UhMode::spatial;
    s.icar = true;
  } else if (name == "3D-3") {
    p.data_model.kind = DataKind::lognormal_3d;
    s.uh_mode = UhMode::spacetime;
    s.icar = true;
  } else if (name == "3D-4") {
    p.data_model.kind = DataKind::lognormal_3d;
    p.data_model.tv_obs_precision = true;
    s.uh_mode = UhMode::spacetime;
    s.icar = true;
  } else if (name == "3D-5") {
    p.data_model.kind = DataKind::lognormal_3d;
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "3D-6") {
    p.data_model.kind = DataKind::lognormal_3d;
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
  } else if (name == "mobility-1") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
    s.mobility = true;
    p.mobility_window = true;
  } else if (name == "mobility-2") {
    s.include_neighbor_lag = true;
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
    p.mobility_window = true;
  } else if (name == "mobility-3") {
    s.uh_mode = UhMode::spatial;
    s.predictor_mode = PredictorMode::fixed;
    s.mobility = true;
    p.mobility_window = true;
  } else {
    throw UnknownPreset("unknown model preset '" + requested + "'");
  }
  return p;
}

inline std::vector<std::string> catalog_names() {
  return {"1",    "2A",   "2B",   "3A",   "3B",   "4A",   "4B",
          "4C",   "5A",   "5B",   "6A",   "6B",   "3D-1", "3D-2",
          "3D-3", "3D-4", "3D-5", "3D-6", "mobility-1", "mobility-2",
          "mobility-3"};
}

// Everything the propagator reads at a cell, precomputed from immutable
// inputs. `count` is on the modeling scale: raw daily counts for the Poisson
// model, 3-day averages for the lognormal one. Susceptibles always follow the
// daily accounting equation. Cells with S=0 are dropped from the likelihood.
struct ModelData {
  const AdjacencyGraph* graph = nullptr;
  int n_areas = 0;
  int n_days = 0;

  Grid<double> count;     // y on the modeling scale
  Grid<double> response;  // poisson: y_ij; lognormal: log(y3d_ij + 1)
  Grid<double> log_S;     // log susceptibles (dropped cells hold 0)
  Grid<char> dropped;     // 1 where S_ij = 0

  Grid<double> lag_self;  // log(count_{i,j-1} + 1), column 0 unused
  Grid<double> lag_nb;    // log(1 + sum_{k in delta_i} count_{k,j-1})

  const PredictorTable* predictors = nullptr;
  const MobilityPanel* mobility = nullptr;

  long long dropped_cells = 0;

  double x(int i, int k) const {
    return predictors->standardized(static_cast<std::size_t>(i),
                                    static_cast<std::size_t>(k));
  }
};

// Builds the evaluation bundle over days [0, n_days_used). Mobility models
// restrict the window to the change-point segmentation's total length so
// every modeled day has a period index.
inline ModelData build_model_data(const ModelPreset& preset,
                                  const CaseSeriesPanel& panel,
                                  const AdjacencyGraph& graph, double lambda,
                                  const PredictorTable* predictors,
                                  const MobilityPanel* mobility) {
  if (static_cast<int>(graph.n_areas()) != panel.n_areas()) {
    throw LengthMismatch("adjacency graph and panel disagree on area count");
  }
  const PropagatorSpec& s = preset.spec;
  if (s.predictor_mode != PredictorMode::none && predictors == nullptr) {
    throw ConfigError("preset '" + preset.name + "' needs a predictor table");
  }
  if ((s.mobility || preset.mobility_window) && mobility == nullptr) {
    throw ConfigError("preset '" + preset.name + "' needs a mobility panel");
  }
  if (s.icar) {
    for (int i = 0; i < graph.n_areas(); ++i) {
      if (graph.n_neighbors(i) == 0) {
        throw IslandArea("area '" + graph.area_ids[static_cast<std::size_t>(i)] +
                         "' has no neighbors; the spatial smoothing term needs a "
                         "connected map");
      }
    }
  }

  ModelData d;
  d.graph = &graph;
  d.n_areas = panel.n_areas();
  d.n_days = panel.n_days();
  if (preset.mobility_window) {
    d.n_days = std::min(d.n_days, mobility->n_days());
    if (d.n_days < 2) throw TooShortSeries("mobility window shorter than 2 days");
  }
  const auto m = static_cast<std::size_t>(d.n_areas);
  const auto T = static_cast<std::size_t>(d.n_days);

  d.count = Grid<double>(m, T);
  if (preset.data_model.kind == DataKind::lognormal_3d) {
    SmoothedPanel sm = three_day_average(panel);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < T; ++j) d.count(i, j) = sm.values(i, j);
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < T; ++j) {
        d.count(i, j) = static_cast<double>(panel.cases(i, j));
      }
    }
  }

  d.response = Grid<double>(m, T);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      d.response(i, j) = preset.data_model.kind == DataKind::lognormal_3d
                             ? std::log(d.count(i, j) + 1.0)
                             : d.count(i, j);
    }
  }

  SusceptibleTrajectory st = susceptible_trajectory(panel, lambda);
  d.log_S = Grid<double>(m, T, 0.0);
  d.dropped = Grid<char>(m, T, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      if (st.S(i, j) > 0.0) {
        d.log_S(i, j) = std::log(st.S(i, j));
      } else {
        d.dropped(i, j) = 1;
        if (j >= 1) ++d.dropped_cells;  // day 0 is conditioned on, not modeled
      }
    }
  }

  d.lag_self = Grid<double>(m, T, 0.0);
  d.lag_nb = Grid<double>(m, T, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 1; j < T; ++j) {
      d.lag_self(i, j) = std::log(d.count(i, j - 1) + 1.0);
      double nb = 0.0;
      for (int k : graph.neighbors(static_cast<int>(i))) {
        nb += d.count(static_cast<std::size_t>(k), j - 1);
      }
      d.lag_nb(i, j) = std::log(1.0 + nb);
    }
  }

  d.predictors = predictors;
  d.mobility = mobility;
  return d;
}

// log mu_ij = log S_ij + alpha0 [+ alpha1*lag + alpha2*nb-lag + x'beta
// + v + u + eta_{tch[j]}*w_ij], each bracketed term gated by the preset.
// Day 0 has no lag and is never modeled.
inline double log_mean(const PropagatorSpec& spec, const ParameterState& state,
                       const ModelData& data, int i, int j) {
  if (i < 0 || i >= data.n_areas || j < 1 || j >= data.n_days) {
    throw IndexOutOfRange("log_mean cell (" + std::to_string(i) + "," +
                          std::to_string(j) + ") outside the modeled panel");
  }
  const auto si = static_cast<std::size_t>(i);
  const auto sj = static_cast<std::size_t>(j);
  if (data.dropped(si, sj)) {
    throw DepletedSusceptibles("susceptibles exhausted in area " +
                               data.graph->area_ids[si] + " on day " +
                               std::to_string(j));
  }
  double lp = data.log_S(si, sj) + state.alpha0;
  if (spec.include_self_lag) lp += state.alpha1 * data.lag_self(si, sj);
  if (spec.include_neighbor_lag) lp += state.alpha2 * data.lag_nb(si, sj);
  if (spec.predictor_mode != PredictorMode::none) {
    for (int k = 0; k < ParameterState::k_predictors; ++k) {
      lp += data.x(i, k) * state.beta(k);
    }
  }
  if (spec.uh_mode == UhMode::spatial) {
    lp += state.v[si];
  } else if (uses_spacetime_v(spec)) {
    lp += state.v[si * static_cast<std::size_t>(data.n_days) + sj];
  }
  if (spec.icar) lp += state.u[si];
  if (spec.mobility) {
    const int period = data.mobility->period_index[sj];
    lp += state.eta[static_cast<std::size_t>(period - 1)] *
          data.mobility->work(si, sj);
  }
  if (!std::isfinite(lp)) {
    throw NonFiniteLogMean("non-finite log mean at area " + std::to_string(i) +
                           ", day " + std::to_string(j));
  }
  return lp;
}

// Sizes state vectors for a preset and panel; values start at zero (gamma at
// 1) and precisions at 1.
inline ParameterState init_state(const ModelPreset& preset, const ModelData& data) {
  ParameterState st;
  const auto m = static_cast<std::size_t>(data.n_areas);
  const auto T = static_cast<std::size_t>(data.n_days);
  const PropagatorSpec& s = preset.spec;
  if (s.uh_mode == UhMode::spatial) {
    st.v.assign(m, 0.0);
  } else if (uses_spacetime_v(s)) {
    st.v.assign(m * T, 0.0);
  }
  if (s.uh_mode == UhMode::spacetime_tvprec) st.tau_vj.assign(T, 1.0);
  if (s.icar) st.u.assign(m, 0.0);
  if (s.mobility) st.eta.assign(static_cast<std::size_t>(data.mobility->n_periods()), 0.0);
  if (preset.data_model.tv_obs_precision) st.tau_yj.assign(T, 1.0);
  return st;
}

}  // namespace episir
