#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "episir/csv.hpp"
#include "episir/data.hpp"
#include "episir/dates.hpp"
#include "episir/diagnostics.hpp"
#include "episir/errors.hpp"
#include "episir/inference.hpp"
#include "episir/model.hpp"
#include "episir/simulator.hpp"
#include "episir/spatial_graph.hpp"
#include "episir/state.hpp"

namespace episir {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// --- data digest -------------------------------------------------------------

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                                   std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64_file(const std::string& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file for digest: " + path);
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64_bytes(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- run configuration --------------------------------------------------------

struct RunConfig {
  std::string cases, population, adjacency;
  std::string predictors, mobility;  // optional; empty = absent
  std::string preset = "2A";
  double asymptomatic_rate_percent = 20.0;
  std::string start_date, end_date;
  std::vector<int> changepoint_lengths;
  McmcControls controls;
  std::string out_dir;
};

namespace detail {

inline ordered_json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

template <typename T>
T require(const ordered_json& j, const std::string& key) {
  if (!j.contains(key)) throw ConfigError("config is missing required key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

template <typename T>
T optional_or(const ordered_json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

inline void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw ConfigError(what + " file does not exist: " + path);
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& path) {
  const ordered_json j = detail::parse_json_file(path);
  RunConfig c;
  c.cases = detail::require<std::string>(j, "cases");
  c.population = detail::require<std::string>(j, "population");
  c.adjacency = detail::require<std::string>(j, "adjacency");
  c.predictors = detail::optional_or<std::string>(j, "predictors", "");
  c.mobility = detail::optional_or<std::string>(j, "mobility", "");
  c.preset = detail::require<std::string>(j, "preset");
  c.asymptomatic_rate_percent =
      detail::optional_or<double>(j, "asymptomatic_rate_percent", 20.0);
  c.start_date = detail::require<std::string>(j, "start_date");
  c.end_date = detail::require<std::string>(j, "end_date");
  c.changepoint_lengths =
      detail::optional_or<std::vector<int>>(j, "changepoint_lengths", {});
  c.controls.n_iter = detail::optional_or<long long>(j, "n_iter", 20000);
  c.controls.burn_in = detail::optional_or<long long>(j, "burn_in", 10000);
  c.controls.thin = detail::optional_or<long long>(j, "thin", 10);
  c.controls.n_chains = detail::optional_or<int>(j, "chains", 2);
  c.controls.seed = detail::optional_or<std::uint64_t>(j, "seed", 1);
  c.out_dir = detail::optional_or<std::string>(j, "out_dir", "");
  return c;
}

// Everything loaded and derived for one fit, ready for the sampler.
struct LoadedInputs {
  std::vector<std::string> area_ids;
  std::vector<long long> population;
  AdjacencyGraph graph;
  CaseSeriesPanel panel;
  PredictorTable predictors;
  MobilityPanel mobility;
  bool has_predictors = false;
  bool has_mobility = false;
  double lambda = 0.0;
  long long clamped = 0;
  ModelPreset preset;
  ModelData data;
  std::string data_digest;
};

// Fail-fast validation: every complaint a user can fix in the config is
// raised before any compute starts.
inline void validate_run_config(const RunConfig& c, const ModelPreset& preset) {
  if (c.out_dir.empty()) throw ConfigError("no output directory (config 'out_dir' or --out)");
  detail::require_file(c.cases, "cases");
  detail::require_file(c.population, "population");
  detail::require_file(c.adjacency, "adjacency");
  const bool needs_predictors = preset.spec.predictor_mode != PredictorMode::none;
  const bool needs_mobility = preset.spec.mobility || preset.mobility_window;
  if (needs_predictors) {
    if (c.predictors.empty()) {
      throw ConfigError("preset '" + c.preset + "' requires a predictors file");
    }
    detail::require_file(c.predictors, "predictors");
  }
  if (needs_mobility) {
    if (c.mobility.empty()) {
      throw ConfigError("preset '" + c.preset + "' requires a mobility file");
    }
    detail::require_file(c.mobility, "mobility");
    if (c.changepoint_lengths.empty()) {
      throw ConfigError("preset '" + c.preset + "' requires changepoint_lengths");
    }
  }
  c.controls.validate();
  SerialDay s, e;
  try {
    s = parse_date(c.start_date);
    e = parse_date(c.end_date);
  } catch (const DataError& ex) {
    throw ConfigError(std::string("bad date in config: ") + ex.what());
  }
  if (e < s) throw ConfigError("end_date precedes start_date");
}

inline LoadedInputs load_inputs(const RunConfig& c) {
  LoadedInputs in;
  in.preset = catalog(c.preset);
  validate_run_config(c, in.preset);

  read_population_csv(c.population, in.area_ids, in.population);
  in.graph = read_adjacency_csv(c.adjacency, in.area_ids);

  const SerialDay start = parse_date(c.start_date);
  const SerialDay end = parse_date(c.end_date);
  IngestResult ingested =
      ingest_cases(read_cases_csv(c.cases), in.area_ids, in.population, start, end);
  in.panel = std::move(ingested.panel);
  in.clamped = ingested.clamped_negative_increments;
  in.lambda = asymptomatic_lambda(c.asymptomatic_rate_percent);

  const bool needs_predictors = in.preset.spec.predictor_mode != PredictorMode::none;
  const bool needs_mobility = in.preset.spec.mobility || in.preset.mobility_window;
  if (needs_predictors) {
    in.predictors = read_predictors_csv(c.predictors, in.area_ids);
    in.has_predictors = true;
  }
  if (needs_mobility) {
    long long window = 0;
    for (int len : c.changepoint_lengths) window += len;
    if (window > in.panel.n_days()) {
      throw ConfigError("changepoint_lengths cover " + std::to_string(window) +
                        " days but the panel has only " +
                        std::to_string(in.panel.n_days()));
    }
    in.mobility = read_mobility_csv(c.mobility, in.area_ids, start,
                                    static_cast<int>(window), c.changepoint_lengths);
    in.has_mobility = true;
  }

  in.data = build_model_data(in.preset, in.panel, in.graph, in.lambda,
                             in.has_predictors ? &in.predictors : nullptr,
                             in.has_mobility ? &in.mobility : nullptr);

  // Digest of what the likelihood actually sees: the observed panel files,
  // the window, and the response scale. Deliberately excludes lambda and the
  // predictor/mobility files so covariate variants and asymptomatic-rate
  // sweeps on the same panel stay comparable.
  std::uint64_t h = 1469598103934665603ULL;
  h = fnv1a64_file(c.cases, h);
  h = fnv1a64_file(c.population, h);
  h = fnv1a64_file(c.adjacency, h);
  const std::string tail =
      c.start_date + "|" + c.end_date + "|" + std::to_string(in.data.n_days) + "|" +
      (in.preset.data_model.kind == DataKind::lognormal_3d ? "lognormal_3d"
                                                           : "poisson_daily");
  h = fnv1a64_bytes(tail.data(), tail.size(), h);
  in.data_digest = hex64(h);
  return in;
}

// --- pooled diagnostics over several chains -----------------------------------

namespace detail {

inline WaicResult waic_pooled(const std::vector<ChainOutput>& chains) {
  const std::size_t cells = chains.front().pointwise_loglik.cols();
  std::size_t total = 0;
  for (const auto& ch : chains) total += ch.pointwise_loglik.rows();
  if (total < 2) throw TooFewDraws("WAIC needs at least 2 pooled draws");
  WaicResult r;
  std::vector<double> col;
  col.reserve(total);
  for (std::size_t c = 0; c < cells; ++c) {
    col.clear();
    for (const auto& ch : chains) {
      for (std::size_t d = 0; d < ch.pointwise_loglik.rows(); ++d) {
        col.push_back(ch.pointwise_loglik(d, c));
      }
    }
    double mx = col[0], mean = 0.0;
    for (double v : col) {
      mx = std::max(mx, v);
      mean += v;
    }
    mean /= static_cast<double>(col.size());
    double se = 0.0, ss = 0.0;
    for (double v : col) {
      se += std::exp(v - mx);
      ss += (v - mean) * (v - mean);
    }
    r.lppd += mx + std::log(se / static_cast<double>(col.size()));
    r.p_waic += ss / static_cast<double>(col.size() - 1);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

inline double mean_deviance_pooled(const std::vector<ChainOutput>& chains) {
  double acc = 0.0;
  long long n = 0;
  for (const auto& ch : chains) {
    for (std::size_t d = 0; d < ch.pointwise_loglik.rows(); ++d) {
      double row = 0.0;
      for (std::size_t c = 0; c < ch.pointwise_loglik.cols(); ++c) {
        row += ch.pointwise_loglik(d, c);
      }
      acc += -2.0 * row;
      ++n;
    }
  }
  if (n == 0) throw TooFewDraws("mean deviance needs >= 1 draw");
  return acc / static_cast<double>(n);
}

inline std::vector<double> pooled_column(const std::vector<ChainOutput>& chains,
                                         std::size_t col) {
  std::vector<double> out;
  for (const auto& ch : chains) {
    for (std::size_t d = 0; d < ch.draws.rows(); ++d) out.push_back(ch.draws(d, col));
  }
  return out;
}

inline int column_of(const std::vector<std::string>& names, const std::string& n) {
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == n) return static_cast<int>(k);
  }
  return -1;
}

}  // namespace detail

// Pools chains into the run-level report: WAIC/deviance over all retained
// draws, per-parameter summaries (plus derived beta_k = gamma_k * theta_k
// when predictors are in the model), worst-chain Geweke scores, and GVS
// inclusion probabilities.
inline FitReport build_fit_report(const ModelPreset& preset,
                                  const std::vector<ChainOutput>& chains,
                                  long long dropped_cells) {
  if (chains.empty()) throw TooFewDraws("no chains to report on");
  const auto& names = chains.front().param_names;
  FitReport rep;
  const WaicResult w = detail::waic_pooled(chains);
  rep.waic = w.waic;
  rep.lppd = w.lppd;
  rep.p_waic = w.p_waic;
  rep.mean_deviance = detail::mean_deviance_pooled(chains);
  rep.dropped_cells = dropped_cells;
  for (const auto& ch : chains) rep.n_retained += static_cast<long long>(ch.draws.rows());

  // summaries + geweke for every flattened parameter
  const bool geweke_ok = chains.front().draws.rows() >= 100;
  for (std::size_t k = 0; k < names.size(); ++k) {
    rep.summaries.push_back(
        posterior_summary(names[k], detail::pooled_column(chains, k)));
    if (geweke_ok) {
      GewekeResult worst;
      bool first = true;
      for (const auto& ch : chains) {
        std::vector<double> col(ch.draws.rows());
        for (std::size_t d = 0; d < col.size(); ++d) col[d] = ch.draws(d, k);
        const GewekeResult g = geweke(col);
        if (first || std::fabs(g.z) > std::fabs(worst.z)) worst = g;
        worst.degenerate = worst.degenerate || g.degenerate;
        first = false;
      }
      rep.geweke_scores.emplace_back(names[k], worst);
    }
  }

  // derived regression effects and inclusion probabilities
  if (preset.spec.predictor_mode != PredictorMode::none) {
    for (int k = 1; k <= ParameterState::k_predictors; ++k) {
      const int tcol = detail::column_of(names, "theta" + std::to_string(k));
      const int gcol = detail::column_of(names, "gamma" + std::to_string(k));
      std::vector<double> beta = detail::pooled_column(chains, static_cast<std::size_t>(tcol));
      if (gcol >= 0) {
        const std::vector<double> g =
            detail::pooled_column(chains, static_cast<std::size_t>(gcol));
        for (std::size_t d = 0; d < beta.size(); ++d) beta[d] *= g[d];
        rep.inclusion_probs.push_back(
            std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size()));
      }
      rep.summaries.push_back(posterior_summary("beta" + std::to_string(k), beta));
      if (geweke_ok) {
        rep.geweke_scores.emplace_back("beta" + std::to_string(k), geweke(beta));
      }
    }
  }
  return rep;
}

// --- output writers ------------------------------------------------------------

namespace detail {

inline void write_draws_csv(const fs::path& path, const ChainOutput& ch) {
  std::string out;
  for (std::size_t k = 0; k < ch.param_names.size(); ++k) {
    if (k) out += ',';
    out += ch.param_names[k];
  }
  out += '\n';
  for (std::size_t d = 0; d < ch.draws.rows(); ++d) {
    for (std::size_t k = 0; k < ch.draws.cols(); ++k) {
      if (k) out += ',';
      out += csv::format_double(ch.draws(d, k));
    }
    out += '\n';
  }
  atomic_write_file(path, out);
}

// Binary matrix: u64 rows, u64 cols, then row-major float64, native little
// endian.
inline void write_matrix_bin(const fs::path& path, const Grid<double>& m) {
  std::string out;
  const std::uint64_t dims[2] = {m.rows(), m.cols()};
  out.append(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.append(reinterpret_cast<const char*>(m.data().data()),
             m.data().size() * sizeof(double));
  atomic_write_file(path, out);
}

inline Grid<double> read_matrix_bin(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open matrix file: " + path.string());
  std::uint64_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw DataError("truncated matrix file: " + path.string());
  Grid<double> m(static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]));
  in.read(reinterpret_cast<char*>(m.data().data()),
          static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  if (!in) throw DataError("truncated matrix file: " + path.string());
  return m;
}

inline bool headline_parameter(const std::string& n) {
  return n == "alpha0" || n == "alpha1" || n == "alpha2" || n == "tau_v" ||
         n == "tau_u" || n == "tau_y" || n.rfind("beta", 0) == 0 ||
         n.rfind("eta_", 0) == 0;
}

inline std::string format_report_text(const std::string& preset_name,
                                      const DataModelKind& dm,
                                      const FitReport& rep, int n_chains,
                                      long long clamped) {
  char buf[256];
  std::string out;
  out += "model " + preset_name;
  out += dm.kind == DataKind::lognormal_3d ? "  (lognormal, 3-day average)"
                                           : "  (Poisson, daily counts)";
  out += '\n';
  std::snprintf(buf, sizeof(buf),
                "retained draws: %lld (%d chains)   dropped cells: %lld   "
                "clamped increments: %lld\n",
                rep.n_retained, n_chains, rep.dropped_cells, clamped);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "WAIC: %.4f   pWAIC: %.4f   lppd: %.4f   mean deviance: %.4f\n\n",
                rep.waic, rep.p_waic, rep.lppd, rep.mean_deviance);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-12s %12s %12s %12s %12s %10s\n", "parameter",
                "mean", "sd", "2.5%", "97.5%", "geweke z");
  out += buf;
  std::map<std::string, double> zmap;
  for (const auto& [name, g] : rep.geweke_scores) {
    zmap[name] = std::isfinite(g.z) ? g.z : 0.0;
  }
  for (const auto& s : rep.summaries) {
    if (!headline_parameter(s.name)) continue;
    if (zmap.count(s.name)) {
      std::snprintf(buf, sizeof(buf), "%-12s %12.5g %12.5g %12.5g %12.5g %10.3f\n",
                    s.name.c_str(), s.mean, s.sd, s.q025, s.q975, zmap[s.name]);
    } else {
      std::snprintf(buf, sizeof(buf), "%-12s %12.5g %12.5g %12.5g %12.5g %10s\n",
                    s.name.c_str(), s.mean, s.sd, s.q025, s.q975, "-");
    }
    out += buf;
  }
  if (!rep.inclusion_probs.empty()) {
    out += "\npredictor inclusion probabilities (threshold 0.5):\n";
    for (std::size_t k = 0; k < rep.inclusion_probs.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "  predictor %zu: %.4f  (%s)\n", k + 1,
                    rep.inclusion_probs[k],
                    inclusion_decision(rep.inclusion_probs[k]) ? "included" : "excluded");
      out += buf;
    }
  }
  return out;
}

inline ordered_json report_to_json(const FitReport& rep) {
  ordered_json j;
  j["waic"] = rep.waic;
  j["lppd"] = rep.lppd;
  j["p_waic"] = rep.p_waic;
  j["mean_deviance"] = rep.mean_deviance;
  j["n_retained"] = rep.n_retained;
  j["dropped_cells"] = rep.dropped_cells;
  j["summaries"] = ordered_json::array();
  for (const auto& s : rep.summaries) {
    j["summaries"].push_back({{"name", s.name},
                              {"mean", s.mean},
                              {"sd", s.sd},
                              {"q025", s.q025},
                              {"q975", s.q975}});
  }
  j["geweke"] = ordered_json::array();
  for (const auto& [name, g] : rep.geweke_scores) {
    // JSON has no inf; a degenerate window with distinct means is reported
    // as the largest finite magnitude
    const double z = std::isfinite(g.z) ? g.z : std::copysign(1e308, g.z);
    j["geweke"].push_back({{"name", name}, {"z", z}, {"degenerate", g.degenerate}});
  }
  j["inclusion_probs"] = ordered_json::array();
  for (std::size_t k = 0; k < rep.inclusion_probs.size(); ++k) {
    j["inclusion_probs"].push_back({{"predictor", k + 1},
                                    {"probability", rep.inclusion_probs[k]},
                                    {"included", inclusion_decision(rep.inclusion_probs[k])}});
  }
  return j;
}

// Per-cell posterior profile of the data-scale mean over the pooled draws.
inline std::string build_profiles_csv(const ModelPreset& preset,
                                      const LoadedInputs& in,
                                      const std::vector<ChainOutput>& chains) {
  const ModelData& data = in.data;
  std::string out = "fips,date,observed,mu_mean,mu_q025,mu_q975\n";
  std::size_t total = 0;
  for (const auto& ch : chains) total += ch.log_mean_draws.rows();
  std::vector<double> mu;
  mu.reserve(total);
  const bool lognormal = preset.data_model.kind == DataKind::lognormal_3d;
  for (int i = 0; i < data.n_areas; ++i) {
    const auto si = static_cast<std::size_t>(i);
    for (int j = 0; j < data.n_days; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      out += in.area_ids[si];
      out += ',';
      out += format_date(in.panel.dates[sj]);
      out += ',';
      out += std::to_string(in.panel.cases(si, sj));
      if (j == 0 || data.dropped(si, sj)) {
        out += ",,,\n";  // no modeled mean for seed day or exhausted cells
        continue;
      }
      const std::size_t c = cell_index(i, j, data.n_days);
      mu.clear();
      for (const auto& ch : chains) {
        for (std::size_t d = 0; d < ch.log_mean_draws.rows(); ++d) {
          const double lp = ch.log_mean_draws(d, c);
          mu.push_back(lognormal ? std::max(0.0, std::exp(lp) - 1.0) : std::exp(lp));
        }
      }
      double mean = 0.0;
      for (double v : mu) mean += v;
      mean /= static_cast<double>(mu.size());
      out += ',';
      out += csv::format_double(mean);
      out += ',';
      out += csv::format_double(quantile_linear(mu, 0.025));
      out += ',';
      out += csv::format_double(quantile_linear(mu, 0.975));
      out += '\n';
    }
  }
  return out;
}

}  // namespace detail

// --- fit ------------------------------------------------------------------------

struct FitOutcome {
  FitReport report;
  std::string report_text;
  fs::path run_dir;
};

inline FitOutcome cmd_fit(const RunConfig& config) {
  LoadedInputs in = load_inputs(config);
  PriorConfig prior;
  const std::vector<ChainOutput> chains =
      mcmc_run(in.preset, in.data, prior, config.controls);

  fs::create_directories(config.out_dir);
  const fs::path dir(config.out_dir);
  for (std::size_t ch = 0; ch < chains.size(); ++ch) {
    detail::write_draws_csv(dir / ("chain_" + std::to_string(ch) + ".csv"), chains[ch]);
    detail::write_matrix_bin(dir / ("pointwise_loglik_chain_" + std::to_string(ch) + ".bin"),
                             chains[ch].pointwise_loglik);
  }

  FitOutcome out;
  out.run_dir = dir;
  out.report = build_fit_report(in.preset, chains, in.data.dropped_cells);
  out.report_text = detail::format_report_text(in.preset.name, in.preset.data_model,
                                               out.report, config.controls.n_chains,
                                               in.clamped);
  atomic_write_file(dir / "report.txt", out.report_text);

  ordered_json jrep = detail::report_to_json(out.report);
  jrep["clamped_negative_increments"] = in.clamped;
  atomic_write_file(dir / "report.json", jrep.dump(2) + "\n");

  atomic_write_file(dir / "profiles.csv",
                         detail::build_profiles_csv(in.preset, in, chains));

  ordered_json man;
  man["command"] = "fit";
  man["cases"] = config.cases;
  man["population"] = config.population;
  man["adjacency"] = config.adjacency;
  man["predictors"] = config.predictors;
  man["mobility"] = config.mobility;
  man["preset"] = config.preset;
  man["asymptomatic_rate_percent"] = config.asymptomatic_rate_percent;
  man["start_date"] = config.start_date;
  man["end_date"] = config.end_date;
  man["changepoint_lengths"] = config.changepoint_lengths;
  man["n_iter"] = config.controls.n_iter;
  man["burn_in"] = config.controls.burn_in;
  man["thin"] = config.controls.thin;
  man["chains"] = config.controls.n_chains;
  man["seed"] = config.controls.seed;
  man["out_dir"] = config.out_dir;
  man["data_digest"] = in.data_digest;
  man["window_days"] = in.data.n_days;
  man["n_areas"] = in.data.n_areas;
  man["lambda"] = in.lambda;
  man["clamped_negative_increments"] = in.clamped;
  man["dropped_cells"] = in.data.dropped_cells;
  atomic_write_file(dir / "manifest.json", man.dump(2) + "\n");
  return out;
}

// --- simulate ---------------------------------------------------------------------

struct SimCliConfig {
  std::string adjacency, population;
  std::string predictors, mobility;
  std::string preset = "2A";
  int n_days = 0;
  std::string start_date = "2020-03-06";
  double asymptomatic_rate_percent = 0.0;
  double death_rate = 0.0;
  int death_lag = 7;
  bool draw_effects = false;
  std::vector<int> changepoint_lengths;
  ordered_json seed_infections;  // integer (all areas) or {fips: count}
  ordered_json true_params;
  std::uint64_t seed = 1;
  std::string out_dir;
};

inline SimCliConfig parse_sim_config(const std::string& path) {
  const ordered_json j = detail::parse_json_file(path);
  SimCliConfig c;
  c.adjacency = detail::require<std::string>(j, "adjacency");
  c.population = detail::require<std::string>(j, "population");
  c.preset = detail::require<std::string>(j, "preset");
  c.n_days = detail::require<int>(j, "n_days");
  c.start_date = detail::optional_or<std::string>(j, "start_date", "2020-03-06");
  c.asymptomatic_rate_percent =
      detail::optional_or<double>(j, "asymptomatic_rate_percent", 0.0);
  c.death_rate = detail::optional_or<double>(j, "death_rate", 0.0);
  c.death_lag = detail::optional_or<int>(j, "death_lag", 7);
  c.draw_effects = detail::optional_or<bool>(j, "draw_effects", false);
  c.changepoint_lengths =
      detail::optional_or<std::vector<int>>(j, "changepoint_lengths", {});
  c.seed_infections = j.contains("seed_infections") ? j.at("seed_infections")
                                                    : ordered_json(0);
  c.true_params = j.contains("true_params") ? j.at("true_params")
                                            : ordered_json::object();
  c.seed = detail::optional_or<std::uint64_t>(j, "seed", 1);
  c.predictors = detail::optional_or<std::string>(j, "predictors", "");
  c.mobility = detail::optional_or<std::string>(j, "mobility", "");
  c.out_dir = detail::optional_or<std::string>(j, "out_dir", "");
  return c;
}

namespace detail {

inline void apply_true_params(const ordered_json& tp, ParameterState& st) {
  auto get = [&tp](const char* key, double& slot) {
    if (tp.contains(key)) slot = tp.at(key).get<double>();
  };
  get("alpha0", st.alpha0);
  get("alpha1", st.alpha1);
  get("alpha2", st.alpha2);
  get("tau_v", st.tau_v);
  get("tau_u", st.tau_u);
  get("tau_y", st.tau_y);
  if (tp.contains("theta")) {
    const auto v = tp.at("theta").get<std::vector<double>>();
    for (std::size_t k = 0; k < v.size() && k < st.theta.size(); ++k) st.theta[k] = v[k];
  }
  if (tp.contains("gamma")) {
    const auto v = tp.at("gamma").get<std::vector<int>>();
    for (std::size_t k = 0; k < v.size() && k < st.gamma.size(); ++k) st.gamma[k] = v[k];
  }
  if (tp.contains("eta")) st.eta = tp.at("eta").get<std::vector<double>>();
  if (tp.contains("v")) st.v = tp.at("v").get<std::vector<double>>();
  if (tp.contains("u")) st.u = tp.at("u").get<std::vector<double>>();
}

// NYT-shaped cumulative cases file; re-ingesting it reproduces the panel.
inline std::string panel_to_cases_csv(const CaseSeriesPanel& panel) {
  std::string out = "date,county,state,fips,cases,deaths\n";
  const auto m = static_cast<std::size_t>(panel.n_areas());
  std::vector<long long> cum_c(m, 0), cum_d(m, 0);
  for (int j = 0; j < panel.n_days(); ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      cum_c[i] += panel.cases(i, static_cast<std::size_t>(j));
      cum_d[i] += panel.deaths(i, static_cast<std::size_t>(j));
      out += format_date(panel.dates[static_cast<std::size_t>(j)]);
      out += ',';
      out += panel.area_ids[i];
      out += ",SIM,";
      out += panel.area_ids[i];
      out += ',';
      out += std::to_string(cum_c[i]);
      out += ',';
      out += std::to_string(cum_d[i]);
      out += '\n';
    }
  }
  return out;
}

}  // namespace detail

struct SimOutcome {
  SimResult result;
  fs::path run_dir;
};

inline SimOutcome cmd_simulate(const SimCliConfig& config) {
  if (config.out_dir.empty()) {
    throw ConfigError("no output directory (config 'out_dir' or --out)");
  }
  detail::require_file(config.adjacency, "adjacency");
  detail::require_file(config.population, "population");

  SimScenario sc;
  sc.model = catalog(config.preset);
  std::vector<std::string> area_ids;
  std::vector<long long> population;
  read_population_csv(config.population, area_ids, population);
  AdjacencyGraph graph = read_adjacency_csv(config.adjacency, area_ids);
  sc.graph = &graph;
  sc.population = population;
  sc.n_days = config.n_days;
  try {
    sc.start_date = parse_date(config.start_date);
  } catch (const DataError& e) {
    throw ConfigError(std::string("bad start_date: ") + e.what());
  }
  sc.lambda = asymptomatic_lambda(config.asymptomatic_rate_percent);
  sc.death_rate = config.death_rate;
  sc.death_lag = config.death_lag;
  sc.draw_effects = config.draw_effects;

  sc.seed_infections.assign(area_ids.size(), 0);
  if (config.seed_infections.is_number_integer()) {
    const long long all = config.seed_infections.get<long long>();
    for (auto& s : sc.seed_infections) s = all;
  } else if (config.seed_infections.is_object()) {
    for (const auto& [fips, count] : config.seed_infections.items()) {
      sc.seed_infections[static_cast<std::size_t>(graph.index_of(fips))] =
          count.get<long long>();
    }
  } else {
    throw ConfigError("seed_infections must be an integer or a {fips: count} object");
  }

  PredictorTable predictors;
  MobilityPanel mobility;
  if (sc.model.spec.predictor_mode != PredictorMode::none) {
    if (config.predictors.empty()) {
      throw ConfigError("preset '" + config.preset + "' requires a predictors file");
    }
    predictors = read_predictors_csv(config.predictors, area_ids);
    sc.predictors = &predictors;
  }
  if (sc.model.spec.mobility || sc.model.mobility_window) {
    if (config.mobility.empty() || config.changepoint_lengths.empty()) {
      throw ConfigError("preset '" + config.preset +
                        "' requires a mobility file and changepoint_lengths");
    }
    long long window = 0;
    for (int len : config.changepoint_lengths) window += len;
    if (window != config.n_days) {
      throw ConfigError("changepoint_lengths must sum to n_days for simulation");
    }
    mobility = read_mobility_csv(config.mobility, area_ids, sc.start_date,
                                 config.n_days, config.changepoint_lengths);
    sc.mobility = &mobility;
  }

  sc.true_state = init_state(sc.model, [&] {
    ModelData probe;
    probe.n_areas = graph.n_areas();
    probe.n_days = config.n_days;
    probe.mobility = sc.mobility;
    return probe;
  }());
  detail::apply_true_params(config.true_params, sc.true_state);

  Rng rng = Rng::substream(config.seed, 1);
  SimOutcome out;
  out.result = simulate_panel(sc, rng);

  fs::create_directories(config.out_dir);
  const fs::path dir(config.out_dir);
  out.run_dir = dir;
  atomic_write_file(dir / "cases.csv",
                         detail::panel_to_cases_csv(out.result.panel));
  {
    std::string pop = "fips,population\n";
    for (std::size_t i = 0; i < area_ids.size(); ++i) {
      pop += area_ids[i] + "," + std::to_string(population[i]) + "\n";
    }
    atomic_write_file(dir / "population.csv", pop);
  }
  {
    const ParameterState& st = out.result.realized;
    ordered_json truth;
    truth["alpha0"] = st.alpha0;
    truth["alpha1"] = st.alpha1;
    truth["alpha2"] = st.alpha2;
    truth["theta"] = st.theta;
    truth["gamma"] = st.gamma;
    truth["eta"] = st.eta;
    truth["tau_v"] = st.tau_v;
    truth["tau_u"] = st.tau_u;
    truth["tau_y"] = st.tau_y;
    truth["v"] = st.v;
    truth["u"] = st.u;
    truth["depleted_everywhere"] = out.result.depleted_everywhere;
    truth["area_ids"] = area_ids;
    atomic_write_file(dir / "truth.json", truth.dump(2) + "\n");
  }
  {
    ordered_json man;
    man["command"] = "simulate";
    man["adjacency"] = config.adjacency;
    man["population"] = config.population;
    man["predictors"] = config.predictors;
    man["mobility"] = config.mobility;
    man["preset"] = config.preset;
    man["n_days"] = config.n_days;
    man["start_date"] = config.start_date;
    man["asymptomatic_rate_percent"] = config.asymptomatic_rate_percent;
    man["death_rate"] = config.death_rate;
    man["death_lag"] = config.death_lag;
    man["draw_effects"] = config.draw_effects;
    man["changepoint_lengths"] = config.changepoint_lengths;
    man["seed_infections"] = config.seed_infections;
    man["true_params"] = config.true_params;
    man["seed"] = config.seed;
    man["out_dir"] = config.out_dir;
    atomic_write_file(dir / "manifest.json", man.dump(2) + "\n");
  }
  return out;
}

// --- compare ---------------------------------------------------------------------

struct CompareRow {
  std::string model;
  double mean_deviance = 0.0;
  double waic = 0.0;
};

inline std::vector<CompareRow> cmd_compare(const std::vector<std::string>& run_dirs,
                                           const std::string& out_csv) {
  if (run_dirs.size() < 2) {
    throw ConfigError("compare needs at least 2 run directories");
  }
  std::vector<CompareRow> rows;
  std::string first_digest;
  for (const auto& d : run_dirs) {
    const fs::path dir(d);
    if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "report.json")) {
      throw ConfigError("not a completed run directory: " + d);
    }
    const ordered_json man = detail::parse_json_file((dir / "manifest.json").string());
    const ordered_json rep = detail::parse_json_file((dir / "report.json").string());
    if (!man.contains("data_digest")) {
      throw DataError("manifest has no data digest (not a fit run): " + d);
    }
    const std::string digest = man.at("data_digest").get<std::string>();
    if (first_digest.empty()) {
      first_digest = digest;
    } else if (digest != first_digest) {
      throw MixedDataDigests("run " + d + " was fitted to different data (digest " +
                             digest + " vs " + first_digest + ")");
    }
    CompareRow row;
    row.model = man.at("preset").get<std::string>();
    row.mean_deviance = rep.at("mean_deviance").get<double>();
    row.waic = rep.at("waic").get<double>();
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CompareRow& a, const CompareRow& b) { return a.waic < b.waic; });
  std::string out = "model,mean_deviance,waic\n";
  for (const auto& r : rows) {
    out += r.model + "," + csv::format_double(r.mean_deviance) + "," +
           csv::format_double(r.waic) + "\n";
  }
  if (!out_csv.empty()) atomic_write_file(out_csv, out);
  return rows;
}

inline std::string compare_table_text(const std::vector<CompareRow>& rows) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-12s %18s %18s\n", "model", "mean deviance", "WAIC");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %18.4f %18.4f\n", r.model.c_str(),
                  r.mean_deviance, r.waic);
    out += buf;
  }
  return out;
}

// --- profiles --------------------------------------------------------------------

// Splits the run's per-cell posterior profile table into one CSV per
// requested area; "all" selects every area in the run.
inline std::vector<fs::path> cmd_profiles(const std::string& run_dir,
                                          const std::vector<std::string>& areas,
                                          const std::string& out_dir) {
  const fs::path src = fs::path(run_dir) / "profiles.csv";
  if (!fs::exists(src)) {
    throw ConfigError("run directory has no profiles.csv: " + run_dir);
  }
  csv::Table t = csv::read_file(src.string());
  const int cfips = t.column("fips");
  std::vector<std::string> order;  // unique fips in file order
  std::map<std::string, std::string> chunks;
  std::string header;
  for (std::size_t k = 1; k < t.header.size(); ++k) {
    if (k > 1) header += ',';
    header += t.header[k];
  }
  header += '\n';
  for (const auto& row : t.rows) {
    const std::string& fips = row[static_cast<std::size_t>(cfips)];
    auto it = chunks.find(fips);
    if (it == chunks.end()) {
      order.push_back(fips);
      it = chunks.emplace(fips, header).first;
    }
    std::string& chunk = it->second;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (k > 1) chunk += ',';
      chunk += row[k];
    }
    chunk += '\n';
  }
  std::vector<std::string> selected;
  if (areas.size() == 1 && areas[0] == "all") {
    selected = order;
  } else {
    for (const auto& a : areas) {
      if (!chunks.count(a)) throw UnknownAreaId("run has no area '" + a + "'");
      selected.push_back(a);
    }
  }
  const fs::path dst = out_dir.empty() ? fs::path(run_dir) : fs::path(out_dir);
  fs::create_directories(dst);
  std::vector<fs::path> written;
  for (const auto& a : selected) {
    const fs::path p = dst / ("profile_" + a + ".csv");
    atomic_write_file(p, chunks.at(a));
    written.push_back(p);
  }
  return written;
}

// --- models list -------------------------------------------------------------------

inline std::string models_list_text() {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-12s %-18s %-9s %-9s %-10s %-5s %-11s %-9s\n",
                "name", "data model", "self-lag", "nb-lag", "uh", "icar",
                "predictors", "mobility");
  out += buf;
  for (const auto& name : catalog_names()) {
    const ModelPreset p = catalog(name);
    const char* uh = "-";
    switch (p.spec.uh_mode) {
      case UhMode::none: uh = "-"; break;
      case UhMode::spatial: uh = "v_i"; break;
      case UhMode::spacetime: uh = "v_ij"; break;
      case UhMode::spacetime_tvprec: uh = "v_ij/tv"; break;
    }
    const char* pm = "-";
    switch (p.spec.predictor_mode) {
      case PredictorMode::none: pm = "-"; break;
      case PredictorMode::fixed: pm = "fixed"; break;
      case PredictorMode::gvs: pm = "gvs"; break;
    }
    std::string dm = p.data_model.kind == DataKind::lognormal_3d ? "lognormal_3d"
                                                                 : "poisson_daily";
    if (p.data_model.tv_obs_precision) dm += "/tv";
    std::snprintf(buf, sizeof(buf), "%-12s %-18s %-9s %-9s %-10s %-5s %-11s %-9s\n",
                  name.c_str(), dm.c_str(), p.spec.include_self_lag ? "yes" : "-",
                  p.spec.include_neighbor_lag ? "yes" : "-", uh,
                  p.spec.icar ? "yes" : "-", pm, p.spec.mobility ? "yes" : "-");
    out += buf;
  }
  return out;
}

}  // namespace episir
