#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "episir/csv.hpp"
#include "episir/dates.hpp"
#include "episir/errors.hpp"
#include "episir/grid.hpp"

namespace episir {

// Daily new case / death counts per area, plus the starting susceptible
// population. Area ordering matches the adjacency graph everywhere.
struct CaseSeriesPanel {
  std::vector<std::string> area_ids;
  std::vector<SerialDay> dates;     // strictly increasing, daily
  Grid<long long> cases;            // areas x days, y_ij
  Grid<long long> deaths;           // areas x days, d_ij
  std::vector<long long> population;  // S_{i,0}

  int n_areas() const { return static_cast<int>(area_ids.size()); }
  int n_days() const { return static_cast<int>(dates.size()); }
};

// Trailing 3-day averaged counts; real valued.
struct SmoothedPanel {
  std::vector<SerialDay> dates;
  Grid<double> values;
};

// Susceptible counts under the accounting equation; real valued to carry
// the asymptomatic multiplier.
struct SusceptibleTrajectory {
  Grid<double> S;
  double lambda = 0.0;
};

// County-level deprivation predictors: % below poverty, % black ethnicity,
// MDI 2017. Standardized values are what the propagators consume.
struct PredictorTable {
  static constexpr int k_predictors = 3;
  std::vector<std::string> area_ids;
  Grid<double> raw;           // areas x 3
  Grid<double> standardized;  // areas x 3, zero mean / unit sd across areas
};

// Google work-index panel over the mobility analysis window, plus the
// change-point segmentation.
struct MobilityPanel {
  std::vector<SerialDay> dates;       // length J_m
  Grid<double> work;                  // areas x J_m, w_ij
  std::vector<int> period_lengths;    // change-point segment lengths
  std::vector<int> period_index;      // per-day tch[j], values 1..P

  int n_days() const { return static_cast<int>(dates.size()); }
  int n_periods() const { return static_cast<int>(period_lengths.size()); }
};

// One raw row of a cumulative case/death file (NYT shape).
struct CaseRecord {
  SerialDay date = 0;
  std::string fips;
  long long cum_cases = 0;
  long long cum_deaths = 0;
};

struct IngestResult {
  CaseSeriesPanel panel;
  long long clamped_negative_increments = 0;  // reporting corrections zeroed
};

// Turns cumulative records into daily increments on a gap-free daily grid.
// Missing dates forward-fill the cumulative value (zero increment); negative
// increments are reporting corrections and clamp to zero, counted so callers
// can audit.
inline IngestResult ingest_cases(const std::vector<CaseRecord>& raw_rows,
                                 const std::vector<std::string>& area_ids,
                                 const std::vector<long long>& population,
                                 SerialDay start_date, SerialDay end_date) {
  if (end_date < start_date) throw EmptyDateRange("date range is empty");
  if (area_ids.size() != population.size()) {
    throw LengthMismatch("area_ids and population length mismatch");
  }
  const int m = static_cast<int>(area_ids.size());
  const int days = static_cast<int>(end_date - start_date) + 1;

  std::map<std::string, int> index;
  for (int i = 0; i < m; ++i) index.emplace(area_ids[static_cast<std::size_t>(i)], i);

  // cumulative grids, -1 marks "no record"
  Grid<long long> cum_cases(static_cast<std::size_t>(m), static_cast<std::size_t>(days), -1);
  Grid<long long> cum_deaths(static_cast<std::size_t>(m), static_cast<std::size_t>(days), -1);
  // latest cumulative level strictly before the window seeds the baseline, so
  // the day-0 increment is new cases on day 0, not the area's entire history
  std::vector<long long> base_c(static_cast<std::size_t>(m), 0);
  std::vector<long long> base_d(static_cast<std::size_t>(m), 0);
  std::vector<SerialDay> base_date(static_cast<std::size_t>(m),
                                   std::numeric_limits<SerialDay>::min());
  for (const auto& r : raw_rows) {
    auto it = index.find(r.fips);
    if (it == index.end()) {
      throw UnknownAreaId("case record references unknown area id: '" + r.fips + "'");
    }
    const auto i = static_cast<std::size_t>(it->second);
    if (r.date < start_date) {
      if (r.date == base_date[i]) {
        throw NonMonotoneDates("duplicate record for area '" + r.fips + "' on " +
                               format_date(r.date));
      }
      if (r.date > base_date[i]) {
        base_date[i] = r.date;
        base_c[i] = r.cum_cases;
        base_d[i] = r.cum_deaths;
      }
      continue;
    }
    if (r.date > end_date) continue;
    const auto j = static_cast<std::size_t>(r.date - start_date);
    if (cum_cases(i, j) >= 0) {
      throw NonMonotoneDates("duplicate record for area '" + r.fips + "' on " +
                             format_date(r.date));
    }
    cum_cases(i, j) = r.cum_cases;
    cum_deaths(i, j) = r.cum_deaths;
  }

  IngestResult out;
  out.panel.area_ids = area_ids;
  out.panel.population = population;
  out.panel.dates.resize(static_cast<std::size_t>(days));
  for (int j = 0; j < days; ++j) {
    out.panel.dates[static_cast<std::size_t>(j)] = start_date + j;
  }
  out.panel.cases = Grid<long long>(static_cast<std::size_t>(m), static_cast<std::size_t>(days), 0);
  out.panel.deaths = Grid<long long>(static_cast<std::size_t>(m), static_cast<std::size_t>(days), 0);

  for (int i = 0; i < m; ++i) {
    long long prev_c = base_c[static_cast<std::size_t>(i)];
    long long prev_d = base_d[static_cast<std::size_t>(i)];
    for (int j = 0; j < days; ++j) {
      const auto si = static_cast<std::size_t>(i);
      const auto sj = static_cast<std::size_t>(j);
      long long cc = cum_cases(si, sj) >= 0 ? cum_cases(si, sj) : prev_c;
      long long cd = cum_deaths(si, sj) >= 0 ? cum_deaths(si, sj) : prev_d;
      long long inc_c = cc - prev_c;
      long long inc_d = cd - prev_d;
      if (inc_c < 0) {
        inc_c = 0;
        ++out.clamped_negative_increments;
      }
      if (inc_d < 0) {
        inc_d = 0;
        ++out.clamped_negative_increments;
      }
      out.panel.cases(si, sj) = inc_c;
      out.panel.deaths(si, sj) = inc_d;
      prev_c = cc;
      prev_d = cd;
    }
  }
  return out;
}

// Trailing 3-day mean, window {j-2, j-1, j} clipped at the series start so
// the propagator never sees future counts.
inline SmoothedPanel three_day_average(const CaseSeriesPanel& panel) {
  if (panel.n_days() < 3) {
    throw TooShortSeries("3-day average needs at least 3 days, got " +
                         std::to_string(panel.n_days()));
  }
  SmoothedPanel out;
  out.dates = panel.dates;
  out.values = Grid<double>(static_cast<std::size_t>(panel.n_areas()),
                            static_cast<std::size_t>(panel.n_days()));
  for (int i = 0; i < panel.n_areas(); ++i) {
    for (int j = 0; j < panel.n_days(); ++j) {
      const int lo = std::max(0, j - 2);
      double sum = 0.0;
      for (int k = lo; k <= j; ++k) {
        sum += static_cast<double>(panel.cases(static_cast<std::size_t>(i),
                                               static_cast<std::size_t>(k)));
      }
      out.values(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          sum / static_cast<double>(j - lo + 1);
    }
  }
  return out;
}

// Asymptomatic share -> multiplier: lambda = r / (1 - r). A 20% share gives
// lambda 0.25, a 50% share gives 1.0.
inline double asymptomatic_lambda(double rate_percent) {
  if (rate_percent < 0.0 || rate_percent >= 100.0) {
    throw RateOutOfRange("asymptomatic rate percent must be in [0, 100), got " +
                         std::to_string(rate_percent));
  }
  const double r = rate_percent / 100.0;
  return r / (1.0 - r);
}

// Accounting equation: S_{i,0} = population, then
// S_ij = max(0, S_{i,j-1} - (1+lambda) * y_{i,j-1} - d_{i,j-1}).
inline SusceptibleTrajectory susceptible_trajectory(const CaseSeriesPanel& panel,
                                                    double lambda) {
  if (lambda < 0.0) {
    throw NegativeLambda("asymptomatic multiplier must be >= 0, got " +
                         std::to_string(lambda));
  }
  for (long long p : panel.population) {
    if (p <= 0) throw DataError("population must be positive for every area");
  }
  SusceptibleTrajectory out;
  out.lambda = lambda;
  out.S = Grid<double>(static_cast<std::size_t>(panel.n_areas()),
                       static_cast<std::size_t>(panel.n_days()));
  for (int i = 0; i < panel.n_areas(); ++i) {
    const auto si = static_cast<std::size_t>(i);
    out.S(si, 0) = static_cast<double>(panel.population[si]);
    for (int j = 1; j < panel.n_days(); ++j) {
      const auto sj = static_cast<std::size_t>(j);
      const double drained =
          (1.0 + lambda) * static_cast<double>(panel.cases(si, sj - 1)) +
          static_cast<double>(panel.deaths(si, sj - 1));
      out.S(si, sj) = std::max(0.0, out.S(si, sj - 1) - drained);
    }
  }
  return out;
}

// Maps each day (0-based) to its change-point period (1-based). Day 18 of
// the SC segmentation (18,20,13,250) is the last day of period 1; day 19
// starts period 2.
inline std::vector<int> changepoint_index(const std::vector<int>& period_lengths,
                                          int total_days) {
  long long sum = 0;
  for (int len : period_lengths) {
    if (len < 1) throw LengthMismatch("change-point period lengths must be >= 1");
    sum += len;
  }
  if (period_lengths.empty() || sum != total_days) {
    throw LengthMismatch("change-point lengths sum to " + std::to_string(sum) +
                         " but the window has " + std::to_string(total_days) +
                         " days");
  }
  std::vector<int> idx(static_cast<std::size_t>(total_days));
  int period = 1;
  int remaining = period_lengths[0];
  for (int j = 0; j < total_days; ++j) {
    if (remaining == 0) {
      ++period;
      remaining = period_lengths[static_cast<std::size_t>(period - 1)];
    }
    idx[static_cast<std::size_t>(j)] = period;
    --remaining;
  }
  return idx;
}

// Standardizes each predictor to zero mean and unit sample sd across areas.
inline void standardize_predictors(PredictorTable& table) {
  const auto m = table.raw.rows();
  table.standardized = Grid<double>(m, PredictorTable::k_predictors);
  for (int k = 0; k < PredictorTable::k_predictors; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += table.raw(i, static_cast<std::size_t>(k));
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = table.raw(i, static_cast<std::size_t>(k)) - mean;
      ss += d * d;
    }
    const double sd = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      table.standardized(i, static_cast<std::size_t>(k)) =
          sd > 0.0 ? (table.raw(i, static_cast<std::size_t>(k)) - mean) / sd : 0.0;
    }
  }
}

// --- file readers -----------------------------------------------------------

// cases CSV, NYT shape: date,county,state,fips,cases,deaths (cumulative).
inline std::vector<CaseRecord> read_cases_csv(const std::string& path) {
  csv::Table t = csv::read_file(path);
  const int cdate = t.column("date");
  const int cfips = t.column("fips");
  const int ccases = t.column("cases");
  const int cdeaths = t.column("deaths");
  std::vector<CaseRecord> rows;
  rows.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    CaseRecord rec;
    rec.date = parse_date(r[static_cast<std::size_t>(cdate)]);
    rec.fips = r[static_cast<std::size_t>(cfips)];
    rec.cum_cases = csv::to_int(r[static_cast<std::size_t>(ccases)], "cases");
    rec.cum_deaths = csv::to_int(r[static_cast<std::size_t>(cdeaths)], "deaths");
    rows.push_back(std::move(rec));
  }
  return rows;
}

// population CSV: fips,population. Row order fixes the panel's area order.
inline void read_population_csv(const std::string& path,
                                std::vector<std::string>& area_ids,
                                std::vector<long long>& population) {
  csv::Table t = csv::read_file(path);
  const int cfips = t.column("fips");
  const int cpop = t.column("population");
  area_ids.clear();
  population.clear();
  for (const auto& r : t.rows) {
    area_ids.push_back(r[static_cast<std::size_t>(cfips)]);
    population.push_back(csv::to_int(r[static_cast<std::size_t>(cpop)], "population"));
  }
  if (area_ids.empty()) throw DataError("population file has no rows: " + path);
}

// predictors CSV: fips,pct_poverty,pct_black,mdi17. One row per area.
inline PredictorTable read_predictors_csv(const std::string& path,
                                          const std::vector<std::string>& area_ids) {
  csv::Table t = csv::read_file(path);
  const int cfips = t.column("fips");
  const int c1 = t.column("pct_poverty");
  const int c2 = t.column("pct_black");
  const int c3 = t.column("mdi17");
  std::map<std::string, std::vector<double>> by_fips;
  for (const auto& r : t.rows) {
    by_fips[r[static_cast<std::size_t>(cfips)]] = {
        csv::to_double(r[static_cast<std::size_t>(c1)], "pct_poverty"),
        csv::to_double(r[static_cast<std::size_t>(c2)], "pct_black"),
        csv::to_double(r[static_cast<std::size_t>(c3)], "mdi17")};
  }
  PredictorTable table;
  table.area_ids = area_ids;
  table.raw = Grid<double>(area_ids.size(), PredictorTable::k_predictors);
  for (std::size_t i = 0; i < area_ids.size(); ++i) {
    auto it = by_fips.find(area_ids[i]);
    if (it == by_fips.end()) {
      throw UnknownAreaId("predictors file has no row for area '" + area_ids[i] + "'");
    }
    for (int k = 0; k < PredictorTable::k_predictors; ++k) {
      table.raw(i, static_cast<std::size_t>(k)) = it->second[static_cast<std::size_t>(k)];
    }
  }
  standardize_predictors(table);
  return table;
}

// mobility CSV: date,fips,work_index. Missing cells forward-fill from the
// same area's last observation; leading missing cells fill 0.
inline MobilityPanel read_mobility_csv(const std::string& path,
                                       const std::vector<std::string>& area_ids,
                                       SerialDay start_date, int n_days,
                                       const std::vector<int>& period_lengths) {
  csv::Table t = csv::read_file(path);
  const int cdate = t.column("date");
  const int cfips = t.column("fips");
  const int cwork = t.column("work_index");

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < area_ids.size(); ++i) {
    index.emplace(area_ids[i], static_cast<int>(i));
  }

  MobilityPanel panel;
  panel.dates.resize(static_cast<std::size_t>(n_days));
  for (int j = 0; j < n_days; ++j) panel.dates[static_cast<std::size_t>(j)] = start_date + j;
  Grid<double> obs(area_ids.size(), static_cast<std::size_t>(n_days),
                   std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : t.rows) {
    auto it = index.find(r[static_cast<std::size_t>(cfips)]);
    if (it == index.end()) continue;  // other areas pass through unharmed
    const SerialDay d = parse_date(r[static_cast<std::size_t>(cdate)]);
    if (d < start_date || d >= start_date + n_days) continue;
    obs(static_cast<std::size_t>(it->second), static_cast<std::size_t>(d - start_date)) =
        csv::to_double(r[static_cast<std::size_t>(cwork)], "work_index");
  }
  panel.work = Grid<double>(area_ids.size(), static_cast<std::size_t>(n_days), 0.0);
  for (std::size_t i = 0; i < area_ids.size(); ++i) {
    double last = 0.0;
    for (int j = 0; j < n_days; ++j) {
      const double v = obs(i, static_cast<std::size_t>(j));
      if (!std::isnan(v)) last = v;
      panel.work(i, static_cast<std::size_t>(j)) = last;
    }
  }
  panel.period_lengths = period_lengths;
  panel.period_index = changepoint_index(period_lengths, n_days);
  return panel;
}

}  // namespace episir
