#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "flower/session.hpp"
#include "flower/stream.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Full experiment description: how to build the data stream and how to
/// train on it. `config_echo` carries the originating config text verbatim.
struct HarnessConfig {
  RunnerConfig runner;
  bool csv_source = false;
  StreamSpec stream;
  CsvSchema csv;
  std::string csv_path;
  std::string config_echo;

  Stream make_stream(std::uint64_t seed) const {
    if (csv_source) {
      CsvSchema schema = csv;
      schema.seed = seed;
      return ingest_csv(csv_path, schema);
    }
    StreamSpec spec = stream;
    spec.seed = seed;
    return generate_stream(spec);
  }
};

/// One evaluated session of one (method, seed) stream.
struct SessionResult {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t session = 0;  // 1-based
  double accuracy = 0.0;
  std::map<int, double> per_class;
  double wall_time_s = 0.0;  // wall time of the whole stream run; not serialized
};

struct MethodSummary {
  std::string method;
  std::vector<double> session_mean;  // over seeds, indexed by session-1
  double avg = 0.0;                  // mean of session_mean
  double gap = 0.0;                  // avg - avg(flower)
  bool has_gap = false;
};

struct ExperimentReport {
  std::vector<SessionResult> results;
  std::vector<MethodSummary> summaries;
  std::vector<std::string> failed_cells;
  std::vector<std::uint64_t> seeds;
  std::string run_id;
  std::string config_echo;
};

namespace detail {

inline std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) h = (h ^ c) * 1099511628211ull;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::size_t worker_count(std::size_t cells) {
  std::size_t n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("FLOWER_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::min(n, std::max<std::size_t>(cells, 1));
}

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return std::string(buf);
}

}  // namespace detail

/// Runs every (method, seed) cell, in a worker pool capped by the
/// FLOWER_THREADS environment variable. A failing cell is recorded and the
/// rest continue. Results are assembled in (method, seed, session) order,
/// independent of scheduling.
inline ExperimentReport run_experiment(const HarnessConfig& config,
                                       const std::vector<Method>& methods,
                                       const std::vector<std::uint64_t>& seeds) {
  FLOWER_CHECK(!methods.empty(), "run_experiment: no methods selected");
  FLOWER_CHECK(!seeds.empty(), "run_experiment: at least one seed required");

  struct Cell {
    Method method;
    std::uint64_t seed;
    std::vector<SessionResult> results;
    std::string error;
  };
  std::vector<Cell> cells;
  for (Method m : methods)
    for (std::uint64_t s : seeds) cells.push_back({m, s, {}, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      Cell& cell = cells[i];
      RunnerConfig runner = config.runner;
      runner.method = cell.method;
      auto start = std::chrono::steady_clock::now();
      try {
        Stream stream = config.make_stream(cell.seed);
        StreamRunResult run = run_stream(stream, runner, cell.seed);
        double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          start)
                .count();
        for (const SessionEval& eval : run.sessions) {
          SessionResult r;
          r.method = to_string(cell.method);
          r.seed = cell.seed;
          r.session = eval.session;
          r.accuracy = eval.accuracy;
          r.per_class = eval.per_class;
          r.wall_time_s = elapsed;
          cell.results.push_back(std::move(r));
        }
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  std::size_t n_workers = detail::worker_count(cells.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  ExperimentReport report;
  report.seeds = seeds;
  report.config_echo = config.config_echo;
  {
    std::string id_material = config.config_echo;
    for (Method m : methods) id_material += std::string("|") + to_string(m);
    for (std::uint64_t s : seeds) id_material += "|" + std::to_string(s);
    report.run_id = detail::fnv_hex(id_material);
  }

  for (const Cell& cell : cells) {
    if (!cell.error.empty()) {
      report.failed_cells.push_back(std::string(to_string(cell.method)) + ":" +
                                    std::to_string(cell.seed) + ": " +
                                    cell.error);
      continue;
    }
    for (const SessionResult& r : cell.results) report.results.push_back(r);
  }

  // per-method session means over the seeds that completed
  for (Method m : methods) {
    MethodSummary summary;
    summary.method = to_string(m);
    std::map<std::size_t, std::pair<double, std::size_t>> acc;  // session -> (sum, n)
    for (const SessionResult& r : report.results) {
      if (r.method != summary.method) continue;
      acc[r.session].first += r.accuracy;
      acc[r.session].second += 1;
    }
    if (acc.empty()) continue;  // every seed of this method failed
    for (const auto& [session, sum_n] : acc)
      summary.session_mean.push_back(sum_n.first /
                                     static_cast<double>(sum_n.second));
    double total = 0.0;
    for (double v : summary.session_mean) total += v;
    summary.avg = total / static_cast<double>(summary.session_mean.size());
    report.summaries.push_back(std::move(summary));
  }
  for (MethodSummary& s : report.summaries) {
    for (const MethodSummary& f : report.summaries) {
      if (f.method == "flower") {
        s.gap = s.avg - f.avg;
        s.has_gap = true;
      }
    }
  }
  return report;
}

/// Sweepable hyperparameters.
enum class SweepParameter { bound_b, trials_m };

struct SweepRow {
  double value = 0.0;
  double first_session = 0.0;
  double final_session = 0.0;
  double avg = 0.0;
};

struct SweepReport {
  SweepParameter parameter = SweepParameter::bound_b;
  std::vector<SweepRow> rows;
  std::vector<std::string> failed_cells;
};

/// One full experiment per value; each row mirrors the sensitivity-table
/// shape: first session, final session, average over sessions.
inline SweepReport sweep(const HarnessConfig& config, SweepParameter parameter,
                         const std::vector<double>& values,
                         const std::vector<std::uint64_t>& seeds) {
  FLOWER_CHECK(!values.empty(), "sweep: no values given");
  SweepReport report;
  report.parameter = parameter;
  for (double v : values) {
    HarnessConfig patched = config;
    if (parameter == SweepParameter::bound_b) {
      FLOWER_CHECK(v > 0.0, "sweep: bound values must be positive");
      patched.runner.noise.bound = v;
    } else {
      FLOWER_CHECK(v >= 1.0, "sweep: trial counts must be >= 1");
      patched.runner.noise.trials = static_cast<std::size_t>(v);
    }
    ExperimentReport inner =
        run_experiment(patched, {patched.runner.method}, seeds);
    for (const std::string& f : inner.failed_cells)
      report.failed_cells.push_back("value " + detail::fmt6(v) + ": " + f);
    if (inner.summaries.empty()) continue;
    const MethodSummary& s = inner.summaries.front();
    SweepRow row;
    row.value = v;
    row.first_session = s.session_mean.front();
    row.final_session = s.session_mean.back();
    row.avg = s.avg;
    report.rows.push_back(row);
  }
  return report;
}

/// Writes results.jsonl, accuracy.csv and curves.csv. All numbers carry six
/// decimal places; every file ends with a newline. Wall times are not
/// serialized, keeping reruns byte-comparable.
inline void emit_outputs(const ExperimentReport& report,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  FLOWER_CHECK(fs::is_directory(out_dir), "emit_outputs: cannot create " + out_dir);

  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(out_dir) / name, std::ios::trunc);
    FLOWER_CHECK(out.good(), "emit_outputs: cannot write " + name + " in " + out_dir);
    return out;
  };

  {
    std::ofstream out = open("results.jsonl");
    for (const SessionResult& r : report.results) {
      out << "{\"method\":\"" << r.method << "\",\"seed\":" << r.seed
          << ",\"session\":" << r.session
          << ",\"accuracy\":" << detail::fmt6(r.accuracy) << ",\"per_class\":{";
      bool first = true;
      for (const auto& [c, acc] : r.per_class) {
        if (!first) out << ",";
        first = false;
        out << "\"" << c << "\":" << detail::fmt6(acc);
      }
      out << "}}\n";
    }
  }

  std::size_t n_sessions = 0;
  for (const MethodSummary& s : report.summaries)
    n_sessions = std::max(n_sessions, s.session_mean.size());

  {
    std::ofstream out = open("accuracy.csv");
    out << "method";
    for (std::size_t k = 1; k <= n_sessions; ++k) out << ",session_" << k;
    out << ",avg,gap\n";
    for (const MethodSummary& s : report.summaries) {
      out << s.method;
      for (std::size_t k = 0; k < n_sessions; ++k)
        out << ","
            << (k < s.session_mean.size() ? detail::fmt6(s.session_mean[k])
                                          : std::string());
      out << "," << detail::fmt6(s.avg) << ","
          << (s.has_gap ? detail::fmt6(s.gap) : std::string()) << "\n";
    }
  }

  {
    std::ofstream out = open("curves.csv");
    out << "method,seed,session,accuracy\n";
    for (const SessionResult& r : report.results)
      out << r.method << "," << r.seed << "," << r.session << ","
          << detail::fmt6(r.accuracy) << "\n";
  }
}

inline void emit_sweep(const SweepReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  FLOWER_CHECK(fs::is_directory(out_dir), "emit_sweep: cannot create " + out_dir);
  std::ofstream out(fs::path(out_dir) / "sweep.csv", std::ios::trunc);
  FLOWER_CHECK(out.good(), "emit_sweep: cannot write sweep.csv");
  out << (report.parameter == SweepParameter::bound_b ? "bound_b" : "trials_m")
      << ",first_session,final_session,avg\n";
  for (const SweepRow& r : report.rows)
    out << detail::fmt6(r.value) << "," << detail::fmt6(r.first_session) << ","
        << detail::fmt6(r.final_session) << "," << detail::fmt6(r.avg) << "\n";
}

}  // namespace flower
