#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flower/config.hpp"
#include "flower/experiment.hpp"

using namespace flower;

namespace {

const char* kTinyConfig = R"(
# desk-scale smoke configuration
[run]
method = flower
base-epochs = 10
session-epochs = 3
batch-size = 64
lambda1 = 1.0
hidden-widths = 10,10,10
embedding-dim = 8
distance = euclidean

[noise]
bound = 0.01
trials = 2
target-layers = 2

[ball]
synthetic-per-class = 5
margin = 1.0
lambda2 = 1.0

[pmas]
lambda3 = 10
lambda4 = 100

[schedule]
base-lr = 0.1
base-gamma = 0.1
base-gamma-frac = 0.6
session-lr = 0.05

[stream]
source = synthetic
input-dim = 8
base-classes = 4
base-samples-per-class = 20
sessions = 2
ways = 2
shots = 5
test-samples-per-class = 6
cluster-spread = 0.25
)";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("config parser: round trip, defaults, typo protection") {
  SECTION("valid text parses with the expected fields") {
    HarnessConfig c = parse_config_text(kTinyConfig);
    REQUIRE(c.runner.method == Method::flower);
    REQUIRE(c.runner.base_epochs == 10);
    REQUIRE(c.runner.noise.bound == 0.01);
    REQUIRE(c.runner.ball.synthetic_per_class == 5);
    REQUIRE(c.runner.lambda3 == 10.0);
    REQUIRE(c.runner.model.input_dim == 8);  // taken from the stream section
    REQUIRE(c.stream.base_classes == 4);
    // transform widths default to the embedding dimension
    REQUIRE(c.runner.ball.transform_widths ==
            std::array<std::size_t, 3>{8, 8, 8});
  }

  SECTION("unknown keys and sections are rejected") {
    REQUIRE_THROWS_WITH(parse_config_text("[run]\nlerning-rate = 1\n"),
                        Catch::Matchers::ContainsSubstring("lerning-rate"));
    REQUIRE_THROWS_WITH(parse_config_text("[runn]\n"),
                        Catch::Matchers::ContainsSubstring("[runn]"));
    REQUIRE_THROWS_WITH(parse_config_text("method = flower\n"),
                        Catch::Matchers::ContainsSubstring("outside a section"));
  }

  SECTION("malformed numbers are rejected with the key name") {
    REQUIRE_THROWS_WITH(parse_config_text("[noise]\nbound = abc\n"),
                        Catch::Matchers::ContainsSubstring("bound"));
  }
}

TEST_CASE("run_experiment: bookkeeping, averages, gap convention") {
  HarnessConfig config = parse_config_text(kTinyConfig);
  std::vector<std::uint64_t> seeds{7, 8};

  ExperimentReport report =
      run_experiment(config, {Method::flower, Method::baseline}, seeds);

  SECTION("one result row per (method, seed, session)") {
    REQUIRE(report.failed_cells.empty());
    REQUIRE(report.results.size() == 2 * 2 * 3);  // methods x seeds x sessions
  }

  SECTION("reported means equal the arithmetic mean over seeds") {
    for (const MethodSummary& s : report.summaries) {
      for (std::size_t k = 0; k < s.session_mean.size(); ++k) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const SessionResult& r : report.results)
          if (r.method == s.method && r.session == k + 1) {
            sum += r.accuracy;
            ++n;
          }
        REQUIRE(n == seeds.size());
        REQUIRE(std::abs(s.session_mean[k] - sum / static_cast<double>(n)) <
                1e-12);
      }
      double avg = 0.0;
      for (double v : s.session_mean) avg += v;
      avg /= static_cast<double>(s.session_mean.size());
      REQUIRE(std::abs(s.avg - avg) < 1e-12);
    }
  }

  SECTION("gap of flower against itself is zero") {
    for (const MethodSummary& s : report.summaries) {
      REQUIRE(s.has_gap);
      if (s.method == "flower") REQUIRE(s.gap == 0.0);
    }
  }
}

TEST_CASE("run_experiment: a failing cell is reported, others continue") {
  HarnessConfig config = parse_config_text(kTinyConfig);
  // discrete-beta sampling is undefined and must fail inside the stream run
  config.runner.noise.mode = NoiseSpec::Mode::discrete_beta;
  ExperimentReport broken = run_experiment(config, {Method::flower}, {1});
  REQUIRE(broken.results.empty());
  REQUIRE(broken.failed_cells.size() == 1);

  // baseline never samples noise, so it completes while flower fails
  ExperimentReport mixed =
      run_experiment(config, {Method::flower, Method::baseline}, {1});
  REQUIRE(mixed.failed_cells.size() == 1);
  REQUIRE_FALSE(mixed.results.empty());
  for (const SessionResult& r : mixed.results) REQUIRE(r.method == "baseline");
}

TEST_CASE("emit_outputs: files, headers, determinism, parse-back") {
  HarnessConfig config = parse_config_text(kTinyConfig);
  ExperimentReport report = run_experiment(config, {Method::flower}, {7});

  TempDir dir_a("flower_out_a"), dir_b("flower_out_b");
  emit_outputs(report, dir_a.path.string());
  ExperimentReport report2 = run_experiment(config, {Method::flower}, {7});
  emit_outputs(report2, dir_b.path.string());

  SECTION("two identical runs produce byte-identical outputs") {
    for (const char* name : {"results.jsonl", "accuracy.csv", "curves.csv"}) {
      std::string a = slurp(dir_a.path / name);
      std::string b = slurp(dir_b.path / name);
      REQUIRE(a == b);
      REQUIRE_FALSE(a.empty());
      REQUIRE(a.back() == '\n');
    }
  }

  SECTION("accuracy.csv parses back to the summary means within 5e-7") {
    std::ifstream in(dir_a.path / "accuracy.csv");
    std::string header, row;
    std::getline(in, header);
    REQUIRE(header == "method,session_1,session_2,session_3,avg,gap");
    std::getline(in, row);
    std::stringstream ss(row);
    std::string cell;
    std::getline(ss, cell, ',');
    REQUIRE(cell == "flower");
    const MethodSummary& s = report.summaries.front();
    for (std::size_t k = 0; k < 3; ++k) {
      std::getline(ss, cell, ',');
      REQUIRE(std::abs(std::stod(cell) - s.session_mean[k]) < 5e-7);
    }
    std::getline(ss, cell, ',');
    REQUIRE(std::abs(std::stod(cell) - s.avg) < 5e-7);
  }

  SECTION("empty report writes headers only") {
    ExperimentReport empty;
    TempDir dir("flower_out_empty");
    emit_outputs(empty, dir.path.string());
    REQUIRE(slurp(dir.path / "results.jsonl").empty());
    REQUIRE(slurp(dir.path / "accuracy.csv") == "method,avg,gap\n");
    REQUIRE(slurp(dir.path / "curves.csv") == "method,seed,session,accuracy\n");
  }
}

TEST_CASE("sweep: single-value sweep matches run_experiment") {
  HarnessConfig config = parse_config_text(kTinyConfig);
  std::vector<std::uint64_t> seeds{7};

  SweepReport sw = sweep(config, SweepParameter::bound_b, {0.01}, seeds);
  REQUIRE(sw.rows.size() == 1);

  ExperimentReport direct = run_experiment(config, {Method::flower}, seeds);
  const MethodSummary& s = direct.summaries.front();
  REQUIRE(sw.rows[0].value == 0.01);
  REQUIRE(sw.rows[0].first_session == s.session_mean.front());
  REQUIRE(sw.rows[0].final_session == s.session_mean.back());
  REQUIRE(sw.rows[0].avg == s.avg);

  SECTION("trials sweep patches M") {
    SweepReport tm = sweep(config, SweepParameter::trials_m, {1, 2}, seeds);
    REQUIRE(tm.rows.size() == 2);
    REQUIRE(tm.rows[0].value == 1.0);
  }
}
