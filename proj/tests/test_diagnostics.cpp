#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "mrecg/diagnostics.hpp"
#include "mrecg/report_io.hpp"
#include "mrecg/rng.hpp"

using namespace mrecg;
namespace fs = std::filesystem;

TEST_CASE("oscillation_score basics") {
  SUBCASE("non-decreasing losses score zero") {
    OscillationSummary s = oscillation_score({1.0, 2.0, 3.0});
    CHECK(s.score == 0.0);
    CHECK(s.num_drops == 0);
    CHECK(s.max_loss == 3.0);
    CHECK(s.final_loss == 3.0);
  }
  SUBCASE("one unit drop") {
    OscillationSummary s = oscillation_score({1.0, 3.0, 2.0, 4.0});
    CHECK(s.score == 1.0);
    CHECK(s.num_drops == 1);
    CHECK(s.max_loss == 4.0);
    CHECK(s.final_loss == 4.0);
  }
  SUBCASE("single element") {
    OscillationSummary s = oscillation_score({0.5});
    CHECK(s.score == 0.0);
    CHECK(s.max_loss == 0.5);
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS_AS(oscillation_score({}), std::invalid_argument);
  }
}

TEST_CASE("oscillation_score invariants") {
  Rng rng(41);
  SUBCASE("appending a non-decreasing tail never changes the score") {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> v(5);
      for (double& x : v) x = std::abs(rng.next_gaussian());
      const double base = oscillation_score(v).score;
      std::vector<double> ext = v;
      double tail = v.back();
      for (int j = 0; j < 3; ++j) {
        tail += std::abs(rng.next_gaussian());
        ext.push_back(tail);
      }
      CHECK(oscillation_score(ext).score == doctest::Approx(base));
    }
  }
  SUBCASE("a strictly decreasing sequence scores max minus min") {
    std::vector<double> v = {9.0, 6.5, 6.0, 2.25, 1.0};
    CHECK(oscillation_score(v).score == doctest::Approx(8.0));
    CHECK(oscillation_score(v).num_drops == 4);
  }
  SUBCASE("score decomposes over drops") {
    std::vector<double> v = {2.0, 5.0, 3.0, 7.0, 4.0};
    // drops: 5->3 (2) and 7->4 (3)
    OscillationSummary s = oscillation_score(v);
    CHECK(s.score == doctest::Approx(5.0));
    CHECK(s.num_drops == 2);
  }
}

TEST_CASE("median and median_abs_deviation") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == doctest::Approx(2.5));
  CHECK(median({5.0}) == 5.0);
  CHECK(median_abs_deviation({1.0, 2.0, 3.0}) == 1.0);
  CHECK(median_abs_deviation({7.0, 7.0, 7.0, 7.0}) == 0.0);
  CHECK_THROWS_AS(median({}), std::invalid_argument);
}

TEST_CASE("spearman_correlation") {
  SUBCASE("any strictly increasing map gives 1") {
    std::vector<double> x = {1, 2, 3, 4, 5};
    std::vector<double> y = {2, 9, 11, 40, 1000};
    CHECK(spearman_correlation(x, y) == doctest::Approx(1.0));
  }
  SUBCASE("reversal gives -1") {
    std::vector<double> x = {1, 2, 3, 4};
    std::vector<double> y = {8, 7, 3, 0};
    CHECK(spearman_correlation(x, y) == doctest::Approx(-1.0));
  }
  SUBCASE("ties use average ranks") {
    std::vector<double> x = {1, 2, 2, 3};
    std::vector<double> y = {1, 2, 2, 3};
    CHECK(spearman_correlation(x, y) == doctest::Approx(1.0));
  }
  SUBCASE("length mismatch is an error") {
    CHECK_THROWS_AS(spearman_correlation({1.0}, {1.0, 2.0}),
                    std::invalid_argument);
  }
}

TEST_CASE("format_double round-trips through text") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 3.14159265358979,
                   123456789.123456789}) {
    const std::string s = format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
}

TEST_CASE("report save/load round trip") {
  ReconstructionReport r;
  r.granularity = "block";
  r.seed = 42;
  r.scheme_mask = {1, 0, 1};
  ModuleReport m;
  m.first_layer = 0;
  m.last_layer = 3;
  m.initial_loss = 1.0 / 3.0;
  m.final_loss = 0.1234567890123456789;
  m.h_saturation_fraction = 0.9991;
  m.loss_trajectory = {{0, 0.5}, {100, 1.0 / 7.0}};
  r.modules.push_back(m);

  const std::string path =
      (fs::temp_directory_path() /
       ("mrecg_report_" + std::to_string(::getpid()) + ".json"))
          .string();
  save_report(r, path);
  ReconstructionReport back = load_report(path);
  fs::remove(path);
  CHECK(back.granularity == r.granularity);
  CHECK(back.seed == r.seed);
  CHECK(back.scheme_mask == r.scheme_mask);
  REQUIRE(back.modules.size() == 1);
  CHECK(back.modules[0].initial_loss == m.initial_loss);
  CHECK(back.modules[0].final_loss == m.final_loss);
  CHECK(back.modules[0].h_saturation_fraction == m.h_saturation_fraction);
  CHECK(back.modules[0].loss_trajectory == m.loss_trajectory);
}

TEST_CASE("plan save/load round trip") {
  GranularityScheme s{{0, 1, 1, 0}, 2, 2};
  const std::string path =
      (fs::temp_directory_path() /
       ("mrecg_plan_" + std::to_string(::getpid()) + ".json"))
          .string();
  save_plan(s, "modcap", {10.0, 4.0, 9.0, 9.0, 1.0}, {36.0, 25.0, 0.0, 64.0},
            path);
  std::string metric;
  GranularityScheme back = load_plan(path, &metric);
  fs::remove(path);
  CHECK(back.mask == s.mask);
  CHECK(back.k_requested == s.k_requested);
  CHECK(back.k_achieved == s.k_achieved);
  CHECK(metric == "modcap");
}

TEST_CASE("sample_schemes rows are deterministic and baseline-first") {
  ModelGraph g = generate_synthetic_model(3, 3, std::nullopt, 61, 5);
  CalibrationSet calib = generate_calibration(
      8, 3, 5, 5, CalibDistribution::kGaussian, 62, 4);
  ReconConfig cfg;
  cfg.iterations = 40;
  cfg.num_batches = 2;
  cfg.act_bits = 0;
  cfg.trajectory_stride = 20;
  auto rows = sample_schemes(g, Granularity::kBlock, 3, 1, 2, 5, calib, cfg);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].mask == std::vector<int>{0, 0});
  CHECK(rows[0].k == 0);
  for (size_t i = 1; i < rows.size(); ++i) {
    int ones = 0;
    for (int b : rows[i].mask) ones += b;
    CHECK(ones == rows[i].k);
    CHECK(rows[i].k >= 1);
    CHECK(rows[i].k <= 2);
  }
  auto again = sample_schemes(g, Granularity::kBlock, 3, 1, 2, 5, calib, cfg);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].mask == again[i].mask);
    CHECK(rows[i].final_loss == again[i].final_loss);
    CHECK(rows[i].max_prev_loss == again[i].max_prev_loss);
  }
}

TEST_CASE("MRECG_THREADS caps workers without changing results") {
  ModelGraph g = generate_synthetic_model(2, 3, std::nullopt, 63, 5);
  CalibrationSet calib = generate_calibration(
      4, 3, 5, 5, CalibDistribution::kGaussian, 64, 2);
  ReconConfig cfg;
  cfg.iterations = 30;
  cfg.num_batches = 2;
  cfg.act_bits = 0;
  setenv("MRECG_THREADS", "1", 1);
  CHECK(worker_threads() == 1);
  auto serial = sample_schemes(g, Granularity::kBlock, 2, 1, 1, 9, calib, cfg);
  setenv("MRECG_THREADS", "4", 1);
  CHECK(worker_threads() == 4);
  auto parallel =
      sample_schemes(g, Granularity::kBlock, 2, 1, 1, 9, calib, cfg);
  unsetenv("MRECG_THREADS");
  REQUIRE(serial.size() == parallel.size());
  for (size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].mask == parallel[i].mask);
    CHECK(serial[i].final_loss == parallel[i].final_loss);
  }
}

TEST_CASE("network_loss is zero for an identical network") {
  ModelGraph g = generate_synthetic_model(2, 3, std::nullopt, 65, 5);
  Rng rng(1);
  Tensor samples({4, 3, 5, 5});
  for (double& v : samples.data) v = rng.next_gaussian();
  ActQuantMap aq(g.num_layers() + 1);  // all disengaged
  CHECK(network_loss(g, g.weights, aq, samples) == 0.0);
}

TEST_CASE("batch_size_study produces one row per size") {
  ModelGraph g = generate_synthetic_model(2, 3, std::nullopt, 66, 5);
  ReconConfig cfg;
  cfg.iterations = 25;
  cfg.act_bits = 0;
  cfg.num_batches = 1;
  cfg.trajectory_stride = 25;
  auto rows = batch_size_study(g, Granularity::kBlock, {4, 8}, 3, cfg, 5, 16);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].size == 4);
  CHECK(rows[1].size == 8);
  for (const BatchStudyRow& r : rows) {
    CHECK(r.median_final_loss > 0.0);
    CHECK(r.loss_mad >= 0.0);
  }
}

TEST_CASE("csv writers emit well-formed headers") {
  const fs::path dir = fs::temp_directory_path();
  const std::string osc = (dir / "mrecg_osc.csv").string();
  save_oscillation_csv({1.5, 2, 9.0, 3.0}, osc);
  std::ifstream f(osc);
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  CHECK(header == "score,num_drops,max_loss,final_loss");
  CHECK(row.substr(0, 4) == "1.5,");
  fs::remove(osc);
}
