// Command-line front end: synthesize models and calibration data, plan the
// merge scheme, run quantization, and run the studies.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrecg/capacity.hpp"
#include "mrecg/diagnostics.hpp"
#include "mrecg/model_io.hpp"
#include "mrecg/partition.hpp"
#include "mrecg/reconstruction.hpp"
#include "mrecg/report_io.hpp"
#include "mrecg/solver.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mrecg;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// Flat-JSON config file support: {"flag-name": value, ...} expands into
// explicit flags before parsing; command-line flags take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string config_path;
  std::vector<std::string> out;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config_path.empty()) return out;
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot read config file " + config_path);
  json j = json::parse(in);
  if (!j.is_object()) {
    throw std::runtime_error("config file must hold a JSON object: " +
                             config_path);
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string flag = "--" + it.key();
    bool given = false;
    for (const std::string& a : out) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    }
    if (given) continue;
    if (it.value().is_boolean()) {
      if (it.value().get<bool>()) out.push_back(flag);
    } else if (it.value().is_string()) {
      out.push_back(flag + "=" + it.value().get<std::string>());
    } else {
      out.push_back(flag + "=" + it.value().dump());
    }
  }
  return out;
}

struct CommonQuantFlags {
  std::string model_json = "model.json";
  std::string calib_path = "calib.bin";
  int wbits = 4;
  int abits = 4;
  int64_t iters = 20000;
  double qdrop = 0.0;
  int batches = 16;
  int batch_size = 32;
  double lr = 1e-3;
  std::string family = "auto";  // auto | resnet | depthwise
  double loss_ratio = 0.0;      // 0: from family
  bool first_layer_8bit = false;
  uint64_t seed = 0;
};

void add_quant_flags(CLI::App* cmd, CommonQuantFlags* f) {
  cmd->add_option("--model", f->model_json, "Model manifest (model.json)");
  cmd->add_option("--calib", f->calib_path, "Calibration blob (calib.bin)");
  cmd->add_option("--wbits", f->wbits, "Weight bit-width")->check(CLI::Range(2, 16));
  cmd->add_option("--abits", f->abits,
                  "Activation bit-width (0 disables activation quantization)");
  cmd->add_option("--iters", f->iters, "Reconstruction iterations per module")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--qdrop", f->qdrop, "QDROP retain probability (0 = off)")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--batches", f->batches, "Calibration batches")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", f->batch_size, "Calibration batch size")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f->lr, "Learning rate for the rounding variables");
  cmd->add_option("--model-family", f->family,
                  "resnet | depthwise | auto (selects the loss ratio)")
      ->check(CLI::IsMember({"auto", "resnet", "depthwise"}));
  cmd->add_option("--loss-ratio", f->loss_ratio,
                  "Reconstruction loss weight (overrides --model-family)");
  cmd->add_flag("--first-layer-8bit", f->first_layer_8bit,
                "Relax the first layer to 8 bit");
  cmd->add_option("--seed", f->seed, "Run seed");
}

ReconConfig make_config(const CommonQuantFlags& f, const ModelGraph& g) {
  ReconConfig cfg;
  cfg.iterations = f.iters;
  cfg.weight_bits = f.wbits;
  cfg.act_bits = f.abits;
  cfg.qdrop_prob = f.qdrop;
  cfg.learning_rate = f.lr;
  cfg.batch_size = f.batch_size;
  cfg.num_batches = f.batches;
  cfg.first_layer_8bit = f.first_layer_8bit;
  cfg.seed = f.seed;
  if (f.loss_ratio > 0.0) {
    cfg.recon_loss_weight = f.loss_ratio;
  } else {
    bool depthwise = f.family == "depthwise";
    if (f.family == "auto") {
      for (const LayerSpec& l : g.layers) depthwise = depthwise || l.groups > 1;
    }
    cfg.recon_loss_weight = depthwise ? 0.1 : 0.01;
  }
  return cfg;
}

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// Volatile fields (timestamp, wall time) live only here so the data outputs
// stay byte-identical across repeated seeded runs.
void write_manifest(const std::string& dir, const std::string& command,
                    const json& config, uint64_t seed,
                    const std::vector<std::string>& outputs,
                    double wall_seconds) {
  json j{{"command", command},   {"config", config},
         {"seed", seed},         {"outputs", outputs},
         {"tool_version", kToolVersion}, {"timestamp", timestamp_utc()},
         {"wall_time_seconds", wall_seconds}};
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << j.dump(2) << "\n";
}

Granularity parse_granularity(const std::string& s) {
  if (s == "layer") return Granularity::kLayer;
  if (s == "block") return Granularity::kBlock;
  throw std::runtime_error("unknown granularity: " + s);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  if (out.empty()) throw std::runtime_error("empty list: " + s);
  return out;
}

void parse_k_range(const std::string& s, int* lo, int* hi) {
  const size_t pos = s.find("..");
  if (pos == std::string::npos) {
    *lo = *hi = std::stoi(s);
  } else {
    *lo = std::stoi(s.substr(0, pos));
    *hi = std::stoi(s.substr(pos + 2));
  }
  if (*lo > *hi) throw std::runtime_error("bad k range: " + s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-reconstruction-granularity post-training quantization"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "Generate a synthetic model and calibration data");
  int blocks = 8, channels = 16, hw = 8, calib_n = 512;
  int bottleneck = -1;
  uint64_t synth_seed = 0;
  std::string synth_out = ".";
  std::string dist = "gaussian";
  synth->add_option("--blocks", blocks, "Residual blocks")->check(CLI::Range(2, 1024));
  synth->add_option("--channels", channels, "Channels per block")->check(CLI::PositiveNumber);
  synth->add_option("--bottleneck", bottleneck, "Depthwise bottleneck block index (-1 = none)");
  synth->add_option("--hw", hw, "Input spatial size")->check(CLI::Range(3, 4096));
  synth->add_option("--calib-n", calib_n, "Calibration samples")->check(CLI::PositiveNumber);
  synth->add_option("--dist", dist, "Calibration distribution")
      ->check(CLI::IsMember({"gaussian", "uniform"}));
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory");

  // --- plan ---
  auto* plan = app.add_subcommand("plan", "Rank capacity differences and emit a merge plan");
  std::string plan_model = "model.json", plan_out = ".";
  std::string plan_metric = "modcap", plan_gran = "block", baseline_report;
  int plan_k = 2, plan_bits = 4;
  double plan_alpha = 1.6;
  bool plan_data_free = false;
  plan->add_option("--model", plan_model, "Model manifest");
  plan->add_option("--metric", plan_metric, "Capacity metric")
      ->check(CLI::IsMember({"modcap", "loss"}));
  plan->add_option("--k", plan_k, "Number of pairs to merge")->check(CLI::NonNegativeNumber);
  plan->add_option("--bits", plan_bits, "Weight bit-width assumed for ModCap")
      ->check(CLI::Range(2, 16));
  plan->add_option("--alpha", plan_alpha, "Stride-2 capacity factor");
  plan->add_option("--granularity", plan_gran, "layer | block")
      ->check(CLI::IsMember({"layer", "block"}));
  plan->add_option("--baseline-report", baseline_report,
                   "Baseline reconstruction report (required for --metric loss)");
  plan->add_flag("--data-free", plan_data_free,
                 "Forbid selected pairs from sharing a module");
  plan->add_option("--out", plan_out, "Output directory");

  // --- quantize ---
  auto* quant = app.add_subcommand("quantize", "Run module-by-module reconstruction");
  CommonQuantFlags qf;
  std::string quant_plan, quant_gran = "block", quant_out = ".";
  add_quant_flags(quant, &qf);
  quant->add_option("--plan", quant_plan, "Merge plan (default: zero-mask baseline)");
  quant->add_option("--granularity", quant_gran, "layer | block")
      ->check(CLI::IsMember({"layer", "block"}));
  quant->add_option("--out", quant_out, "Output directory");

  // --- study ---
  auto* study = app.add_subcommand("study", "Diagnostics studies");
  study->require_subcommand(1);

  auto* st_batch = study->add_subcommand("batch", "Calibration batch-size study");
  CommonQuantFlags bf;
  std::string batch_sizes = "8,32,128,512", batch_out = ".";
  int batch_seeds = 5, batch_hw = 8, batch_eval = 256;
  std::string batch_gran = "block";
  add_quant_flags(st_batch, &bf);
  st_batch->add_option("--sizes", batch_sizes, "Comma-separated batch sizes, ascending");
  st_batch->add_option("--seeds", batch_seeds, "Seeds per size")->check(CLI::PositiveNumber);
  st_batch->add_option("--hw", batch_hw, "Input spatial size");
  st_batch->add_option("--eval-n", batch_eval, "Held-out evaluation samples");
  st_batch->add_option("--granularity", batch_gran, "layer | block")
      ->check(CLI::IsMember({"layer", "block"}));
  st_batch->add_option("--out", batch_out, "Output directory");

  auto* st_schemes = study->add_subcommand("schemes", "Random granularity-scheme sampling");
  CommonQuantFlags sf;
  int scheme_samples = 30;
  std::string scheme_k = "1..3", scheme_gran = "block", scheme_out = ".";
  add_quant_flags(st_schemes, &sf);
  st_schemes->add_option("--samples", scheme_samples, "Number of sampled schemes")
      ->check(CLI::PositiveNumber);
  st_schemes->add_option("--k", scheme_k, "k or k range, e.g. 1..3");
  st_schemes->add_option("--granularity", scheme_gran, "layer | block")
      ->check(CLI::IsMember({"layer", "block"}));
  st_schemes->add_option("--out", scheme_out, "Output directory");

  auto* st_osc = study->add_subcommand("oscillation", "Oscillation summary of a report");
  std::string osc_report, osc_out = ".";
  st_osc->add_option("--report", osc_report, "Reconstruction report JSON")->required();
  st_osc->add_option("--out", osc_out, "Output directory");

  try {
    std::vector<std::string> args =
        expand_config(std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());  // CLI11 consumes back to front
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  try {
    if (*synth) {
      fs::create_directories(synth_out);
      std::optional<int> bn;
      if (bottleneck >= 0) bn = bottleneck;
      ModelGraph g =
          generate_synthetic_model(blocks, channels, bn, synth_seed, hw);
      const std::string mj = (fs::path(synth_out) / "model.json").string();
      const std::string mb = (fs::path(synth_out) / "model.bin").string();
      const std::string cb = (fs::path(synth_out) / "calib.bin").string();
      save_model(g, mj, mb);
      CalibrationSet cs = generate_calibration(
          calib_n, channels, hw, hw,
          dist == "gaussian" ? CalibDistribution::kGaussian
                             : CalibDistribution::kUniform,
          synth_seed, calib_n);
      save_calibration(cs.samples, cb);
      load_model(mj).validate();  // round-trip and compose check
      write_manifest(synth_out, "synth",
                     json{{"blocks", blocks},
                          {"channels", channels},
                          {"bottleneck", bottleneck},
                          {"hw", hw},
                          {"calib_n", calib_n},
                          {"dist", dist}},
                     synth_seed, {"model.json", "model.bin", "calib.bin"},
                     elapsed());
    } else if (*plan) {
      ModelGraph g = load_model(plan_model);
      for (LayerSpec& l : g.layers) l.bitwidth_weights = plan_bits;
      std::vector<ModuleSpec> modules =
          build_modules(g, parse_granularity(plan_gran));
      CapacityVector cv;
      if (plan_metric == "modcap") {
        cv = capacity_vector(modules, g, CapacityMetric::kModCap, nullptr,
                             plan_alpha);
      } else {
        if (baseline_report.empty()) {
          throw std::runtime_error(
              "--metric loss requires --baseline-report with per-module "
              "losses");
        }
        ReconstructionReport rep = load_report(baseline_report);
        std::vector<double> losses = rep.final_losses();
        cv = capacity_vector(modules, g, CapacityMetric::kLoss, &losses);
      }
      std::vector<PairScore> scores = score_pairs(cv);
      GranularityScheme scheme = select_topk(
          scores, plan_k,
          plan_data_free ? SelectMode::kDataFree : SelectMode::kDataDependent);
      std::vector<double> score_vals;
      for (const PairScore& s : scores) score_vals.push_back(s.score);
      fs::create_directories(plan_out);
      save_plan(scheme, plan_metric, cv.values, score_vals,
                (fs::path(plan_out) / "plan.json").string());
      write_manifest(plan_out, "plan",
                     json{{"model", plan_model},
                          {"metric", plan_metric},
                          {"k", plan_k},
                          {"bits", plan_bits},
                          {"alpha", plan_alpha},
                          {"granularity", plan_gran},
                          {"data_free", plan_data_free},
                          {"baseline_report", baseline_report}},
                     0, {"plan.json"}, elapsed());
    } else if (*quant) {
      ModelGraph g = load_model(qf.model_json);
      CalibrationSet calib =
          load_calibration(qf.calib_path, qf.batch_size, qf.batches);
      const Granularity gran = parse_granularity(quant_gran);
      const size_t num_modules = build_modules(g, gran).size();
      GranularityScheme scheme;
      if (quant_plan.empty()) {
        scheme.mask.assign(num_modules - 1, 0);
      } else {
        scheme = load_plan(quant_plan);
        if (scheme.mask.size() + 1 != num_modules) {
          throw std::runtime_error(
              "plan mask length " + std::to_string(scheme.mask.size()) +
              " does not match module count " + std::to_string(num_modules) +
              " at granularity " + quant_gran);
        }
      }
      ReconConfig cfg = make_config(qf, g);
      ReconstructionReport rep = run_pipeline(g, gran, scheme, calib, cfg);
      fs::create_directories(quant_out);
      save_report(rep, (fs::path(quant_out) / "report.json").string());
      save_trajectories(rep, (fs::path(quant_out) / "trajectory.csv").string());
      write_manifest(quant_out, "quantize",
                     json{{"model", qf.model_json},
                          {"calib", qf.calib_path},
                          {"plan", quant_plan},
                          {"granularity", quant_gran},
                          {"wbits", qf.wbits},
                          {"abits", qf.abits},
                          {"iters", qf.iters},
                          {"qdrop", qf.qdrop},
                          {"batches", qf.batches},
                          {"batch_size", qf.batch_size},
                          {"lr", qf.lr},
                          {"loss_ratio", cfg.recon_loss_weight},
                          {"first_layer_8bit", qf.first_layer_8bit}},
                     qf.seed, {"report.json", "trajectory.csv"}, elapsed());
    } else if (*st_batch) {
      ModelGraph g = load_model(bf.model_json);
      ReconConfig cfg = make_config(bf, g);
      std::vector<BatchStudyRow> rows = batch_size_study(
          g, parse_granularity(batch_gran), parse_int_list(batch_sizes),
          batch_seeds, cfg, batch_hw, batch_eval);
      fs::create_directories(batch_out);
      save_batch_study_csv(rows,
                           (fs::path(batch_out) / "batch_study.csv").string());
      write_manifest(batch_out, "study batch",
                     json{{"model", bf.model_json},
                          {"sizes", batch_sizes},
                          {"seeds", batch_seeds},
                          {"hw", batch_hw},
                          {"eval_n", batch_eval},
                          {"iters", bf.iters},
                          {"wbits", bf.wbits},
                          {"abits", bf.abits}},
                     bf.seed, {"batch_study.csv"}, elapsed());
    } else if (*st_schemes) {
      ModelGraph g = load_model(sf.model_json);
      CalibrationSet calib =
          load_calibration(sf.calib_path, sf.batch_size, sf.batches);
      int klo, khi;
      parse_k_range(scheme_k, &klo, &khi);
      ReconConfig cfg = make_config(sf, g);
      std::vector<SchemeSample> rows =
          sample_schemes(g, parse_granularity(scheme_gran), scheme_samples,
                         klo, khi, sf.seed, calib, cfg);
      fs::create_directories(scheme_out);
      save_scheme_samples_csv(
          rows, (fs::path(scheme_out) / "scheme_samples.csv").string());
      write_manifest(scheme_out, "study schemes",
                     json{{"model", sf.model_json},
                          {"calib", sf.calib_path},
                          {"samples", scheme_samples},
                          {"k", scheme_k},
                          {"iters", sf.iters},
                          {"wbits", sf.wbits},
                          {"abits", sf.abits}},
                     sf.seed, {"scheme_samples.csv"}, elapsed());
    } else if (*st_osc) {
      ReconstructionReport rep = load_report(osc_report);
      OscillationSummary s = oscillation_score(rep.final_losses());
      fs::create_directories(osc_out);
      save_oscillation_csv(s, (fs::path(osc_out) / "oscillation.csv").string());
      write_manifest(osc_out, "study oscillation",
                     json{{"report", osc_report}}, rep.seed,
                     {"oscillation.csv"}, elapsed());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
