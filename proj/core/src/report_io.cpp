#include "mrecg/report_io.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace mrecg {

using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return json::parse(in);
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void save_report(const ReconstructionReport& r, const std::string& path) {
  json modules = json::array();
  for (const ModuleReport& m : r.modules) {
    json traj = json::array();
    for (const auto& [iter, loss] : m.loss_trajectory) {
      traj.push_back(json::array({iter, loss}));
    }
    modules.push_back(json{{"first_layer", m.first_layer},
                           {"last_layer", m.last_layer},
                           {"initial_loss", m.initial_loss},
                           {"final_loss", m.final_loss},
                           {"h_saturation_fraction", m.h_saturation_fraction},
                           {"loss_trajectory", traj}});
  }
  json j{{"modules", modules},
         {"scheme_mask", r.scheme_mask},
         {"granularity", r.granularity},
         {"seed", r.seed}};
  write_text(path, j.dump(2) + "\n");
}

ReconstructionReport load_report(const std::string& path) {
  json j = read_json(path);
  ReconstructionReport r;
  for (const json& jm : j.at("modules")) {
    ModuleReport m;
    m.first_layer = jm.at("first_layer");
    m.last_layer = jm.at("last_layer");
    m.initial_loss = jm.at("initial_loss");
    m.final_loss = jm.at("final_loss");
    m.h_saturation_fraction = jm.at("h_saturation_fraction");
    for (const json& jt : jm.at("loss_trajectory")) {
      m.loss_trajectory.emplace_back(jt.at(0).get<int64_t>(),
                                     jt.at(1).get<double>());
    }
    r.modules.push_back(std::move(m));
  }
  r.scheme_mask = j.at("scheme_mask").get<std::vector<int>>();
  r.granularity = j.at("granularity");
  r.seed = j.at("seed");
  return r;
}

void save_trajectories(const ReconstructionReport& r, const std::string& path) {
  std::string out = "module_index,iter,loss\n";
  for (size_t m = 0; m < r.modules.size(); ++m) {
    for (const auto& [iter, loss] : r.modules[m].loss_trajectory) {
      out += std::to_string(m) + "," + std::to_string(iter) + "," +
             format_double(loss) + "\n";
    }
  }
  write_text(path, out);
}

void save_plan(const GranularityScheme& scheme, const std::string& metric,
               const std::vector<double>& capacity,
               const std::vector<double>& pair_scores,
               const std::string& path) {
  json j{{"mask", scheme.mask},
         {"k", scheme.k_requested},
         {"k_achieved", scheme.k_achieved},
         {"metric", metric},
         {"capacity", capacity},
         {"pair_scores", pair_scores}};
  write_text(path, j.dump(2) + "\n");
}

GranularityScheme load_plan(const std::string& path, std::string* metric_out) {
  json j = read_json(path);
  GranularityScheme s;
  s.mask = j.at("mask").get<std::vector<int>>();
  s.k_requested = j.at("k");
  s.k_achieved = j.contains("k_achieved") ? j.at("k_achieved").get<int>()
                                          : s.k_requested;
  if (metric_out) *metric_out = j.at("metric");
  return s;
}

void save_oscillation_csv(const OscillationSummary& s,
                          const std::string& path) {
  std::string out = "score,num_drops,max_loss,final_loss\n";
  out += format_double(s.score) + "," + std::to_string(s.num_drops) + "," +
         format_double(s.max_loss) + "," + format_double(s.final_loss) + "\n";
  write_text(path, out);
}

void save_scheme_samples_csv(const std::vector<SchemeSample>& rows,
                             const std::string& path) {
  std::string out = "sample_index,mask,k,max_prev_loss,final_loss\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    std::string mask;
    for (int m : rows[i].mask) mask += m ? '1' : '0';
    out += std::to_string(i) + "," + mask + "," + std::to_string(rows[i].k) +
           "," + format_double(rows[i].max_prev_loss) + "," +
           format_double(rows[i].final_loss) + "\n";
  }
  write_text(path, out);
}

void save_batch_study_csv(const std::vector<BatchStudyRow>& rows,
                          const std::string& path) {
  std::string out = "size,median_final_loss,loss_mad\n";
  for (const BatchStudyRow& r : rows) {
    out += std::to_string(r.size) + "," + format_double(r.median_final_loss) +
           "," + format_double(r.loss_mad) + "\n";
  }
  write_text(path, out);
}

}  // namespace mrecg
