#include "mrecg/capacity.hpp"

namespace mrecg {

double mod_cap(const ModuleSpec& m, const ModelGraph& g,
               double alpha_stride2) {
  double cap = 0.0;
  for (int i = m.first_layer; i <= m.last_layer; ++i) {
    const LayerSpec& l = g.layers[i];
    const double alpha = l.stride == 2 ? alpha_stride2 : 1.0;
    cap += static_cast<double>(l.weight_count()) * l.bitwidth_weights * alpha;
  }
  return cap;
}

CapacityVector capacity_vector(const std::vector<ModuleSpec>& modules,
                               const ModelGraph& g, CapacityMetric metric,
                               const std::vector<double>* baseline_losses,
                               double alpha_stride2) {
  CapacityVector cv;
  cv.metric = metric;
  if (metric == CapacityMetric::kModCap) {
    for (const ModuleSpec& m : modules) {
      cv.values.push_back(mod_cap(m, g, alpha_stride2));
    }
  } else {
    if (baseline_losses == nullptr) {
      throw std::invalid_argument(
          "capacity_vector: loss metric requires baseline reconstruction "
          "losses");
    }
    if (baseline_losses->size() != modules.size()) {
      throw std::invalid_argument(
          "capacity_vector: baseline loss count " +
          std::to_string(baseline_losses->size()) + " != module count " +
          std::to_string(modules.size()));
    }
    cv.values = *baseline_losses;
  }
  return cv;
}

std::string metric_name(CapacityMetric m) {
  return m == CapacityMetric::kModCap ? "modcap" : "loss";
}

CapacityMetric metric_from_name(const std::string& s) {
  if (s == "modcap") return CapacityMetric::kModCap;
  if (s == "loss") return CapacityMetric::kLoss;
  throw std::invalid_argument("unknown capacity metric: " + s);
}

}  // namespace mrecg
