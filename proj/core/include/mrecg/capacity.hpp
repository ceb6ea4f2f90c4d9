#ifndef MRECG_CAPACITY_HPP_
#define MRECG_CAPACITY_HPP_

#include <string>
#include <vector>

#include "mrecg/model.hpp"
#include "mrecg/partition.hpp"

namespace mrecg {

enum class CapacityMetric { kModCap, kLoss };

struct CapacityVector {
  std::vector<double> values;
  CapacityMetric metric = CapacityMetric::kModCap;
};

// Data-free module capacity: sum over layers of weight-element count times
// bit-width times a stride factor (alpha for stride-2 layers, 1 otherwise).
// Biases are excluded.
double mod_cap(const ModuleSpec& m, const ModelGraph& g,
               double alpha_stride2 = 1.6);

// kModCap needs no data; kLoss takes per-module final losses from a baseline
// reconstruction run.
CapacityVector capacity_vector(const std::vector<ModuleSpec>& modules,
                               const ModelGraph& g, CapacityMetric metric,
                               const std::vector<double>* baseline_losses =
                                   nullptr,
                               double alpha_stride2 = 1.6);

std::string metric_name(CapacityMetric m);
CapacityMetric metric_from_name(const std::string& s);

}  // namespace mrecg

#endif  // MRECG_CAPACITY_HPP_
