#ifndef MRECG_PARTITION_HPP_
#define MRECG_PARTITION_HPP_

#include <vector>

#include "mrecg/model.hpp"

namespace mrecg {

enum class Granularity { kLayer, kBlock };

// Binary merge mask over adjacent module pairs; mask[l] == 1 joins modules
// l and l+1.
struct GranularityScheme {
  std::vector<int> mask;
  int k_requested = 0;
  int k_achieved = 0;
};

// Layer mode: one module per conv layer. Block mode: one module per block.
std::vector<ModuleSpec> build_modules(const ModelGraph& g, Granularity gran);

// Same layer count and per-layer hyper-parameters equal except kernel size
// and channels. The groups pattern (dense vs depthwise) is compared, not the
// raw integer.
bool is_topologically_homogeneous(const ModuleSpec& a, const ModuleSpec& b,
                                  const ModelGraph& g);

// Merges maximal runs of mask 1s into single modules.
std::vector<ModuleSpec> apply_scheme(const std::vector<ModuleSpec>& modules,
                                     const GranularityScheme& scheme);

}  // namespace mrecg

#endif  // MRECG_PARTITION_HPP_
