#include "mrecg/partition.hpp"

#include <algorithm>

namespace mrecg {

std::vector<ModuleSpec> build_modules(const ModelGraph& g, Granularity gran) {
  g.validate();
  std::vector<ModuleSpec> out;
  if (gran == Granularity::kLayer) {
    for (int i = 0; i < g.num_layers(); ++i) {
      const Block& b = g.blocks[g.block_of(i)];
      out.push_back({i, i, b.has_residual && i == b.last_layer});
    }
  } else {
    for (const Block& b : g.blocks) {
      out.push_back({b.first_layer, b.last_layer, b.has_residual});
    }
  }
  return out;
}

namespace {

enum class GroupsPattern { kDense, kDepthwise, kGrouped };

GroupsPattern groups_pattern(const LayerSpec& l) {
  if (l.groups == 1) return GroupsPattern::kDense;
  if (l.is_depthwise()) return GroupsPattern::kDepthwise;
  return GroupsPattern::kGrouped;
}

}  // namespace

bool is_topologically_homogeneous(const ModuleSpec& a, const ModuleSpec& b,
                                  const ModelGraph& g) {
  if (a.n_layers() != b.n_layers()) return false;
  if (a.has_residual != b.has_residual) return false;
  for (int j = 0; j < a.n_layers(); ++j) {
    const LayerSpec& la = g.layers[a.first_layer + j];
    const LayerSpec& lb = g.layers[b.first_layer + j];
    // Kernel size and channels are exempt; padding follows kernel size and is
    // exempt with it.
    if (la.stride != lb.stride) return false;
    if (la.has_relu != lb.has_relu || la.relu6 != lb.relu6) return false;
    if (groups_pattern(la) != groups_pattern(lb)) return false;
  }
  return true;
}

std::vector<ModuleSpec> apply_scheme(const std::vector<ModuleSpec>& modules,
                                     const GranularityScheme& scheme) {
  if (scheme.mask.size() + 1 != modules.size()) {
    throw std::invalid_argument(
        "apply_scheme: mask length " + std::to_string(scheme.mask.size()) +
        " != module count - 1 (" + std::to_string(modules.size()) + " modules)");
  }
  std::vector<ModuleSpec> out;
  size_t i = 0;
  while (i < modules.size()) {
    size_t j = i;
    while (j < scheme.mask.size() && scheme.mask[j] == 1) ++j;
    ModuleSpec merged = modules[i];
    merged.last_layer = modules[j].last_layer;
    merged.has_residual = modules[j].has_residual;
    out.push_back(merged);
    i = j + 1;
  }
  return out;
}

}  // namespace mrecg
