#include "mrecg/solver.hpp"

#include <algorithm>
#include <numeric>

namespace mrecg {

std::vector<PairScore> score_pairs(const CapacityVector& cm) {
  if (cm.values.size() < 2) {
    throw std::invalid_argument("score_pairs: need at least 2 modules");
  }
  std::vector<PairScore> out;
  for (size_t l = 0; l + 1 < cm.values.size(); ++l) {
    const double d = cm.values[l] - cm.values[l + 1];
    out.push_back({static_cast<int>(l), d * d});
  }
  return out;
}

GranularityScheme select_topk(const std::vector<PairScore>& scores, int k,
                              SelectMode mode) {
  if (k < 0 || k > static_cast<int>(scores.size())) {
    throw std::invalid_argument("select_topk: k out of range");
  }
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a].score != scores[b].score)
      return scores[a].score > scores[b].score;
    return scores[a].pair_index < scores[b].pair_index;
  });

  GranularityScheme scheme;
  scheme.mask.assign(scores.size(), 0);
  scheme.k_requested = k;
  if (mode == SelectMode::kDataDependent) {
    for (int i = 0; i < k; ++i) scheme.mask[scores[order[i]].pair_index] = 1;
    scheme.k_achieved = k;
  } else {
    // A merged pair is no longer topologically homogeneous with its
    // neighbors, so no selected pair may share a module with another.
    std::vector<char> used(scores.size() + 1, 0);
    int taken = 0;
    for (int idx : order) {
      if (taken == k) break;
      const int l = scores[idx].pair_index;
      if (used[l] || used[l + 1]) continue;
      scheme.mask[l] = 1;
      used[l] = used[l + 1] = 1;
      ++taken;
    }
    scheme.k_achieved = taken;
  }
  return scheme;
}

double objective_value(const std::vector<int>& mask, const CapacityVector& cm,
                       int k, double lambda) {
  const std::vector<PairScore> scores = score_pairs(cm);
  if (mask.size() != scores.size()) {
    throw std::invalid_argument("objective_value: mask length mismatch");
  }
  double sel = 0.0;
  int card = 0;
  for (size_t l = 0; l < mask.size(); ++l) {
    if (mask[l]) {
      sel += scores[l].score;
      ++card;
    }
  }
  const double excess = static_cast<double>(card - k);
  return -sel + lambda * excess * excess;
}

double default_lambda(const std::vector<PairScore>& scores) {
  double mx = 0.0;
  for (const PairScore& s : scores) mx = std::max(mx, s.score);
  return mx * static_cast<double>(scores.size() + 1);
}

}  // namespace mrecg
