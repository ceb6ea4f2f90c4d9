#ifndef MRECG_SOLVER_HPP_
#define MRECG_SOLVER_HPP_

#include <vector>

#include "mrecg/capacity.hpp"
#include "mrecg/partition.hpp"

namespace mrecg {

struct PairScore {
  int pair_index = 0;  // joins modules pair_index and pair_index + 1
  double score = 0.0;  // squared capacity difference
};

// Squared adjacent capacity differences, in pair order.
std::vector<PairScore> score_pairs(const CapacityVector& cm);

enum class SelectMode {
  // Top-k by score; runs of adjacent selections merge more than two modules.
  kDataDependent,
  // Greedy descending by score, skipping pairs that share a module with an
  // already-selected pair; k_achieved may fall short of k.
  kDataFree,
};

// Ties break to the lowest pair index.
GranularityScheme select_topk(const std::vector<PairScore>& scores, int k,
                              SelectMode mode);

// Mask objective: -sum(score_l * m_l) + lambda * (sum(m) - k)^2. The selection
// term is negated so that minimizing prefers masks covering the largest
// squared capacity differences; the cardinality penalty is kept as printed.
double objective_value(const std::vector<int>& mask, const CapacityVector& cm,
                       int k, double lambda);

// Hard-constraint default: makes any cardinality violation dominate the
// selection term.
double default_lambda(const std::vector<PairScore>& scores);

}  // namespace mrecg

#endif  // MRECG_SOLVER_HPP_
