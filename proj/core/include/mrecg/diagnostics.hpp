#ifndef MRECG_DIAGNOSTICS_HPP_
#define MRECG_DIAGNOSTICS_HPP_

#include <cstdint>
#include <vector>

#include "mrecg/reconstruction.hpp"

namespace mrecg {

// Total downward variation of the per-module final losses: zero exactly when
// the sequence is non-decreasing.
struct OscillationSummary {
  double score = 0.0;
  int num_drops = 0;
  double max_loss = 0.0;
  double final_loss = 0.0;
};

OscillationSummary oscillation_score(const std::vector<double>& final_losses);

struct SchemeSample {
  std::vector<int> mask;
  int k = 0;
  double max_prev_loss = 0.0;
  double final_loss = 0.0;
};

// Row 0 is always the zero-mask baseline; rows 1..num_samples are uniformly
// sampled masks with k drawn from [k_min, k_max]. Runs execute independently
// (parallelism capped by MRECG_THREADS), results are ordered by sample index.
std::vector<SchemeSample> sample_schemes(const ModelGraph& g, Granularity gran,
                                         int num_samples, int k_min, int k_max,
                                         uint64_t seed,
                                         const CalibrationSet& calib,
                                         const ReconConfig& cfg);

struct BatchStudyRow {
  int size = 0;
  double median_final_loss = 0.0;
  double loss_mad = 0.0;
};

// For each calibration batch size, runs the pipeline over independent seeds
// and reports median and median-absolute-deviation of the end-to-end
// quantized-vs-full-precision loss on a fixed held-out evaluation set (the
// expectation proxy the calibration batch approximates).
std::vector<BatchStudyRow> batch_size_study(const ModelGraph& g,
                                            Granularity gran,
                                            const std::vector<int>& sizes,
                                            int seeds_per_size,
                                            const ReconConfig& cfg,
                                            int input_hw, int eval_size = 256);

// End-to-end mean squared Frobenius distance between the full-precision and
// quantized networks on the given samples.
double network_loss(const ModelGraph& g, const std::vector<Tensor>& q_weights,
                    const ActQuantMap& act_quant, const Tensor& samples);

double spearman_correlation(const std::vector<double>& x,
                            const std::vector<double>& y);

double median(std::vector<double> v);
double median_abs_deviation(const std::vector<double>& v);

// Worker cap from MRECG_THREADS (default: hardware concurrency).
int worker_threads();

}  // namespace mrecg

#endif  // MRECG_DIAGNOSTICS_HPP_
