#ifndef MRECG_QUANTIZER_HPP_
#define MRECG_QUANTIZER_HPP_

#include <vector>

#include "mrecg/tensor.hpp"

namespace mrecg {

// Uniform affine fake-quantizer parameters. scale is per-tensor (size 1) or
// per-output-channel (size = dim 0 of the tensor it quantizes).
struct QuantParams {
  std::vector<double> scale;
  int zero_point = 0;  // 0 when symmetric
  int bits = 8;
  bool symmetric = true;

  // Integer grid bounds: [-2^(b-1), 2^(b-1)-1] symmetric-signed,
  // [0, 2^b - 1] asymmetric.
  int64_t qmin() const { return symmetric ? -(int64_t(1) << (bits - 1)) : 0; }
  int64_t qmax() const {
    return symmetric ? (int64_t(1) << (bits - 1)) - 1
                     : (int64_t(1) << bits) - 1;
  }
  void validate() const;
};

// MSE-optimal scale over a deterministic candidate grid: 100 linear steps of
// max-abs (or min/max) shrinkage factors in [0.2, 1.0]; ties resolve to the
// larger scale. Per-channel calibration treats dim 0 as the channel axis.
QuantParams calibrate_scale(const Tensor& t, int bits, bool symmetric,
                            bool per_channel);

// dequant(clamp(round(t / scale) + zero_point, grid)). Idempotent.
Tensor fake_quantize(const Tensor& t, const QuantParams& q);
double fake_quantize_value(double v, double scale, const QuantParams& q);

// Learnable soft-rounding state (rectified-sigmoid relaxation).
struct SoftRoundState {
  Tensor v;            // continuous rounding variables, shaped like the weights
  double zeta = 1.1;   // stretch upper
  double gamma = -0.1; // stretch lower
  double beta = 20.0;  // current regularizer temperature

  // h(V) = clip(sigmoid(V)(zeta - gamma) + gamma, 0, 1)
  double rectified(double vi) const;
  // dh/dV, zero where the stretch clips.
  double rectified_grad(double vi) const;
};

// Initializes V so that h(V) equals the fractional part of w/scale
// (soft quantization starts at the unrounded weights).
SoftRoundState init_soft_round(const Tensor& w, const QuantParams& q);

// dequant(clamp(floor(w/scale) + h(V), grid)); differentiable in V wherever
// h is strictly interior and the grid clamp is inactive.
Tensor soft_quantize_weights(const Tensor& w, const QuantParams& q,
                             const SoftRoundState& s);

// Chain-rule factor d soft_quantize / dV per element (includes scale).
Tensor soft_quantize_grad_v(const Tensor& w, const QuantParams& q,
                            const SoftRoundState& s);

// Hard commitment: h(V) >= 0.5 rounds up.
Tensor hard_quantize_weights(const Tensor& w, const QuantParams& q,
                             const SoftRoundState& s);

struct RegularizerResult {
  double value = 0.0;
  Tensor grad_v;
};

// sum(1 - |2h(V) - 1|^beta) with exact gradient (zero at saturated h).
RegularizerResult rounding_regularizer(const SoftRoundState& s);

// Linear temperature schedule b(0) = b_start, b(total) = b_end.
double anneal_temperature(int64_t iter, int64_t total_iters,
                          double b_start = 20.0, double b_end = 2.0);

// Fraction of h(V) within 1e-3 of {0, 1}.
double saturation_fraction(const SoftRoundState& s);

// Per-channel scale lookup for a flat element index of a tensor whose dim 0
// is the channel axis.
inline double scale_for_index(const QuantParams& q, int64_t flat_index,
                              int64_t per_channel_stride) {
  if (q.scale.size() == 1) return q.scale[0];
  return q.scale[static_cast<size_t>(flat_index / per_channel_stride)];
}

}  // namespace mrecg

#endif  // MRECG_QUANTIZER_HPP_
