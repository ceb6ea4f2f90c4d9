#include "mrecg/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mrecg {

void QuantParams::validate() const {
  if (bits < 2) throw std::invalid_argument("QuantParams: bits < 2");
  if (scale.empty()) throw std::invalid_argument("QuantParams: empty scale");
  for (double s : scale) {
    if (!(s > 0.0)) throw std::invalid_argument("QuantParams: scale <= 0");
  }
  if (symmetric && zero_point != 0) {
    throw std::invalid_argument("QuantParams: symmetric requires zero_point 0");
  }
}

namespace {

constexpr int kNumCandidates = 100;
constexpr double kShrinkLo = 0.2;
constexpr double kShrinkHi = 1.0;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// MSE of quantizing values [begin, end) with the given affine params.
double quant_mse(const double* begin, const double* end, double scale,
                 int zero_point, int64_t qmin, int64_t qmax) {
  double acc = 0.0;
  for (const double* p = begin; p != end; ++p) {
    double q = std::round(*p / scale) + zero_point;
    q = std::min(std::max(q, static_cast<double>(qmin)),
                 static_cast<double>(qmax));
    const double deq = (q - zero_point) * scale;
    const double d = deq - *p;
    acc += d * d;
  }
  return acc / static_cast<double>(end - begin);
}

// Picks the MSE-minimizing shrinkage candidate for one channel (or the whole
// tensor). Ties resolve to the larger scale (later candidate).
void calibrate_range(const double* begin, const double* end, int bits,
                     bool symmetric, double* out_scale, int* out_zp) {
  double lo = 0.0, hi = 0.0;
  for (const double* p = begin; p != end; ++p) {
    lo = std::min(lo, *p);
    hi = std::max(hi, *p);
  }
  if (lo == 0.0 && hi == 0.0) {
    *out_scale = 0.0;  // degenerate; caller decides
    *out_zp = 0;
    return;
  }
  const int64_t qmin = symmetric ? -(int64_t(1) << (bits - 1)) : 0;
  const int64_t qmax = symmetric ? (int64_t(1) << (bits - 1)) - 1
                                 : (int64_t(1) << bits) - 1;
  double best_mse = std::numeric_limits<double>::infinity();
  double best_scale = 0.0;
  int best_zp = 0;
  for (int j = 0; j < kNumCandidates; ++j) {
    const double f =
        kShrinkLo + (kShrinkHi - kShrinkLo) * j / (kNumCandidates - 1);
    double scale;
    int zp = 0;
    if (symmetric) {
      const double m = std::max(std::abs(lo), std::abs(hi));
      scale = f * m / static_cast<double>(qmax);
    } else {
      const double rlo = f * lo, rhi = f * hi;
      scale = (rhi - rlo) / static_cast<double>(qmax - qmin);
      if (scale <= 0.0) continue;
      zp = static_cast<int>(std::min(
          std::max(std::round(-rlo / scale), static_cast<double>(qmin)),
          static_cast<double>(qmax)));
    }
    if (scale <= 0.0) continue;
    const double mse = quant_mse(begin, end, scale, zp, qmin, qmax);
    if (mse < best_mse || (mse == best_mse && scale > best_scale)) {
      best_mse = mse;
      best_scale = scale;
      best_zp = zp;
    }
  }
  *out_scale = best_scale;
  *out_zp = best_zp;
}

}  // namespace

QuantParams calibrate_scale(const Tensor& t, int bits, bool symmetric,
                            bool per_channel) {
  if (t.size() == 0) throw std::invalid_argument("calibrate_scale: empty tensor");
  QuantParams q;
  q.bits = bits;
  q.symmetric = symmetric;
  if (!per_channel) {
    double scale;
    int zp;
    calibrate_range(t.data.data(), t.data.data() + t.size(), bits, symmetric,
                    &scale, &zp);
    if (scale == 0.0) {
      throw std::invalid_argument("calibrate_scale: degenerate range");
    }
    q.scale = {scale};
    q.zero_point = symmetric ? 0 : zp;
  } else {
    const int channels = t.dim(0);
    const int64_t stride = t.size() / channels;
    q.scale.resize(channels);
    bool any = false;
    for (int c = 0; c < channels; ++c) {
      double scale;
      int zp;
      calibrate_range(t.data.data() + c * stride,
                      t.data.data() + (c + 1) * stride, bits, symmetric,
                      &scale, &zp);
      // An all-zero channel is representable with any scale.
      q.scale[c] = scale == 0.0 ? 1.0 : scale;
      any = any || scale != 0.0;
      if (!symmetric && c == 0) q.zero_point = zp;
    }
    if (!any) throw std::invalid_argument("calibrate_scale: degenerate range");
    if (!symmetric) {
      throw std::invalid_argument(
          "calibrate_scale: per-channel asymmetric not supported");
    }
  }
  q.validate();
  return q;
}

double fake_quantize_value(double v, double scale, const QuantParams& q) {
  double qi = std::round(v / scale) + q.zero_point;
  qi = std::min(std::max(qi, static_cast<double>(q.qmin())),
                static_cast<double>(q.qmax()));
  return (qi - q.zero_point) * scale;
}

Tensor fake_quantize(const Tensor& t, const QuantParams& q) {
  q.validate();
  const int64_t stride = q.scale.size() == 1 ? t.size()
                                             : t.size() / t.dim(0);
  if (q.scale.size() > 1 &&
      static_cast<size_t>(t.dim(0)) != q.scale.size()) {
    throw std::invalid_argument("fake_quantize: per-channel scale count " +
                                std::to_string(q.scale.size()) +
                                " != channels " + std::to_string(t.dim(0)));
  }
  Tensor out = t;
  for (int64_t i = 0; i < out.size(); ++i) {
    out.data[i] = fake_quantize_value(t.data[i],
                                      scale_for_index(q, i, stride), q);
  }
  return out;
}

double SoftRoundState::rectified(double vi) const {
  const double s = 1.0 / (1.0 + std::exp(-vi));
  return std::min(std::max(s * (zeta - gamma) + gamma, 0.0), 1.0);
}

double SoftRoundState::rectified_grad(double vi) const {
  const double s = 1.0 / (1.0 + std::exp(-vi));
  const double raw = s * (zeta - gamma) + gamma;
  if (raw <= 0.0 || raw >= 1.0) return 0.0;
  return s * (1.0 - s) * (zeta - gamma);
}

SoftRoundState init_soft_round(const Tensor& w, const QuantParams& q) {
  q.validate();
  SoftRoundState s;
  s.v = Tensor(w.shape);
  const int64_t stride = q.scale.size() == 1 ? w.size() : w.size() / w.dim(0);
  for (int64_t i = 0; i < w.size(); ++i) {
    const double sc = scale_for_index(q, i, stride);
    const double frac = w.data[i] / sc - std::floor(w.data[i] / sc);
    double p = (frac - s.gamma) / (s.zeta - s.gamma);
    p = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
    s.v.data[i] = std::log(p / (1.0 - p));
  }
  return s;
}

namespace {

enum class RoundMode { kSoft, kHard };

Tensor quantize_with_state(const Tensor& w, const QuantParams& q,
                           const SoftRoundState& s, RoundMode mode) {
  q.validate();
  check_shape(w.same_shape(s.v), "soft_quantize: V shape " +
                                     shape_str(s.v.shape) +
                                     " != weight shape " + shape_str(w.shape));
  const int64_t stride = q.scale.size() == 1 ? w.size() : w.size() / w.dim(0);
  Tensor out = w;
  for (int64_t i = 0; i < w.size(); ++i) {
    const double sc = scale_for_index(q, i, stride);
    double h = s.rectified(s.v.data[i]);
    if (mode == RoundMode::kHard) h = h >= 0.5 ? 1.0 : 0.0;
    double qi = std::floor(w.data[i] / sc) + h + q.zero_point;
    qi = std::min(std::max(qi, static_cast<double>(q.qmin())),
                  static_cast<double>(q.qmax()));
    out.data[i] = (qi - q.zero_point) * sc;
  }
  return out;
}

}  // namespace

Tensor soft_quantize_weights(const Tensor& w, const QuantParams& q,
                             const SoftRoundState& s) {
  return quantize_with_state(w, q, s, RoundMode::kSoft);
}

Tensor hard_quantize_weights(const Tensor& w, const QuantParams& q,
                             const SoftRoundState& s) {
  return quantize_with_state(w, q, s, RoundMode::kHard);
}

Tensor soft_quantize_grad_v(const Tensor& w, const QuantParams& q,
                            const SoftRoundState& s) {
  q.validate();
  check_shape(w.same_shape(s.v), "soft_quantize_grad_v: shape mismatch");
  const int64_t stride = q.scale.size() == 1 ? w.size() : w.size() / w.dim(0);
  Tensor g(w.shape);
  for (int64_t i = 0; i < w.size(); ++i) {
    const double sc = scale_for_index(q, i, stride);
    const double qi =
        std::floor(w.data[i] / sc) + s.rectified(s.v.data[i]) + q.zero_point;
    const bool clamped = qi <= static_cast<double>(q.qmin()) ||
                         qi >= static_cast<double>(q.qmax());
    g.data[i] = clamped ? 0.0 : sc * s.rectified_grad(s.v.data[i]);
  }
  return g;
}

RegularizerResult rounding_regularizer(const SoftRoundState& s) {
  if (!(s.beta > 0.0)) {
    throw std::invalid_argument("rounding_regularizer: beta must be positive");
  }
  RegularizerResult r;
  r.grad_v = Tensor(s.v.shape);
  for (int64_t i = 0; i < s.v.size(); ++i) {
    const double h = s.rectified(s.v.data[i]);
    const double x = 2.0 * h - 1.0;
    const double ax = std::abs(x);
    r.value += 1.0 - std::pow(ax, s.beta);
    if (ax > 0.0 && ax < 1.0) {
      r.grad_v.data[i] = -s.beta * std::pow(ax, s.beta - 1.0) *
                         (x >= 0.0 ? 1.0 : -1.0) * 2.0 *
                         s.rectified_grad(s.v.data[i]);
    }
  }
  return r;
}

double anneal_temperature(int64_t iter, int64_t total_iters, double b_start,
                          double b_end) {
  if (iter < 0 || iter > total_iters || total_iters <= 0) {
    throw std::invalid_argument("anneal_temperature: iter out of range");
  }
  return b_start + (b_end - b_start) * static_cast<double>(iter) /
                       static_cast<double>(total_iters);
}

double saturation_fraction(const SoftRoundState& s) {
  if (s.v.size() == 0) return 1.0;
  int64_t sat = 0;
  for (int64_t i = 0; i < s.v.size(); ++i) {
    const double h = s.rectified(s.v.data[i]);
    if (h <= 1e-3 || h >= 1.0 - 1e-3) ++sat;
  }
  return static_cast<double>(sat) / static_cast<double>(s.v.size());
}

}  // namespace mrecg
