#include "mrecg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "mrecg/quantizer.hpp"

namespace mrecg {

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void ModelGraph::validate() const {
  check_shape(layers.size() == weights.size() && layers.size() == biases.size(),
              "ModelGraph: layer/weight/bias count mismatch");
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].validate();
    const LayerSpec& l = layers[i];
    check_shape(weights[i].shape ==
                    std::vector<int>{l.out_channels, l.in_channels / l.groups,
                                     l.kernel_h, l.kernel_w},
                "ModelGraph: weight shape mismatch at layer " +
                    std::to_string(i));
    check_shape(biases[i].size() == static_cast<size_t>(l.out_channels),
                "ModelGraph: bias length mismatch at layer " +
                    std::to_string(i));
    if (i + 1 < layers.size()) {
      check_shape(layers[i + 1].in_channels == l.out_channels,
                  "ModelGraph: layers " + std::to_string(i) + " and " +
                      std::to_string(i + 1) + " do not compose");
    }
  }
  int expect = 0;
  for (const Block& b : blocks) {
    check_shape(b.first_layer == expect && b.last_layer >= b.first_layer,
                "ModelGraph: blocks must partition the layer sequence");
    expect = b.last_layer + 1;
  }
  check_shape(expect == num_layers(), "ModelGraph: blocks do not cover layers");
}

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weights,
                       const std::vector<double>& bias, const LayerSpec& spec) {
  spec.validate();
  check_shape(input.rank() == 4, "conv2d: input rank != 4, got " +
                                     shape_str(input.shape));
  check_shape(input.dim(1) == spec.in_channels,
              "conv2d: input channels " + std::to_string(input.dim(1)) +
                  " != spec in_channels " + std::to_string(spec.in_channels));
  check_shape(weights.shape == std::vector<int>{spec.out_channels,
                                                spec.in_channels / spec.groups,
                                                spec.kernel_h, spec.kernel_w},
              "conv2d: weight shape " + shape_str(weights.shape) +
                  " inconsistent with spec");
  check_shape(bias.size() == static_cast<size_t>(spec.out_channels),
              "conv2d: bias length " + std::to_string(bias.size()) +
                  " != out_channels");
  check_shape(input.dim(2) + 2 * spec.padding >= spec.kernel_h &&
                  input.dim(3) + 2 * spec.padding >= spec.kernel_w,
              "conv2d: kernel larger than padded input " +
                  shape_str(input.shape));
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                      const std::vector<double>& bias, const LayerSpec& spec) {
  check_conv_shapes(input, weights, bias, spec);
  const int n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const int ho = (h + 2 * spec.padding - spec.kernel_h) / spec.stride + 1;
  const int wo = (w + 2 * spec.padding - spec.kernel_w) / spec.stride + 1;
  const int cpg_in = spec.in_channels / spec.groups;
  const int cpg_out = spec.out_channels / spec.groups;

  Tensor out({n, spec.out_channels, ho, wo});
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      const int g = oc / cpg_out;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias[oc];
          for (int ic = 0; ic < cpg_in; ++ic) {
            for (int ky = 0; ky < spec.kernel_h; ++ky) {
              const int iy = oy * spec.stride + ky - spec.padding;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < spec.kernel_w; ++kx) {
                const int ix = ox * spec.stride + kx - spec.padding;
                if (ix < 0 || ix >= w) continue;
                acc += input.at4(b, g * cpg_in + ic, iy, ix) *
                       weights.at4(oc, ic, ky, kx);
              }
            }
          }
          out.at4(b, oc, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                          const Tensor& grad_output, const LayerSpec& spec) {
  check_conv_shapes(input, weights,
                    std::vector<double>(spec.out_channels, 0.0), spec);
  const int n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const int ho = (h + 2 * spec.padding - spec.kernel_h) / spec.stride + 1;
  const int wo = (w + 2 * spec.padding - spec.kernel_w) / spec.stride + 1;
  check_shape(grad_output.shape == std::vector<int>{n, spec.out_channels, ho,
                                                    wo},
              "conv2d_backward: grad_output shape " +
                  shape_str(grad_output.shape) + " != forward output shape");
  const int cpg_in = spec.in_channels / spec.groups;
  const int cpg_out = spec.out_channels / spec.groups;

  ConvGrads gr;
  gr.grad_weights = Tensor(weights.shape);
  gr.grad_input = Tensor(input.shape);
  gr.grad_bias.assign(spec.out_channels, 0.0);

  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      const int g = oc / cpg_out;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const double go = grad_output.at4(b, oc, oy, ox);
          if (go == 0.0) continue;
          gr.grad_bias[oc] += go;
          for (int ic = 0; ic < cpg_in; ++ic) {
            for (int ky = 0; ky < spec.kernel_h; ++ky) {
              const int iy = oy * spec.stride + ky - spec.padding;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < spec.kernel_w; ++kx) {
                const int ix = ox * spec.stride + kx - spec.padding;
                if (ix < 0 || ix >= w) continue;
                gr.grad_weights.at4(oc, ic, ky, kx) +=
                    go * input.at4(b, g * cpg_in + ic, iy, ix);
                gr.grad_input.at4(b, g * cpg_in + ic, iy, ix) +=
                    go * weights.at4(oc, ic, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return gr;
}

void fold_batchnorm(Tensor& weights, std::vector<double>& bias,
                    const std::vector<double>& bn_gamma,
                    const std::vector<double>& bn_beta,
                    const std::vector<double>& bn_mean,
                    const std::vector<double>& bn_var, double eps) {
  const size_t oc = bias.size();
  check_shape(bn_gamma.size() == oc && bn_beta.size() == oc &&
                  bn_mean.size() == oc && bn_var.size() == oc,
              "fold_batchnorm: vector lengths must equal out_channels");
  check_shape(weights.rank() == 4 &&
                  weights.dim(0) == static_cast<int>(oc),
              "fold_batchnorm: weight dim 0 must equal out_channels");
  for (double v : bn_var) {
    if (v < 0.0) throw std::invalid_argument("fold_batchnorm: negative variance");
  }
  const int64_t per_chan = weights.size() / weights.dim(0);
  for (size_t c = 0; c < oc; ++c) {
    const double f = bn_gamma[c] / std::sqrt(bn_var[c] + eps);
    for (int64_t i = 0; i < per_chan; ++i) {
      weights.data[c * per_chan + i] *= f;
    }
    bias[c] = (bias[c] - bn_mean[c]) * f + bn_beta[c];
  }
}

Tensor relu(const Tensor& t, bool clamp6) {
  Tensor out = t;
  for (double& v : out.data) {
    v = std::max(v, 0.0);
    if (clamp6) v = std::min(v, 6.0);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_shape(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape) +
                                   " vs " + shape_str(b.shape));
  Tensor out = a;
  for (int64_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor run_segment(const ModelGraph& g, int first, int last, Tensor x,
                   ResidualState* residual, const WeightFn* weight_override,
                   const ActFn* act) {
  check_shape(first >= 0 && last < g.num_layers() && first <= last,
              "run_segment: layer range out of bounds");
  ResidualState local;
  ResidualState* rs = residual ? residual : &local;
  for (int i = first; i <= last; ++i) {
    const Block& blk = g.blocks[g.block_of(i)];
    if (blk.has_residual && i == blk.first_layer) {
      rs->pending = true;
      rs->saved = x;
    }
    const Tensor& w = weight_override ? (*weight_override)(i) : g.weights[i];
    Tensor y = conv2d_forward(x, w, g.biases[i], g.layers[i]);
    if (g.layers[i].has_relu) y = relu(y, g.layers[i].relu6);
    if (blk.has_residual && i == blk.last_layer) {
      if (rs->pending) {
        y = add(y, rs->saved);
        rs->pending = false;
        rs->saved = Tensor();
      }
      if (blk.relu_after_add) y = relu(y);
    }
    if (act) (*act)(i, y);
    x = std::move(y);
  }
  return x;
}

Tensor module_forward(const ModelGraph& g, const ModuleSpec& module,
                      const std::vector<Tensor>& weights, const Tensor& input,
                      const std::vector<QuantParams>* weight_quant) {
  check_shape(static_cast<int>(weights.size()) == module.n_layers(),
              "module_forward: weights count " +
                  std::to_string(weights.size()) + " != layer count " +
                  std::to_string(module.n_layers()));
  std::vector<Tensor> effective(weights.size());
  for (size_t j = 0; j < weights.size(); ++j) {
    effective[j] = weight_quant ? fake_quantize(weights[j], (*weight_quant)[j])
                                : weights[j];
  }
  WeightFn wfn = [&](int layer) -> const Tensor& {
    return effective[layer - module.first_layer];
  };
  return run_segment(g, module.first_layer, module.last_layer, input, nullptr,
                     &wfn, nullptr);
}

}  // namespace mrecg
