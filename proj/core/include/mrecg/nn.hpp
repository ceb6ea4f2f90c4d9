#ifndef MRECG_NN_HPP_
#define MRECG_NN_HPP_

#include <functional>
#include <optional>
#include <vector>

#include "mrecg/model.hpp"
#include "mrecg/tensor.hpp"

namespace mrecg {

struct QuantParams;  // quantizer.hpp

// Cross-correlation (no kernel flip). Input NCHW, weights OIHW with
// grouped layout (O, I/groups, kh, kw). Output spatial dims are
// floor((H + 2p - k)/s) + 1.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                      const std::vector<double>& bias, const LayerSpec& spec);

struct ConvGrads {
  Tensor grad_weights;
  Tensor grad_input;
  std::vector<double> grad_bias;
};

// Exact gradients of conv2d_forward.
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights,
                          const Tensor& grad_output, const LayerSpec& spec);

// Folds y = gamma * (conv(x) - mean) / sqrt(var + eps) + beta into the conv
// weights and bias in place.
void fold_batchnorm(Tensor& weights, std::vector<double>& bias,
                    const std::vector<double>& bn_gamma,
                    const std::vector<double>& bn_beta,
                    const std::vector<double>& bn_mean,
                    const std::vector<double>& bn_var, double eps);

Tensor relu(const Tensor& t, bool clamp6 = false);
Tensor add(const Tensor& a, const Tensor& b);

// Hooks for executing a layer range of a graph with substituted weights
// and/or activation post-processing (fake quantization).
using WeightFn = std::function<const Tensor&(int layer)>;
using ActFn = std::function<void(int layer, Tensor& x)>;

// Carries a residual branch across module boundaries when a block is split
// between modules (layer granularity).
struct ResidualState {
  bool pending = false;
  Tensor saved;
};

// Executes layers [first, last] of g on x, honoring the block residual
// structure. act, when set, is applied to each layer-position output (after
// ReLU / residual add).
Tensor run_segment(const ModelGraph& g, int first, int last, Tensor x,
                   ResidualState* residual, const WeightFn* weight_override,
                   const ActFn* act);

// Evaluates one module: each layer's conv (+ optional ReLU), residual input
// added at the closing block end. With quant present, layer weights are
// fake-quantized per the given per-layer params before use.
Tensor module_forward(const ModelGraph& g, const ModuleSpec& module,
                      const std::vector<Tensor>& weights, const Tensor& input,
                      const std::vector<QuantParams>* weight_quant = nullptr);

}  // namespace mrecg

#endif  // MRECG_NN_HPP_
