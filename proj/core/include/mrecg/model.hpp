#ifndef MRECG_MODEL_HPP_
#define MRECG_MODEL_HPP_

#include <optional>
#include <vector>

#include "mrecg/tensor.hpp"

namespace mrecg {

// Hyper-parameters of one convolutional layer.
struct LayerSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool has_relu = false;
  bool relu6 = false;  // clamp variant used by inverted-residual nets
  int bitwidth_weights = 8;

  void validate() const {
    check_shape(in_channels > 0 && out_channels > 0, "LayerSpec: channels");
    check_shape(kernel_h > 0 && kernel_w > 0, "LayerSpec: kernel");
    check_shape(stride > 0 && padding >= 0, "LayerSpec: stride/padding");
    check_shape(groups > 0 && in_channels % groups == 0 &&
                    out_channels % groups == 0,
                "LayerSpec: groups must divide channels");
    check_shape(bitwidth_weights >= 2, "LayerSpec: bitwidth >= 2");
  }

  bool is_depthwise() const {
    return groups == in_channels && groups == out_channels;
  }
  int64_t weight_count() const {
    return static_cast<int64_t>(out_channels) * (in_channels / groups) *
           kernel_h * kernel_w;
  }
};

// Residual grouping of consecutive layers. When has_residual, the block input
// is added to the last conv output; relu_after_add applies the closing ReLU
// after that addition (the last layer itself then carries has_relu=false).
struct Block {
  int first_layer = 0;
  int last_layer = 0;
  bool has_residual = false;
  bool relu_after_add = false;
};

struct ModelGraph {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> weights;                // OIHW per layer
  std::vector<std::vector<double>> biases;    // per layer, length out_channels
  std::vector<Block> blocks;

  int num_layers() const { return static_cast<int>(layers.size()); }

  int block_of(int layer) const {
    for (size_t b = 0; b < blocks.size(); ++b) {
      if (layer >= blocks[b].first_layer && layer <= blocks[b].last_layer)
        return static_cast<int>(b);
    }
    throw std::invalid_argument("ModelGraph: layer not covered by any block");
  }

  // Consecutive layer shapes compose and blocks partition the layer range.
  void validate() const;
};

// One reconstruction unit: a contiguous layer range of the graph.
struct ModuleSpec {
  int first_layer = 0;
  int last_layer = 0;
  bool has_residual = false;  // true when the range closes a residual block

  int n_layers() const { return last_layer - first_layer + 1; }
};

}  // namespace mrecg

#endif  // MRECG_MODEL_HPP_
