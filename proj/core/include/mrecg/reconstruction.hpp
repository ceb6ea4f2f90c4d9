#ifndef MRECG_RECONSTRUCTION_HPP_
#define MRECG_RECONSTRUCTION_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrecg/model_io.hpp"
#include "mrecg/nn.hpp"
#include "mrecg/partition.hpp"
#include "mrecg/quantizer.hpp"

namespace mrecg {

struct ReconConfig {
  int64_t iterations = 20000;
  double recon_loss_weight = 0.01;  // 0.1 suits depthwise-heavy models
  double round_loss_weight = 1.0;
  double learning_rate = 1e-3;
  int batch_size = 0;  // 0: use the calibration set's batch size
  int num_batches = 16;
  double qdrop_prob = 0.0;  // 0.5 when QDROP is enabled
  uint64_t seed = 0;
  int weight_bits = 4;
  int act_bits = 4;  // 0 disables activation quantization
  bool first_layer_8bit = false;
  double temp_start = 20.0;
  double temp_end = 2.0;
  int64_t trajectory_stride = 100;

  void validate() const {
    check_shape(iterations > 0, "ReconConfig: iterations > 0");
    check_shape(qdrop_prob >= 0.0 && qdrop_prob <= 1.0,
                "ReconConfig: qdrop_prob in [0,1]");
    check_shape(weight_bits >= 2, "ReconConfig: weight_bits >= 2");
    check_shape(act_bits == 0 || act_bits >= 2, "ReconConfig: act_bits");
  }
};

struct ModuleReport {
  int first_layer = 0;
  int last_layer = 0;
  double initial_loss = 0.0;  // nearest rounding, before optimization
  double final_loss = 0.0;    // hard-rounded, full calibration set
  double h_saturation_fraction = 0.0;
  std::vector<std::pair<int64_t, double>> loss_trajectory;  // (iter, loss)
};

struct ReconstructionReport {
  std::vector<ModuleReport> modules;
  std::vector<int> scheme_mask;
  std::string granularity;
  uint64_t seed = 0;

  double final_loss() const { return modules.back().final_loss; }
  double max_previous_loss() const {
    double mx = 0.0;
    for (size_t i = 0; i + 1 < modules.size(); ++i)
      mx = std::max(mx, modules[i].final_loss);
    return mx;
  }
  std::vector<double> final_losses() const {
    std::vector<double> out;
    for (const ModuleReport& m : modules) out.push_back(m.final_loss);
    return out;
  }
};

// Per-position activation quantizers: index 0 is the network input, index
// p + 1 follows layer p. Disengaged entries disable quantization there.
using ActQuantMap = std::vector<std::optional<QuantParams>>;

struct ModuleLossResult {
  double loss = 0.0;
  std::vector<Tensor> grad_v;  // one per module layer
};

// Batch-mean squared Frobenius distance between the cached full-precision
// module output (fp_target) and the soft-quantized module output on q_input,
// with exact gradients w.r.t. every soft-rounding variable. qdrop_masks, when
// given, mark elements (1.0) whose activation quantization is skipped this
// evaluation; entry [0] applies to the module input, [1 + j] after module
// layer j (the final position is never quantized inside the loss).
ModuleLossResult reconstruction_loss(
    const ModelGraph& g, const ModuleSpec& module,
    const std::vector<QuantParams>& weight_quant,
    const std::vector<SoftRoundState>& soft_states, const Tensor& fp_target,
    const Tensor& q_input, const ActQuantMap* act_quant = nullptr,
    const std::vector<Tensor>* qdrop_masks = nullptr,
    const Tensor* q_residual_in = nullptr, bool compute_grads = true);

// Sequential module-by-module reconstruction. Quantized inputs propagate
// through the already-reconstructed prefix; each module owns its optimizer
// state.
class Reconstructor {
 public:
  Reconstructor(const ModelGraph& g, std::vector<ModuleSpec> modules,
                const CalibrationSet& calib, const ReconConfig& cfg);

  int num_modules() const { return static_cast<int>(modules_.size()); }
  const std::vector<ModuleSpec>& modules() const { return modules_; }

  // Modules must be reconstructed strictly in order.
  ModuleReport reconstruct_module(int module_index);
  std::vector<ModuleReport> run_all();

  const std::vector<Tensor>& quantized_weights() const { return q_weights_; }
  const ActQuantMap& act_quant() const { return act_quant_; }
  const std::vector<QuantParams>& weight_quant() const { return weight_quant_; }

 private:
  void calibrate();

  const ModelGraph& g_;
  std::vector<ModuleSpec> modules_;
  const CalibrationSet& calib_;
  ReconConfig cfg_;

  std::vector<QuantParams> weight_quant_;  // per layer
  ActQuantMap act_quant_;                  // per position
  std::vector<Tensor> q_weights_;          // hard-rounded after reconstruction

  // Chain state at the next pending module boundary.
  int next_module_ = 0;
  Tensor fp_act_;  // full-precision activation (raw)
  Tensor q_act_;   // quantized-chain activation (pre entry quantization)
  ResidualState fp_res_;
  ResidualState q_res_;
  Tensor fp_target_;  // full-precision output of the pending module
};

// Applies the scheme at the given granularity and reconstructs every module.
ReconstructionReport run_pipeline(const ModelGraph& g, Granularity gran,
                                  const GranularityScheme& scheme,
                                  const CalibrationSet& calib,
                                  const ReconConfig& cfg);

}  // namespace mrecg

#endif  // MRECG_RECONSTRUCTION_HPP_
