#include "mrecg/reconstruction.hpp"

#include <algorithm>
#include <cmath>

#include "mrecg/rng.hpp"

namespace mrecg {

namespace {

// Clamp-range straight-through mask for one fake-quantized element.
inline bool ste_in_range(double v, double scale, const QuantParams& q) {
  const double qi = std::round(v / scale) + q.zero_point;
  return qi >= static_cast<double>(q.qmin()) &&
         qi <= static_cast<double>(q.qmax());
}

// Applies activation fake quantization in place, honoring an optional QDROP
// retain mask (1.0 keeps the element full precision). Fills ste with the
// pass-through derivative mask.
void apply_act_quant(Tensor& x, const QuantParams& q, const Tensor* retain,
                     std::vector<char>* ste) {
  const double scale = q.scale[0];
  ste->assign(x.data.size(), 1);
  for (int64_t i = 0; i < x.size(); ++i) {
    if (retain && retain->data[i] != 0.0) continue;
    (*ste)[i] = ste_in_range(x.data[i], scale, q) ? 1 : 0;
    x.data[i] = fake_quantize_value(x.data[i], scale, q);
  }
}

struct LayerTape {
  Tensor input;
  Tensor wq;
  std::vector<char> relu_mask;       // empty when no layer ReLU
  std::vector<char> post_add_mask;   // ReLU after residual add
  std::vector<char> act_ste;         // empty when position unquantized
  bool consumed_residual = false;
  int residual_source = -1;  // tape index of internal source, -1 external
};

}  // namespace

ModuleLossResult reconstruction_loss(
    const ModelGraph& g, const ModuleSpec& module,
    const std::vector<QuantParams>& weight_quant,
    const std::vector<SoftRoundState>& soft_states, const Tensor& fp_target,
    const Tensor& q_input, const ActQuantMap* act_quant,
    const std::vector<Tensor>* qdrop_masks, const Tensor* q_residual_in,
    bool compute_grads) {
  const int a = module.first_layer, b = module.last_layer;
  const int n = module.n_layers();
  check_shape(static_cast<int>(weight_quant.size()) == n &&
                  static_cast<int>(soft_states.size()) == n,
              "reconstruction_loss: per-layer state count mismatch");

  auto quant_at = [&](int pos) -> const QuantParams* {
    if (!act_quant || pos >= static_cast<int>(act_quant->size())) return nullptr;
    const auto& opt = (*act_quant)[pos];
    return opt ? &*opt : nullptr;
  };
  auto drop_at = [&](size_t idx) -> const Tensor* {
    if (!qdrop_masks || idx >= qdrop_masks->size()) return nullptr;
    return &(*qdrop_masks)[idx];
  };

  std::vector<LayerTape> tape(n);
  std::vector<char> entry_ste;
  std::vector<Tensor> saved(n);  // residual branches saved inside the module

  Tensor x = q_input;
  if (const QuantParams* q = quant_at(a)) {
    apply_act_quant(x, *q, drop_at(0), &entry_ste);
  }
  bool res_pending = q_residual_in != nullptr;
  const Tensor* res_external = q_residual_in;

  for (int j = 0; j < n; ++j) {
    const int i = a + j;
    const LayerSpec& spec = g.layers[i];
    const Block& blk = g.blocks[g.block_of(i)];
    int internal_source = -1;
    if (blk.has_residual && i == blk.first_layer) {
      saved[j] = x;
      internal_source = j;
      res_pending = true;
      res_external = nullptr;
    }
    tape[j].input = x;
    tape[j].wq = soft_quantize_weights(g.weights[i], weight_quant[j],
                                       soft_states[j]);
    Tensor y = conv2d_forward(x, tape[j].wq, g.biases[i], spec);
    if (spec.has_relu) {
      tape[j].relu_mask.resize(y.data.size());
      for (int64_t e = 0; e < y.size(); ++e) {
        const double v = y.data[e];
        tape[j].relu_mask[e] = (v > 0.0 && (!spec.relu6 || v < 6.0)) ? 1 : 0;
        y.data[e] = std::max(v, 0.0);
        if (spec.relu6) y.data[e] = std::min(y.data[e], 6.0);
      }
    }
    if (blk.has_residual && i == blk.last_layer && res_pending) {
      // Find the saving layer if it lies inside this module.
      int src = -1;
      if (blk.first_layer >= a) src = blk.first_layer - a;
      const Tensor& branch = src >= 0 ? saved[src] : *res_external;
      y = add(y, branch);
      tape[j].consumed_residual = true;
      tape[j].residual_source = src;
      res_pending = false;
      if (blk.relu_after_add) {
        tape[j].post_add_mask.resize(y.data.size());
        for (int64_t e = 0; e < y.size(); ++e) {
          tape[j].post_add_mask[e] = y.data[e] > 0.0 ? 1 : 0;
          y.data[e] = std::max(y.data[e], 0.0);
        }
      }
    }
    (void)internal_source;
    if (i < b) {
      if (const QuantParams* q = quant_at(i + 1)) {
        apply_act_quant(y, *q, drop_at(static_cast<size_t>(j) + 1),
                        &tape[j].act_ste);
      }
    }
    x = std::move(y);
  }

  check_shape(x.same_shape(fp_target),
              "reconstruction_loss: output shape " + shape_str(x.shape) +
                  " != target shape " + shape_str(fp_target.shape));
  const double inv_n = 1.0 / static_cast<double>(x.dim(0));
  ModuleLossResult res;
  for (int64_t e = 0; e < x.size(); ++e) {
    const double d = x.data[e] - fp_target.data[e];
    res.loss += d * d;
  }
  res.loss *= inv_n;
  if (!compute_grads) return res;

  Tensor grad(x.shape);
  for (int64_t e = 0; e < x.size(); ++e) {
    grad.data[e] = 2.0 * inv_n * (x.data[e] - fp_target.data[e]);
  }

  res.grad_v.resize(n);
  std::vector<Tensor> extra(n);  // residual gradient joining at layer inputs
  for (int j = n - 1; j >= 0; --j) {
    const int i = a + j;
    const LayerSpec& spec = g.layers[i];
    if (!tape[j].act_ste.empty()) {
      for (int64_t e = 0; e < grad.size(); ++e) {
        if (!tape[j].act_ste[e]) grad.data[e] = 0.0;
      }
    }
    if (tape[j].consumed_residual) {
      if (!tape[j].post_add_mask.empty()) {
        for (int64_t e = 0; e < grad.size(); ++e) {
          if (!tape[j].post_add_mask[e]) grad.data[e] = 0.0;
        }
      }
      const int src = tape[j].residual_source;
      if (src >= 0) {
        if (extra[src].size() == 0) {
          extra[src] = grad;
        } else {
          extra[src] = add(extra[src], grad);
        }
      }
    }
    if (!tape[j].relu_mask.empty()) {
      for (int64_t e = 0; e < grad.size(); ++e) {
        if (!tape[j].relu_mask[e]) grad.data[e] = 0.0;
      }
    }
    ConvGrads cg = conv2d_backward(tape[j].input, tape[j].wq, grad, spec);
    Tensor chain = soft_quantize_grad_v(g.weights[i], weight_quant[j],
                                        soft_states[j]);
    res.grad_v[j] = Tensor(chain.shape);
    for (int64_t e = 0; e < chain.size(); ++e) {
      res.grad_v[j].data[e] = cg.grad_weights.data[e] * chain.data[e];
    }
    grad = std::move(cg.grad_input);
    if (extra[j].size() != 0) grad = add(grad, extra[j]);
  }
  return res;
}

Reconstructor::Reconstructor(const ModelGraph& g,
                             std::vector<ModuleSpec> modules,
                             const CalibrationSet& calib,
                             const ReconConfig& cfg)
    : g_(g), modules_(std::move(modules)), calib_(calib), cfg_(cfg) {
  cfg_.validate();
  g_.validate();
  check_shape(!modules_.empty(), "Reconstructor: empty module list");
  check_shape(modules_.front().first_layer == 0 &&
                  modules_.back().last_layer == g_.num_layers() - 1,
              "Reconstructor: modules must cover the layer range");
  calibrate();
  fp_act_ = calib_.samples;
  q_act_ = calib_.samples;
  q_weights_ = g_.weights;
}

void Reconstructor::calibrate() {
  const int num_layers = g_.num_layers();
  weight_quant_.resize(num_layers);
  for (int i = 0; i < num_layers; ++i) {
    int bits = cfg_.weight_bits;
    if (cfg_.first_layer_8bit && i == 0) bits = std::max(bits, 8);
    weight_quant_[i] = calibrate_scale(g_.weights[i], bits, /*symmetric=*/true,
                                       /*per_channel=*/true);
  }
  act_quant_.assign(num_layers + 1, std::nullopt);
  if (cfg_.act_bits == 0) return;

  // Activation scales come from full-precision activations and stay fixed.
  Tensor x = calib_.samples;
  const int in_bits =
      cfg_.first_layer_8bit ? std::max(cfg_.act_bits, 8) : cfg_.act_bits;
  act_quant_[0] = calibrate_scale(x, in_bits, /*symmetric=*/false,
                                  /*per_channel=*/false);
  ResidualState rs;
  for (int i = 0; i < num_layers; ++i) {
    x = run_segment(g_, i, i, std::move(x), &rs, nullptr, nullptr);
    act_quant_[i + 1] = calibrate_scale(x, cfg_.act_bits, /*symmetric=*/false,
                                        /*per_channel=*/false);
  }
}

ModuleReport Reconstructor::reconstruct_module(int module_index) {
  check_shape(module_index == next_module_,
              "reconstruct_module: modules must be reconstructed in order; "
              "expected module " + std::to_string(next_module_));
  const ModuleSpec& module = modules_[module_index];
  const int a = module.first_layer, b = module.last_layer;
  const int n = module.n_layers();

  // Full-precision target at the module output (Eq. chain state advances
  // after optimization).
  ResidualState fp_res_after = fp_res_;
  fp_target_ = run_segment(g_, a, b, fp_act_, &fp_res_after, nullptr, nullptr);

  std::vector<QuantParams> wq(weight_quant_.begin() + a,
                              weight_quant_.begin() + b + 1);
  std::vector<SoftRoundState> states(n);
  for (int j = 0; j < n; ++j) {
    states[j] = init_soft_round(g_.weights[a + j], wq[j]);
  }

  // Effective-weight evaluation over the full calibration set (entry
  // quantization on, no QDROP).
  auto eval_loss = [&](const std::vector<Tensor>& eff) {
    Tensor q_in = q_act_;
    if (act_quant_[a]) {
      std::vector<char> ste;
      apply_act_quant(q_in, *act_quant_[a], nullptr, &ste);
    }
    ResidualState rs = q_res_;
    WeightFn wfn = [&](int layer) -> const Tensor& { return eff[layer - a]; };
    ActFn afn = [&](int layer, Tensor& t) {
      if (layer < b && act_quant_[layer + 1]) {
        std::vector<char> ste;
        apply_act_quant(t, *act_quant_[layer + 1], nullptr, &ste);
      }
    };
    Tensor out = run_segment(g_, a, b, q_in, &rs, &wfn, &afn);
    double acc = 0.0;
    for (int64_t e = 0; e < out.size(); ++e) {
      const double d = out.data[e] - fp_target_.data[e];
      acc += d * d;
    }
    return acc / static_cast<double>(out.dim(0));
  };

  ModuleReport report;
  report.first_layer = a;
  report.last_layer = b;
  {
    std::vector<Tensor> nearest(n);
    for (int j = 0; j < n; ++j) {
      nearest[j] = fake_quantize(g_.weights[a + j], wq[j]);
    }
    report.initial_loss = eval_loss(nearest);
  }

  // Pre-sliced per-batch views of the chain state.
  const int num_batches = calib_.num_batches;
  const int bs = calib_.batch_size;
  std::vector<Tensor> q_in_batches(num_batches), fp_tgt_batches(num_batches),
      res_batches;
  for (int k = 0; k < num_batches; ++k) {
    q_in_batches[k] = q_act_.slice0(k * bs, bs);
    fp_tgt_batches[k] = fp_target_.slice0(k * bs, bs);
  }
  if (q_res_.pending) {
    res_batches.resize(num_batches);
    for (int k = 0; k < num_batches; ++k) {
      res_batches[k] = q_res_.saved.slice0(k * bs, bs);
    }
  }

  // Shapes of QDROP masks: module input plus every internal position.
  std::vector<std::vector<int>> drop_shapes;
  if (cfg_.qdrop_prob > 0.0 && cfg_.act_bits > 0) {
    drop_shapes.push_back(q_in_batches[0].shape);
    Tensor probe = q_in_batches[0];
    ResidualState rs = q_res_;
    if (rs.pending) rs.saved = res_batches[0];
    for (int i = a; i < b; ++i) {
      probe = run_segment(g_, i, i, std::move(probe), &rs, nullptr, nullptr);
      drop_shapes.push_back(probe.shape);
    }
  }

  // Adam over all V variables of the module.
  struct AdamState {
    Tensor m, v;
  };
  std::vector<AdamState> adam(n);
  for (int j = 0; j < n; ++j) {
    adam[j].m = Tensor(states[j].v.shape);
    adam[j].v = Tensor(states[j].v.shape);
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Rng mod_rng = Rng(cfg_.seed).fork(0x71647270, module_index);  // 'qdrp'

  for (int64_t iter = 0; iter < cfg_.iterations; ++iter) {
    const double temp = anneal_temperature(iter, cfg_.iterations,
                                           cfg_.temp_start, cfg_.temp_end);
    for (int j = 0; j < n; ++j) states[j].beta = temp;
    const int k = static_cast<int>(iter % num_batches);

    std::vector<Tensor> drops;
    if (!drop_shapes.empty()) {
      Rng it_rng = mod_rng.fork(static_cast<uint64_t>(iter));
      for (const auto& shape : drop_shapes) {
        Tensor m(shape);
        for (double& v : m.data) {
          v = it_rng.next_bernoulli(cfg_.qdrop_prob) ? 1.0 : 0.0;
        }
        drops.push_back(std::move(m));
      }
    }

    ModuleLossResult lr = reconstruction_loss(
        g_, module, wq, states, fp_tgt_batches[k], q_in_batches[k],
        &act_quant_, drops.empty() ? nullptr : &drops,
        q_res_.pending ? &res_batches[k] : nullptr);
    if (!std::isfinite(lr.loss)) {
      throw std::runtime_error("reconstruction diverged (loss not finite) in "
                               "module layers " + std::to_string(a) + ".." +
                               std::to_string(b) + " at iteration " +
                               std::to_string(iter));
    }
    if (iter % cfg_.trajectory_stride == 0) {
      report.loss_trajectory.emplace_back(iter, lr.loss);
    }

    const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(iter + 1));
    const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(iter + 1));
    for (int j = 0; j < n; ++j) {
      RegularizerResult reg = rounding_regularizer(states[j]);
      Tensor& v = states[j].v;
      for (int64_t e = 0; e < v.size(); ++e) {
        const double gtot = cfg_.recon_loss_weight * lr.grad_v[j].data[e] +
                            cfg_.round_loss_weight * reg.grad_v.data[e];
        double& m1 = adam[j].m.data[e];
        double& m2 = adam[j].v.data[e];
        m1 = beta1 * m1 + (1.0 - beta1) * gtot;
        m2 = beta2 * m2 + (1.0 - beta2) * gtot * gtot;
        v.data[e] -= cfg_.learning_rate * (m1 / bias1) /
                     (std::sqrt(m2 / bias2) + adam_eps);
      }
    }
  }

  // Hard commitment and chain advance.
  std::vector<Tensor> hard(n);
  double sat_weighted = 0.0;
  int64_t total = 0;
  for (int j = 0; j < n; ++j) {
    hard[j] = hard_quantize_weights(g_.weights[a + j], wq[j], states[j]);
    q_weights_[a + j] = hard[j];
    sat_weighted += saturation_fraction(states[j]) *
                    static_cast<double>(states[j].v.size());
    total += states[j].v.size();
  }
  report.h_saturation_fraction = sat_weighted / static_cast<double>(total);
  report.final_loss = eval_loss(hard);

  {
    Tensor q_in = q_act_;
    if (act_quant_[a]) {
      std::vector<char> ste;
      apply_act_quant(q_in, *act_quant_[a], nullptr, &ste);
    }
    ResidualState q_res_after = q_res_;
    WeightFn wfn = [&](int layer) -> const Tensor& { return hard[layer - a]; };
    ActFn afn = [&](int layer, Tensor& t) {
      if (layer < b && act_quant_[layer + 1]) {
        std::vector<char> ste;
        apply_act_quant(t, *act_quant_[layer + 1], nullptr, &ste);
      }
    };
    q_act_ = run_segment(g_, a, b, std::move(q_in), &q_res_after, &wfn, &afn);
    q_res_ = std::move(q_res_after);
  }
  fp_act_ = fp_target_;
  fp_res_ = std::move(fp_res_after);
  ++next_module_;
  return report;
}

std::vector<ModuleReport> Reconstructor::run_all() {
  std::vector<ModuleReport> out;
  for (int m = 0; m < num_modules(); ++m) out.push_back(reconstruct_module(m));
  return out;
}

ReconstructionReport run_pipeline(const ModelGraph& g, Granularity gran,
                                  const GranularityScheme& scheme,
                                  const CalibrationSet& calib,
                                  const ReconConfig& cfg) {
  std::vector<ModuleSpec> base = build_modules(g, gran);
  std::vector<ModuleSpec> merged = apply_scheme(base, scheme);
  Reconstructor rec(g, merged, calib, cfg);
  ReconstructionReport report;
  report.modules = rec.run_all();
  report.scheme_mask = scheme.mask;
  report.granularity = gran == Granularity::kLayer ? "layer" : "block";
  report.seed = cfg.seed;
  return report;
}

}  // namespace mrecg
