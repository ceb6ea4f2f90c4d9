#include "mrecg/model_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mrecg/nn.hpp"
#include "mrecg/rng.hpp"

namespace mrecg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;
constexpr uint32_t kCalibMagic = 0x4243524d;  // 'MRCB' little-endian

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void append_f32(std::vector<char>& blob, const std::vector<double>& vals) {
  for (double d : vals) {
    const float f = static_cast<float>(d);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    blob.push_back(static_cast<char>(u & 0xff));
    blob.push_back(static_cast<char>((u >> 8) & 0xff));
    blob.push_back(static_cast<char>((u >> 16) & 0xff));
    blob.push_back(static_cast<char>((u >> 24) & 0xff));
  }
}

std::vector<double> parse_f32(const char* p, size_t count) {
  std::vector<double> out(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t u = static_cast<uint8_t>(p[4 * i]) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(p[4 * i + 1]))
                  << 8) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(p[4 * i + 2]))
                  << 16) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(p[4 * i + 3]))
                  << 24);
    float f;
    std::memcpy(&f, &u, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

json layer_to_json(const LayerSpec& l) {
  return json{{"in_channels", l.in_channels},
              {"out_channels", l.out_channels},
              {"kernel_h", l.kernel_h},
              {"kernel_w", l.kernel_w},
              {"stride", l.stride},
              {"padding", l.padding},
              {"groups", l.groups},
              {"has_relu", l.has_relu},
              {"relu6", l.relu6},
              {"bitwidth_weights", l.bitwidth_weights}};
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.in_channels = j.at("in_channels");
  l.out_channels = j.at("out_channels");
  l.kernel_h = j.at("kernel_h");
  l.kernel_w = j.at("kernel_w");
  l.stride = j.at("stride");
  l.padding = j.at("padding");
  l.groups = j.at("groups");
  l.has_relu = j.at("has_relu");
  l.relu6 = j.at("relu6");
  l.bitwidth_weights = j.at("bitwidth_weights");
  return l;
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_model(const ModelGraph& g, const std::string& json_path,
                const std::string& bin_path) {
  g.validate();
  std::vector<char> blob;
  json layers = json::array();
  for (int i = 0; i < g.num_layers(); ++i) {
    json jl = layer_to_json(g.layers[i]);
    jl["weight_offset"] = blob.size();
    append_f32(blob, g.weights[i].data);
    jl["bias_offset"] = blob.size();
    append_f32(blob, g.biases[i]);
    layers.push_back(jl);
  }
  json blocks = json::array();
  for (const Block& b : g.blocks) {
    blocks.push_back(json{{"first_layer", b.first_layer},
                          {"last_layer", b.last_layer},
                          {"has_residual", b.has_residual},
                          {"relu_after_add", b.relu_after_add}});
  }
  json manifest{{"schema_version", kSchemaVersion},
                {"layers", layers},
                {"blocks", blocks},
                {"weights_file", fs::path(bin_path).filename().string()},
                {"weights_bytes", blob.size()},
                {"checksum_fnv1a64", hex64(fnv1a64(blob.data(), blob.size()))}};
  write_file(bin_path, blob.data(), blob.size());
  const std::string text = manifest.dump(2) + "\n";
  write_file(json_path, text.data(), text.size());
}

ModelGraph load_model(const std::string& json_path) {
  json manifest = json::parse(read_file(json_path));
  const int ver = manifest.at("schema_version");
  if (ver != kSchemaVersion) {
    throw std::runtime_error("unknown schema version " + std::to_string(ver) +
                             " in " + json_path);
  }
  const fs::path bin_path =
      fs::path(json_path).parent_path() /
      manifest.at("weights_file").get<std::string>();
  std::vector<char> blob = read_file(bin_path.string());
  const size_t expect_bytes = manifest.at("weights_bytes");
  if (blob.size() != expect_bytes) {
    throw std::runtime_error(
        "weights blob byte count mismatch: expected " +
        std::to_string(expect_bytes) + ", got " + std::to_string(blob.size()));
  }
  const std::string expect_sum = manifest.at("checksum_fnv1a64");
  const std::string got_sum = hex64(fnv1a64(blob.data(), blob.size()));
  if (expect_sum != got_sum) {
    throw std::runtime_error("weights blob checksum mismatch: expected " +
                             expect_sum + ", got " + got_sum);
  }

  ModelGraph g;
  for (const json& jl : manifest.at("layers")) {
    LayerSpec l = layer_from_json(jl);
    l.validate();
    const size_t woff = jl.at("weight_offset");
    const size_t boff = jl.at("bias_offset");
    const size_t wcount = static_cast<size_t>(l.weight_count());
    const size_t bcount = static_cast<size_t>(l.out_channels);
    if (boff != woff + 4 * wcount || boff + 4 * bcount > blob.size()) {
      throw std::runtime_error(
          "manifest/blob consistency error: layer offsets exceed blob of " +
          std::to_string(blob.size()) + " bytes");
    }
    g.layers.push_back(l);
    g.weights.emplace_back(
        std::vector<int>{l.out_channels, l.in_channels / l.groups, l.kernel_h,
                         l.kernel_w},
        parse_f32(blob.data() + woff, wcount));
    g.biases.push_back(parse_f32(blob.data() + boff, bcount));
  }
  for (const json& jb : manifest.at("blocks")) {
    g.blocks.push_back(Block{jb.at("first_layer"), jb.at("last_layer"),
                             jb.at("has_residual"), jb.at("relu_after_add")});
  }
  g.validate();
  return g;
}

void save_calibration(const Tensor& samples, const std::string& path) {
  check_shape(samples.rank() == 4, "save_calibration: samples must be NCHW");
  std::vector<char> blob;
  blob.reserve(16 + 4 * samples.size());
  auto put_u16 = [&](uint32_t v) {
    blob.push_back(static_cast<char>(v & 0xff));
    blob.push_back(static_cast<char>((v >> 8) & 0xff));
  };
  auto put_u32 = [&](uint32_t v) {
    put_u16(v & 0xffff);
    put_u16(v >> 16);
  };
  put_u32(kCalibMagic);
  put_u16(1);  // dtype f32
  put_u32(static_cast<uint32_t>(samples.dim(0)));
  put_u16(static_cast<uint32_t>(samples.dim(1)));
  put_u16(static_cast<uint32_t>(samples.dim(2)));
  put_u16(static_cast<uint32_t>(samples.dim(3)));
  append_f32(blob, samples.data);
  write_file(path, blob.data(), blob.size());
}

CalibrationSet load_calibration(const std::string& path, int batch_size,
                                int num_batches) {
  std::vector<char> blob = read_file(path);
  if (blob.size() < 16) throw std::runtime_error("calibration file too short");
  auto get_u16 = [&](size_t off) {
    return static_cast<uint32_t>(static_cast<uint8_t>(blob[off])) |
           (static_cast<uint32_t>(static_cast<uint8_t>(blob[off + 1])) << 8);
  };
  auto get_u32 = [&](size_t off) {
    return get_u16(off) | (get_u16(off + 2) << 16);
  };
  if (get_u32(0) != kCalibMagic) {
    throw std::runtime_error("bad calibration magic in " + path);
  }
  if (get_u16(4) != 1) {
    throw std::runtime_error("unsupported calibration dtype code " +
                             std::to_string(get_u16(4)));
  }
  const int n = static_cast<int>(get_u32(6));
  const int c = static_cast<int>(get_u16(10));
  const int h = static_cast<int>(get_u16(12));
  const int w = static_cast<int>(get_u16(14));
  const size_t count = static_cast<size_t>(n) * c * h * w;
  if (blob.size() != 16 + 4 * count) {
    throw std::runtime_error("calibration byte count mismatch: expected " +
                             std::to_string(16 + 4 * count) + ", got " +
                             std::to_string(blob.size()));
  }
  const int requested = batch_size * num_batches;
  if (requested > n) {
    throw std::runtime_error("insufficient calibration samples: requested " +
                             std::to_string(requested) + ", available " +
                             std::to_string(n));
  }
  Tensor all({n, c, h, w}, parse_f32(blob.data() + 16, count));
  CalibrationSet cs;
  cs.samples = all.slice0(0, requested);
  cs.batch_size = batch_size;
  cs.num_batches = num_batches;
  return cs;
}

CalibrationSet generate_calibration(int n, int c, int h, int w,
                                    CalibDistribution dist, uint64_t seed,
                                    int batch_size) {
  check_shape(n > 0 && c > 0 && h > 0 && w > 0,
              "generate_calibration: sizes must be positive");
  check_shape(batch_size > 0 && n % batch_size == 0,
              "generate_calibration: batch_size must divide N");
  Rng rng = Rng(seed).fork(0x63616c69);  // 'cali'
  Tensor t({n, c, h, w});
  for (double& v : t.data) {
    v = dist == CalibDistribution::kGaussian ? rng.next_gaussian()
                                             : 2.0 * rng.next_double() - 1.0;
  }
  return CalibrationSet{std::move(t), batch_size, n / batch_size};
}

namespace {

// Per-channel moments of a pre-activation output over N, H, W.
void channel_moments(const Tensor& t, std::vector<double>* mean,
                     std::vector<double>* var) {
  const int c = t.dim(1);
  mean->assign(c, 0.0);
  var->assign(c, 0.0);
  const int64_t per = static_cast<int64_t>(t.dim(0)) * t.dim(2) * t.dim(3);
  for (int b = 0; b < t.dim(0); ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < t.dim(2); ++y)
        for (int x = 0; x < t.dim(3); ++x) (*mean)[ch] += t.at4(b, ch, y, x);
  for (int ch = 0; ch < c; ++ch) (*mean)[ch] /= static_cast<double>(per);
  for (int b = 0; b < t.dim(0); ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < t.dim(2); ++y)
        for (int x = 0; x < t.dim(3); ++x) {
          const double d = t.at4(b, ch, y, x) - (*mean)[ch];
          (*var)[ch] += d * d;
        }
  for (int ch = 0; ch < c; ++ch) (*var)[ch] /= static_cast<double>(per);
}

}  // namespace

ModelGraph generate_synthetic_model(int num_blocks, int base_channels,
                                    std::optional<int> bottleneck_at,
                                    uint64_t seed, int input_hw,
                                    int weight_bits) {
  if (num_blocks < 2) {
    throw std::invalid_argument("generate_synthetic_model: num_blocks >= 2");
  }
  if (bottleneck_at && (*bottleneck_at < 0 || *bottleneck_at >= num_blocks)) {
    throw std::invalid_argument(
        "generate_synthetic_model: bottleneck_at out of range [0, " +
        std::to_string(num_blocks - 1) + "]");
  }
  check_shape(base_channels > 0 && input_hw >= 3,
              "generate_synthetic_model: bad sizes");

  const int c = base_channels;
  // The bottleneck block narrows to r channels through grouped (depthwise
  // style, groups == narrow width) convolutions, so it carries both fewer
  // weights and fewer activation channels than its neighbors.
  const int r = std::max(1, c / 2);
  ModelGraph g;
  Rng root(seed);
  for (int b = 0; b < num_blocks; ++b) {
    const bool bottleneck = bottleneck_at && *bottleneck_at == b;
    for (int j = 0; j < 2; ++j) {
      LayerSpec l;
      l.in_channels = bottleneck && j == 1 ? r : c;
      l.out_channels = bottleneck && j == 0 ? r : c;
      l.kernel_h = l.kernel_w = 3;
      l.stride = 1;
      l.padding = 1;
      l.groups = bottleneck ? r : 1;
      l.has_relu = j == 0;  // closing ReLU applied after the residual add
      l.bitwidth_weights = weight_bits;
      g.layers.push_back(l);

      Rng wr = root.fork(0x77656967, g.layers.size());  // 'weig'
      const int fan_in = (l.in_channels / l.groups) * l.kernel_h * l.kernel_w;
      const double std = std::sqrt(2.0 / fan_in);
      Tensor w({l.out_channels, l.in_channels / l.groups, 3, 3});
      for (double& x : w.data) x = std * wr.next_gaussian();
      g.weights.push_back(std::move(w));
      g.biases.emplace_back(l.out_channels, 0.0);
    }
    // The narrow bottleneck drops the shortcut, like the strided blocks of
    // mobile architectures: everything must pass through the low-capacity
    // path.
    g.blocks.push_back(Block{2 * b, 2 * b + 1, !bottleneck, !bottleneck});
  }

  // Fold per-layer batchnorm statistics from a probe batch so activations
  // stay near unit variance through the depth.
  Rng pr = root.fork(0x70726f62);  // 'prob'
  Tensor x({8, c, input_hw, input_hw});
  for (double& v : x.data) v = pr.next_gaussian();
  for (int b = 0; b < num_blocks; ++b) {
    const Tensor block_in = x;
    for (int j = 0; j < 2; ++j) {
      const int li = 2 * b + j;
      const int oc = g.layers[li].out_channels;
      const std::vector<double> ones(oc, 1.0), zeros(oc, 0.0);
      Tensor pre = conv2d_forward(x, g.weights[li], g.biases[li], g.layers[li]);
      std::vector<double> mean, var;
      channel_moments(pre, &mean, &var);
      fold_batchnorm(g.weights[li], g.biases[li], ones, zeros, mean, var,
                     1e-5);
      x = conv2d_forward(x, g.weights[li], g.biases[li], g.layers[li]);
      if (g.layers[li].has_relu) x = relu(x);
    }
    if (g.blocks[b].has_residual) x = add(x, block_in);
    if (g.blocks[b].relu_after_add) x = relu(x);
  }
  g.validate();
  return g;
}

}  // namespace mrecg
