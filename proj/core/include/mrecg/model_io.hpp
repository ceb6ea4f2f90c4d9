#ifndef MRECG_MODEL_IO_HPP_
#define MRECG_MODEL_IO_HPP_

#include <cstdint>
#include <optional>
#include <string>

#include "mrecg/model.hpp"

namespace mrecg {

// Calibration inputs, N = batch_size * num_batches samples in NCHW.
struct CalibrationSet {
  Tensor samples;
  int batch_size = 0;
  int num_batches = 0;

  Tensor batch(int i) const {
    if (i < 0 || i >= num_batches)
      throw std::out_of_range("CalibrationSet: batch index");
    return samples.slice0(i * batch_size, batch_size);
  }
};

enum class CalibDistribution { kGaussian, kUniform };

// On-disk model format: a schema-versioned JSON manifest (layers, blocks,
// offsets, checksum) plus a little-endian float32 weights blob. Weights are
// upcast to float64 on load; save_model first narrows to float32, so a
// save/load round trip of a loaded model is bit-exact.
void save_model(const ModelGraph& g, const std::string& json_path,
                const std::string& bin_path);
ModelGraph load_model(const std::string& json_path);

// Calibration blob: 16-byte little-endian header
//   u32 magic 'MRCB', u16 dtype (1 = f32), u32 N, u16 C, u16 H, u16 W
// followed by N*C*H*W little-endian float32 values, sample-major.
void save_calibration(const Tensor& samples, const std::string& path);
CalibrationSet load_calibration(const std::string& path, int batch_size,
                                int num_batches);

CalibrationSet generate_calibration(int n, int c, int h, int w,
                                    CalibDistribution dist, uint64_t seed,
                                    int batch_size);

// Deterministic residual CNN: num_blocks residual pairs of 3x3 convs at
// base_channels width, batchnorm-folded at generation so activations probe
// to roughly unit variance. bottleneck_at, when set, makes that block
// depthwise (groups == channels), giving it far lower capacity than its
// neighbors.
ModelGraph generate_synthetic_model(int num_blocks, int base_channels,
                                    std::optional<int> bottleneck_at,
                                    uint64_t seed, int input_hw = 8,
                                    int weight_bits = 8);

uint64_t fnv1a64(const void* data, size_t len);

}  // namespace mrecg

#endif  // MRECG_MODEL_IO_HPP_
