#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "d2ip/geometry.hpp"
#include "d2ip/tensor_ops.hpp"

namespace d2ip {

/// Hyperparameters of the volumetric prior network.
///
/// Channels: the stem outputs base_channels, the three encoder stages keep
/// (b, 2b, 4b) and the ASPP bottleneck widens to 8b.
struct NetworkConfig {
  int base_channels = 8;
  int depth = 3;
  std::vector<int> aspp_dilations{1, 2, 4};
  bool use_depthwise = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Hash of the fields that shape the parameter schema (the seed is excluded).
  std::uint64_t hash() const;
};

enum class Provenance { kaiming_init, upws, tpp };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& name);

enum class ParamKind { conv_weight, bias, norm_scale, norm_shift };

struct ParamSpec {
  std::string name;
  std::vector<int> dims;
  ParamKind kind = ParamKind::conv_weight;
  int fan_in = 1;

  std::size_t size() const noexcept;
};

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;
};

/// Parameters theta of one network instance plus their bookkeeping.
struct ParameterState {
  std::vector<NamedTensor> tensors;
  int iteration = 0;
  Provenance provenance = Provenance::kaiming_init;
  std::uint64_t config_hash = 0;

  std::size_t scalar_count() const noexcept;
  /// FNV-1a over every tensor's raw bytes, in schema order.
  std::uint64_t checksum() const;
  bool all_finite() const;
};

/// One gradient buffer per parameter tensor, in schema order.
using ParameterGradients = std::vector<std::vector<double>>;

ParameterGradients zero_gradients(const ParameterState& theta);

/// Ordered parameter schema; depends on the config only, not on the grid.
std::vector<ParamSpec> parameter_schema(const NetworkConfig& cfg);

/// Kaiming-normal conv weights (std sqrt(2 / fan_in)), zero biases, unit
/// norm scales and zero shifts. Deterministic in cfg.seed.
ParameterState init_parameters(const NetworkConfig& cfg);

std::size_t count_parameters(const NetworkConfig& cfg);

/// Trainable scalars of a dense k^3 convolution with bias.
std::size_t dense_conv_parameters(int in_channels, int out_channels, int kernel);
/// Trainable scalars of a depthwise k^3 + pointwise 1^3 pair, both with bias.
std::size_t separable_conv_parameters(int in_channels, int out_channels, int kernel);

/// Fixed network input Z with entries in [0, 1).
struct NoiseInput {
  Volume z;
  std::uint64_t seed = 0;

  std::uint64_t checksum() const;
};

NoiseInput sample_noise_input(const GridGeometry& grid, std::uint64_t seed);

/// Result of one forward evaluation; keeps the tape for backpropagation.
class ForwardPass {
 public:
  const Volume& output() const noexcept { return output_; }

  /// Accumulates d(loss)/d(theta) into `grads` given d(loss)/d(output) in
  /// canonical voxel order.
  void backward(std::span<const double> grad_output, ParameterGradients& grads);

 private:
  friend class FastResUNet;
  std::unique_ptr<nn::Tape> tape_;
  nn::Var output_var_ = -1;
  Volume output_;
};

/// 3D U-Net style prior with squeeze-excitation encoder stages, an ASPP
/// bottleneck, attention-gated skips and a sigmoid tail.
///
///   stem -> 3 x [SE -> ResConv3D (skip) -> strided separable conv]
///        -> ASPP
///        -> 3 x [attention gate on skip -> trilinear x2 -> concat -> ResConv3D]
///        -> conv -> sigmoid
class FastResUNet {
 public:
  /// Throws InvalidArgument unless every grid dimension is divisible by 2^depth.
  FastResUNet(NetworkConfig cfg, const GridGeometry& grid);
  ~FastResUNet();
  FastResUNet(FastResUNet&&) noexcept;
  FastResUNet& operator=(FastResUNet&&) noexcept;

  const NetworkConfig& config() const noexcept { return cfg_; }
  const std::vector<ParamSpec>& schema() const noexcept;

  /// Throws InvalidArgument when theta does not follow the schema.
  void check(const ParameterState& theta) const;

  Volume forward(const ParameterState& theta, const NoiseInput& z) const;
  ForwardPass run(const ParameterState& theta, const NoiseInput& z) const;

  struct Layers;

 private:
  NetworkConfig cfg_;
  int rows_, cols_, planes_;
  std::unique_ptr<Layers> layers_;
};

}  // namespace d2ip
