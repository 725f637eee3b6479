#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace d2ip::nn {

/// Activation shape: channels x depth (planes) x height (rows) x width (cols).
/// Storage is channel-major, then depth, height, width, so a single-channel
/// activation is laid out in canonical voxel order.
struct Shape {
  int channels = 1;
  int depth = 1;
  int height = 1;
  int width = 1;

  std::size_t spatial() const noexcept {
    return static_cast<std::size_t>(depth) * height * width;
  }
  std::size_t size() const noexcept { return spatial() * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int groups = 1;

  int padding() const noexcept { return dilation * (kernel - 1) / 2; }
  std::size_t weight_size() const noexcept {
    return static_cast<std::size_t>(out_channels) * (in_channels / groups) * kernel * kernel *
           kernel;
  }
  int fan_in() const noexcept { return (in_channels / groups) * kernel * kernel * kernel; }
  Shape output_shape(const Shape& in) const noexcept;
};

/// Reverse-mode tape over dense activations.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid topological order. Parameter leaves view external storage and map
/// to a slot in the gradient vector handed to backward().
class Tape {
 public:
  using Var = int;

  Var constant(Shape shape, std::vector<double> values);
  Var parameter(int slot, std::span<const double> values);

  Shape shape(Var v) const { return nodes_[v].shape; }
  std::span<const double> value(Var v) const {
    const Node& n = nodes_[v];
    return n.external ? std::span<const double>(n.external, n.shape.size())
                      : std::span<const double>(n.owned);
  }

  /// Seeds d(loss)/d(output) and accumulates into grads[slot] for every
  /// parameter leaf (grads must be pre-sized by the caller).
  void backward(Var output, std::span<const double> seed,
                std::vector<std::vector<double>>& grads);

  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Used by op implementations.
  Var push(Shape shape, std::vector<double> values, std::function<void(Tape&, Var)> backward);
  std::vector<double>& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v].grad.empty(); }
  bool requires_grad(Var v) const { return nodes_[v].requires_grad; }
  std::vector<double>& scratch(Var v) { return nodes_[v].scratch; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> owned;
    const double* external = nullptr;
    std::vector<double> grad;
    std::vector<double> scratch;
    std::function<void(Tape&, Var)> backward;
    int slot = -1;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

using Var = Tape::Var;

/// Zero-padded ("same" for stride 1) 3D convolution. `bias` may be -1.
Var conv3d(Tape& t, Var x, Var weight, Var bias, const ConvSpec& spec);

/// Channel-wise layer normalization at every spatial position.
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

Var silu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var add(Tape& t, Var a, Var b);

/// x * s with s shaped [C, 1, 1, 1].
Var scale_channels(Tape& t, Var x, Var s);

/// x * a with a shaped [1, D, H, W].
Var gate_spatial(Tape& t, Var x, Var a);

/// Spatial mean per channel, giving [C, 1, 1, 1].
Var global_avg_pool(Tape& t, Var x);

Var concat_channels(Tape& t, std::span<const Var> parts);

/// Trilinear x2 upsampling (half-pixel centers, edge clamped).
Var upsample2x(Tape& t, Var x);

}  // namespace d2ip::nn
