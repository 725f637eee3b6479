#pragma once

#include <span>
#include <vector>

#include "d2ip/geometry.hpp"

namespace d2ip {

/// Weights of the spatio-temporal TV term.
struct TVWeights {
  double lambda_tv = 0.002;
  double lambda_s = 1.0;
  double lambda_t = 0.1;
  double epsilon = 1e-8;
};

/// Previously reconstructed frames 1..i-1 of a sequence run, oldest first.
class FrameHistory {
 public:
  FrameHistory() = default;

  void append(Volume frame);
  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  const Volume& operator[](std::size_t j) const { return frames_[j]; }
  const std::vector<Volume>& frames() const noexcept { return frames_; }

 private:
  std::vector<Volume> frames_;
};

/// alpha_{j,i} = exp(-(i - j)) for 1 <= j < i.
double decay_weight(int j, int i);

// Each regularizer returns its value. When `grad` is non-empty it must have
// one entry per voxel (canonical order) and receives scale * d(value)/d(current).

/// (1/Q) sum sqrt(d_p^2 + d_r^2 + d_c^2 + eps) over forward differences,
/// with zero difference at the last index of each axis.
double spatial_tv(const Volume& vol, double epsilon, std::span<double> grad = {},
                  double scale = 1.0);

/// Decay-weighted mean over history frames of sum sqrt((x - x_j)^2 + eps).
/// The current frame index is history.size() + 1; empty history gives 0.
double temporal_tv(const FrameHistory& history, const Volume& current, double epsilon,
                   std::span<double> grad = {}, double scale = 1.0);

/// lambda_s * spatial_tv + lambda_t * temporal_tv (lambda_tv is applied by
/// the caller's loss).
double tv4d(const FrameHistory& history, const Volume& current, const TVWeights& weights,
            std::span<double> grad = {}, double scale = 1.0);

}  // namespace d2ip
