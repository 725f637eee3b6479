#include "d2ip/regularizers.hpp"

#include <cmath>
#include <string>

#include "d2ip/error.hpp"

namespace d2ip {

void FrameHistory::append(Volume frame) {
  if (!frames_.empty() && !frames_.front().same_shape(frame)) {
    throw InvalidArgument("history frames must share one grid shape");
  }
  frames_.push_back(std::move(frame));
}

double decay_weight(int j, int i) {
  if (j < 1 || j >= i) {
    throw InvalidArgument("decay_weight needs 1 <= j < i, got j=" + std::to_string(j) +
                          ", i=" + std::to_string(i));
  }
  return std::exp(-static_cast<double>(i - j));
}

namespace {

void check_grad(std::span<double> grad, std::size_t n) {
  if (!grad.empty() && grad.size() != n) {
    throw InvalidArgument("gradient buffer size does not match the volume");
  }
}

}  // namespace

double spatial_tv(const Volume& vol, double epsilon, std::span<double> grad, double scale) {
  const std::size_t n = vol.size();
  check_grad(grad, n);
  const int R = vol.rows(), C = vol.cols(), P = vol.planes();
  const std::size_t plane_stride = static_cast<std::size_t>(R) * C;
  const auto x = vol.data();
  const bool want_grad = !grad.empty();
  const double g_scale = scale / static_cast<double>(n);

  double sum = 0.0;
  for (int p = 0; p < P; ++p) {
    for (int r = 0; r < R; ++r) {
      for (int c = 0; c < C; ++c) {
        const std::size_t q = (static_cast<std::size_t>(p) * R + r) * C + c;
        const double dp = p + 1 < P ? x[q + plane_stride] - x[q] : 0.0;
        const double dr = r + 1 < R ? x[q + C] - x[q] : 0.0;
        const double dc = c + 1 < C ? x[q + 1] - x[q] : 0.0;
        const double t = std::sqrt(dp * dp + dr * dr + dc * dc + epsilon);
        sum += t;
        if (want_grad) {
          const double k = g_scale / t;
          grad[q] -= k * (dp + dr + dc);
          if (p + 1 < P) grad[q + plane_stride] += k * dp;
          if (r + 1 < R) grad[q + C] += k * dr;
          if (c + 1 < C) grad[q + 1] += k * dc;
        }
      }
    }
  }
  return sum / static_cast<double>(n);
}

double temporal_tv(const FrameHistory& history, const Volume& current, double epsilon,
                   std::span<double> grad, double scale) {
  check_grad(grad, current.size());
  if (history.empty()) return 0.0;
  const int i = static_cast<int>(history.size()) + 1;

  double weight_sum = 0.0;
  for (int j = 1; j < i; ++j) weight_sum += decay_weight(j, i);

  const auto x = current.data();
  double total = 0.0;
  for (int j = 1; j < i; ++j) {
    const Volume& past = history[static_cast<std::size_t>(j - 1)];
    if (!past.same_shape(current)) throw InvalidArgument("history frame shape mismatch");
    const double alpha = decay_weight(j, i) / weight_sum;
    const auto y = past.data();
    double frame_sum = 0.0;
    for (std::size_t q = 0; q < x.size(); ++q) {
      const double d = x[q] - y[q];
      const double t = std::sqrt(d * d + epsilon);
      frame_sum += t;
      if (!grad.empty()) grad[q] += scale * alpha * d / t;
    }
    total += alpha * frame_sum;
  }
  return total;
}

double tv4d(const FrameHistory& history, const Volume& current, const TVWeights& weights,
            std::span<double> grad, double scale) {
  double value = 0.0;
  if (weights.lambda_s != 0.0) {
    value += weights.lambda_s *
             spatial_tv(current, weights.epsilon, grad, scale * weights.lambda_s);
  }
  if (weights.lambda_t != 0.0) {
    value += weights.lambda_t *
             temporal_tv(history, current, weights.epsilon, grad, scale * weights.lambda_t);
  }
  return value;
}

}  // namespace d2ip
