#pragma once

#include <utility>

#include "umg/tensor.hpp"

namespace umg {

// All ops are pure: they read their inputs, produce a fresh tensor, and
// append a backward closure when any input sits on a tape. Forward outputs
// are finite-checked; NaN/Inf raises NumericError.

struct Padding {
    enum Kind { valid, reflect } kind = valid;
    int amount = 0;
    static Padding none() { return {valid, 0}; }
    static Padding reflect_px(int p) { return {reflect, p}; }
};

// --- elementwise ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, real c);
Tensor mul_scalar(const Tensor& a, real c);

enum class Act { relu, leaky_relu, sigmoid, log };
Tensor activation(const Tensor& x, Act kind, real leaky_slope = real(0.2));
inline Tensor relu(const Tensor& x) { return activation(x, Act::relu); }
inline Tensor leaky_relu(const Tensor& x, real s = real(0.2)) { return activation(x, Act::leaky_relu, s); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Act::sigmoid); }
inline Tensor log_op(const Tensor& x) { return activation(x, Act::log); }

/// Clamp to [lo, hi]; gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& x, real lo, real hi);

// --- reductions ---
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// --- convolution & friends (NCHW) ---

/// Cross-correlation of NCHW input with OIHW kernel.
/// Output spatial size: floor((H_pad - kH)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding pad);

/// Per-channel (depthwise) cross-correlation, kernel shaped [C,1,kH,kW].
Tensor conv2d_depthwise(const Tensor& input, const Tensor& kernel, int stride, Padding pad);

/// x[n,c,h,w] + b[c].
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// 2x2 max pooling, stride 2. Gradient routes to the argmax; ties break to
/// the first maximum in row-major window order.
Tensor pool_max2(const Tensor& x);

/// Nearest-neighbour 2x upsampling.
Tensor upsample_nearest2(const Tensor& x);

/// Per-(sample, channel) spatial mean and std, std = sqrt(pop. variance + eps).
/// Returns {mean, std}, both shaped [N, C]; both differentiable.
std::pair<Tensor, Tensor> channel_stats(const Tensor& x, real eps);

/// out[n,c,h,w] = x[n,c,h,w] * scale[n,c] + shift[n,c].
Tensor affine_channels(const Tensor& x, const Tensor& scale, const Tensor& shift);

/// sqrt(sum((a-b)^2) + 1e-12), scalar output.
Tensor l2_distance(const Tensor& a, const Tensor& b);

/// Row-wise L2 distance between [N,K] tensors -> [N].
Tensor l2_rows_distance(const Tensor& a, const Tensor& b);

// --- dense heads ---

/// x [N,K] * w [K,M] + b [M].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// Spatial mean per (sample, channel): NCHW -> [N, C].
Tensor global_avg_pool(const Tensor& x);

/// Row-wise softmax over [N, M].
Tensor softmax_rows(const Tensor& logits);

/// Mean over rows of -log softmax(logits)[label], numerically stable.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Flatten NCHW to [N, C*H*W] (view-like; data shared on forward).
Tensor flatten2(const Tensor& x);

}  // namespace umg
