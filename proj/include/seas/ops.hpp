#pragma once

// Differentiable tensor operations. Feature maps are (B, C, H, W), token
// sequences are (B, L, D); all storage is row-major.

#include <vector>

#include "seas/tensor.hpp"

namespace seas::ad {

// Elementwise (same shape unless noted).
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S value);
template <typename S> Var<S> square(const Var<S>& a);
template <typename S> Var<S> silu(const Var<S>& a);
template <typename S> Var<S> gelu(const Var<S>& a);
template <typename S> Var<S> exp(const Var<S>& a);
/// x (B, ...) + y (...) broadcast over the leading axis.
template <typename S> Var<S> add_broadcast_batch(const Var<S>& x, const Var<S>& y);

// Reductions to a scalar of shape {1}.
template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
template <typename S> Var<S> sum_squares(const Var<S>& a);
template <typename S> Var<S> mse(const Var<S>& prediction, const Var<S>& target);

template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);

// Feature maps.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int padding);
template <typename S>
Var<S> group_norm(const Var<S>& x, int groups, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));
/// x (B, C, H, W) + v (B, C) broadcast over space.
template <typename S> Var<S> add_channel_bias(const Var<S>& x, const Var<S>& v);
template <typename S> Var<S> upsample_nearest(const Var<S>& x, int factor);
template <typename S> Var<S> avg_pool(const Var<S>& x, int factor);
template <typename S> Var<S> concat_channels(const std::vector<Var<S>>& xs);
template <typename S> Var<S> slice_channels(const Var<S>& x, int begin, int count);
template <typename S> Var<S> softmax_channels(const Var<S>& x);
template <typename S> Var<S> to_tokens(const Var<S>& x);
template <typename S> Var<S> from_tokens(const Var<S>& x, int height, int width);

// Leading-axis slicing and stacking (any rank).
template <typename S> Var<S> slice_batch(const Var<S>& x, int begin, int count);
template <typename S> Var<S> concat_batch(const std::vector<Var<S>>& xs);
/// Stacks equally shaped tensors along a new leading axis.
template <typename S> Var<S> stack(const std::vector<Var<S>>& xs);

// Token sequences.
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));
template <typename S> Var<S> softmax_lastdim(const Var<S>& x);
/// (G, M, K) x (G, K, N) -> (G, M, N); with transpose_b, b is (G, N, K).
template <typename S> Var<S> bmm(const Var<S>& a, const Var<S>& b, bool transpose_b);
/// (B, L, h*d) -> (B*h, L, d)
template <typename S> Var<S> split_heads(const Var<S>& x, int heads);
/// (B*h, L, d) -> (B, L, h*d)
template <typename S> Var<S> merge_heads(const Var<S>& x, int heads);
/// (B*h, L, Z) -> (B, L, Z), arithmetic mean over the heads of each sample.
template <typename S> Var<S> mean_head_groups(const Var<S>& x, int heads);
/// Rows `ids` of a (R, D) table -> (n, D).
template <typename S> Var<S> gather_rows(const Var<S>& table, const std::vector<int>& ids);
/// Columns `cols` of sample `b` of a (B, L, Z) map -> (n, L).
template <typename S> Var<S> token_columns(const Var<S>& attn, int b, const std::vector<int>& cols);
/// (n, L) -> (L)
template <typename S> Var<S> mean_rows(const Var<S>& x);

/// Mean focal loss over pixels of two-class logits (B, 2, H, W) against
/// a {0,1} target (B, H, W). alpha weighs the anomalous class.
template <typename S>
Var<S> focal_loss(const Var<S>& logits, const Tensor<S>& target, S gamma, S alpha);

}  // namespace seas::ad
