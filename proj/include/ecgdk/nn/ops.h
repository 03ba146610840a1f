#pragma once

#include <cstddef>
#include <span>

#include "ecgdk/nn/tensor.h"
#include "ecgdk/rng.h"

namespace ecgdk::nn {

// Shape errors throw ContractError naming the shapes involved.

// Elementwise a + b, where b's shape is a trailing suffix of a's (broadcast over leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor relu(const Tensor& x);

// x[..., in] * weight[out, in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding);
std::size_t maxpool1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride);

// Cross-correlation. x[batch, c_in, len], weight[c_out, c_in, k], bias[c_out], zero padding.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

// x[batch, channels, len]; gradient goes to the first maximum of each window.
Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride);

// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);

// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Max-subtracted softmax along `axis` (defaults to the last one).
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax(const Tensor& x);

// Inverted dropout: kept values are scaled by 1/(1-p). Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng* rng, bool training);

// [batch, seq, d] -> [batch, d]
Tensor mean_over_axis1(const Tensor& x);

// Concatenates along the last axis; leading axes must match.
Tensor concat_last(const Tensor& a, const Tensor& b);

// Rows of x[n, d] at `rows`, in that order.
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);

// Mean over the batch of -log softmax(logits)[target]. logits[batch, classes].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// [batch, seq, heads*d_head] <-> [batch*heads, seq, d_head]
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);

// softmax(q k^T / sqrt(d_head)) v for q[n, sq, dh], k[n, sk, dh], v[n, sk, dv]. Unmasked.
// Scores and probabilities are float32 unless set_attention_float32(false); inputs, outputs and
// gradients are float64 either way.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Process-wide. Finite-difference checks switch to float64 throughout.
bool attention_float32();
void set_attention_float32(bool enabled);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // each projection is [d_model, d_model]
};

// Projections, per-head scaled dot-product attention, concatenation and output projection.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionWeights& weights,
                            std::size_t heads);

// Sinusoidal table [seq, d_model]: sin on even, cos on odd columns.
Tensor positional_encoding(std::size_t seq, std::size_t d_model);

}  // namespace ecgdk::nn
