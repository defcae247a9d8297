#pragma once

#include <cstddef>

#include "camp/model_config.hpp"
#include "camp/tensor.hpp"

namespace camp {

// One image-sentence pair as seen by the matching core.
struct FeatureBatch {
    Tensor v;    // d x R region features
    Tensor t;    // d x N word features
    Mask word_mask;  // N entries, 1 = real word

    void validate() const;
};

// Learnable transform F(x) = tanh(W x + b) applied after gating.
struct FusionTransform {
    Tensor weight;  // d x d, or d x 2d for concatenation
    Tensor bias;    // d
};

struct CampCoreParams {
    Tensor proj_v;  // d_h x d
    Tensor proj_t;  // d_h x d
    FusionTransform fuse_v;
    FusionTransform fuse_t;
    Tensor agg_v;   // 1 x d
    Tensor agg_t;   // 1 x d
    Tensor mlp_w1;  // d x d
    Tensor mlp_b1;  // d
    Tensor mlp_w2;  // 1 x d
    Tensor mlp_b2;  // 1
};

// Region-word affinity: A_ij = <proj_v v_i, proj_t t_j>, shape R x N.
Tensor affinity(const FeatureBatch& batch, const CampCoreParams& p);

struct Messages {
    Tensor v_tilde;   // N x d: visual message for each word
    Tensor t_tilde;   // R x d: textual message for each region
    Tensor attn_v;    // N x R: word-specific attention over regions
    Tensor attn_t;    // R x N: region-specific attention over words
};

// Cross-attention message aggregation. Attention over words honours the
// word mask; attention over regions sees every region.
Messages aggregate_messages(const Tensor& affinity, const FeatureBatch& batch, std::size_t d_h);

// Messages without cross-attention: every word receives the mean region
// feature and every region the mean of the real word features.
Messages mean_messages(const FeatureBatch& batch);

struct FusionResult {
    Tensor fused;  // d x K
    Tensor gates;  // d x K, all ones when gating is off
};

// Gated fusion of original features X (d x K) with incoming messages
// M (K x d): out_i = F(g_i * (x_i (+) m_i)) [+ x_i], g_i = sigmoid(x_i * m_i).
FusionResult gated_fuse(const Tensor& x, const Tensor& m, const FusionTransform& f, const ModelConfig& cfg);

struct AggregateResult {
    Tensor vector;   // d x 1
    Tensor weights;  // 1 x K
};

// Attention pooling: weights = softmax(W X / sqrt(d)), result = X weights^T.
// With Aggregation::mean the weights are uniform over unmasked columns.
AggregateResult attend_aggregate(const Tensor& x_hat, const Tensor& w, const Mask* mask,
                                 Aggregation aggregation = Aggregation::attention);

// sigmoid(MLP(v* + t*)) for Scorer::mlp, cosine(v*, t*) for Scorer::cosine.
Tensor match_score(const Tensor& v_star, const Tensor& t_star, const CampCoreParams& p, Scorer scorer);

struct CampOutput {
    Tensor score;  // scalar
    Tensor affinity;
    Messages messages;
    FusionResult visual;   // over regions
    FusionResult textual;  // over words
    AggregateResult image;
    AggregateResult text;

    // Mean gate value over all region gates and all real-word gates.
    // Zero-count when the variant has no gates.
    double gate_sum = 0.0;
    std::size_t gate_count = 0;
    double mean_gate() const { return gate_count ? gate_sum / static_cast<double>(gate_count) : 0.0; }
};

CampOutput forward(const FeatureBatch& batch, const CampCoreParams& params, const ModelConfig& cfg);

// Expands a per-word mask to a rows x N matrix mask.
Mask broadcast_mask(const Mask& word_mask, std::size_t rows);

}  // namespace camp
