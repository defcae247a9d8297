#include "camp/camp_core.hpp"

#include <algorithm>
#include <cmath>

#include "camp/error.hpp"

namespace camp {

namespace {

std::size_t count_real(const Mask& mask) {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

// Column of weights (K x 1) for a uniform average over unmasked positions.
Tensor uniform_weights(std::size_t k, const Mask* mask) {
    std::vector<double> w(k, 0.0);
    const std::size_t real = mask ? count_real(*mask) : k;
    if (real == 0) throw DomainError("uniform average over a fully masked set");
    for (std::size_t i = 0; i < k; ++i) {
        if (mask == nullptr || (*mask)[i] != 0) w[i] = 1.0 / static_cast<double>(real);
    }
    return Tensor::column(std::move(w));
}

void accumulate_gates(const Tensor& gates, const Mask* mask, double& sum, std::size_t& count) {
    const std::size_t rows = gates.rows(), cols = gates.cols();
    const auto g = gates.data();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            if (mask != nullptr && (*mask)[j] == 0) continue;
            sum += g[i * cols + j];
            ++count;
        }
}

}  // namespace

void FeatureBatch::validate() const {
    if (!v.defined() || !t.defined()) throw DimensionError("feature batch is missing V or T");
    if (v.rank() != 2 || t.rank() != 2) throw DimensionError("feature batch V and T must be matrices");
    if (v.rows() != t.rows()) {
        throw DimensionError("feature batch: V " + shape_str(v.shape()) + " and T " + shape_str(t.shape()) +
                             " disagree on d");
    }
    if (word_mask.size() != t.cols()) {
        throw DimensionError("feature batch: word mask has " + std::to_string(word_mask.size()) + " entries for " +
                             std::to_string(t.cols()) + " words");
    }
    if (count_real(word_mask) == 0) throw DomainError("feature batch: every word is masked");
}

Mask broadcast_mask(const Mask& word_mask, std::size_t rows) {
    Mask out;
    out.reserve(rows * word_mask.size());
    for (std::size_t i = 0; i < rows; ++i) out.insert(out.end(), word_mask.begin(), word_mask.end());
    return out;
}

Tensor affinity(const FeatureBatch& batch, const CampCoreParams& p) {
    batch.validate();
    if (p.proj_v.cols() != batch.v.rows() || p.proj_t.cols() != batch.t.rows() ||
        p.proj_v.rows() != p.proj_t.rows()) {
        throw DimensionError("affinity: projections " + shape_str(p.proj_v.shape()) + ", " +
                             shape_str(p.proj_t.shape()) + " do not fit features of dimension " +
                             std::to_string(batch.v.rows()));
    }
    const Tensor pv = matmul(p.proj_v, batch.v);  // d_h x R
    const Tensor pt = matmul(p.proj_t, batch.t);  // d_h x N
    return matmul(transpose(pv), pt);
}

Messages aggregate_messages(const Tensor& a, const FeatureBatch& batch, std::size_t d_h) {
    batch.validate();
    const std::size_t regions = batch.v.cols(), words = batch.t.cols();
    if (a.rows() != regions || a.cols() != words) {
        throw DimensionError("aggregate_messages: affinity " + shape_str(a.shape()) + " for " +
                             std::to_string(regions) + " regions and " + std::to_string(words) + " words");
    }
    const double scale = std::sqrt(static_cast<double>(d_h));
    Messages out;
    out.attn_v = scaled_softmax(transpose(a), scale);
    out.v_tilde = matmul(out.attn_v, transpose(batch.v), Accumulation::order_invariant);
    const Mask word_rows = broadcast_mask(batch.word_mask, regions);
    out.attn_t = scaled_softmax(a, scale, &word_rows);
    out.t_tilde = matmul(out.attn_t, transpose(batch.t), Accumulation::order_invariant);
    return out;
}

Messages mean_messages(const FeatureBatch& batch) {
    batch.validate();
    const std::size_t regions = batch.v.cols(), words = batch.t.cols();
    const Tensor v_mean = matmul(batch.v, uniform_weights(regions, nullptr), Accumulation::order_invariant);
    const Tensor t_mean = matmul(batch.t, uniform_weights(words, &batch.word_mask), Accumulation::order_invariant);
    Messages out;
    out.v_tilde = transpose(repeat_column(v_mean, words));
    out.t_tilde = transpose(repeat_column(t_mean, regions));
    return out;
}

FusionResult gated_fuse(const Tensor& x, const Tensor& m, const FusionTransform& f, const ModelConfig& cfg) {
    if (x.rank() != 2 || m.rank() != 2 || m.rows() != x.cols() || m.cols() != x.rows()) {
        throw DimensionError("gated_fuse: features " + shape_str(x.shape()) + " and messages " +
                             shape_str(m.shape()) + " do not pair up");
    }
    const std::size_t d = x.rows();
    const std::size_t core_rows = cfg.fusion_op == FusionOp::concat ? 2 * d : d;
    if (f.weight.rows() != d || f.weight.cols() != core_rows || f.bias.size() != d) {
        throw ConfigError("gated_fuse: fusion '" + std::string(to_string(cfg.fusion_op)) + "' needs a transform of " +
                          std::to_string(d) + "x" + std::to_string(core_rows) + ", got " + shape_str(f.weight.shape()));
    }
    const Tensor mt = transpose(m);

    FusionResult out;
    out.gates = cfg.use_gates ? sigmoid(mul(x, mt)) : Tensor::filled(x.shape(), 1.0);

    Tensor core;
    switch (cfg.fusion_op) {
        case FusionOp::add: core = add(x, mt); break;
        case FusionOp::product: core = mul(x, mt); break;
        case FusionOp::concat: core = concat_rows(x, mt); break;
    }
    if (cfg.use_gates) {
        const Tensor g = cfg.fusion_op == FusionOp::concat ? concat_rows(out.gates, out.gates) : out.gates;
        core = mul(g, core);
    }
    const Tensor transformed = tanh(linear(core, f.weight, f.bias));
    out.fused = cfg.use_residual ? add(transformed, x) : transformed;
    return out;
}

AggregateResult attend_aggregate(const Tensor& x_hat, const Tensor& w, const Mask* mask, Aggregation aggregation) {
    const std::size_t d = x_hat.rows(), k = x_hat.cols();
    if (mask != nullptr && mask->size() != k) {
        throw DimensionError("attend_aggregate: mask has " + std::to_string(mask->size()) + " entries for " +
                             std::to_string(k) + " columns");
    }
    if (mask != nullptr && count_real(*mask) == 0) throw DomainError("attend_aggregate: every column is masked");

    AggregateResult out;
    if (aggregation == Aggregation::mean) {
        out.weights = transpose(uniform_weights(k, mask));
    } else {
        if (w.rows() != 1 || w.cols() != d) {
            throw DimensionError("attend_aggregate: projection " + shape_str(w.shape()) + " for features of dimension " +
                                 std::to_string(d));
        }
        const Tensor logits = matmul(w, x_hat);  // 1 x K
        out.weights = scaled_softmax(logits, std::sqrt(static_cast<double>(d)), mask);
    }
    out.vector = matmul(x_hat, transpose(out.weights), Accumulation::order_invariant);
    return out;
}

Tensor match_score(const Tensor& v_star, const Tensor& t_star, const CampCoreParams& p, Scorer scorer) {
    if (v_star.shape() != t_star.shape()) {
        throw DimensionError("match_score: " + shape_str(v_star.shape()) + " vs " + shape_str(t_star.shape()));
    }
    if (scorer == Scorer::cosine) return cosine_similarity(v_star, t_star);
    const Tensor hidden = relu(linear(add(v_star, t_star), p.mlp_w1, p.mlp_b1));
    return reshape(sigmoid(linear(hidden, p.mlp_w2, p.mlp_b2)), {1});
}

CampOutput forward(const FeatureBatch& batch, const CampCoreParams& params, const ModelConfig& cfg) {
    batch.validate();
    CampOutput out;
    const Mask* word_mask = &batch.word_mask;

    if (cfg.variant == Variant::base) {
        out.image = attend_aggregate(batch.v, params.agg_v, nullptr, cfg.aggregation);
        out.text = attend_aggregate(batch.t, params.agg_t, word_mask, cfg.aggregation);
        out.score = match_score(out.image.vector, out.text.vector, params, Scorer::cosine);
        return out;
    }

    if (cfg.use_cross_attn) {
        out.affinity = affinity(batch, params);
        out.messages = aggregate_messages(out.affinity, batch, cfg.d_h);
    } else {
        out.messages = mean_messages(batch);
    }

    Tensor v_hat, t_hat;
    if (cfg.variant == Variant::no_fusion || !cfg.use_fusion) {
        // Messages enrich the features by plain addition; no gate, no transform.
        v_hat = add(batch.v, transpose(out.messages.t_tilde));
        t_hat = add(batch.t, transpose(out.messages.v_tilde));
    } else {
        out.visual = gated_fuse(batch.v, out.messages.t_tilde, params.fuse_v, cfg);
        out.textual = gated_fuse(batch.t, out.messages.v_tilde, params.fuse_t, cfg);
        v_hat = out.visual.fused;
        t_hat = out.textual.fused;
        if (cfg.use_gates) {
            accumulate_gates(out.visual.gates, nullptr, out.gate_sum, out.gate_count);
            accumulate_gates(out.textual.gates, word_mask, out.gate_sum, out.gate_count);
        }
    }

    out.image = attend_aggregate(v_hat, params.agg_v, nullptr, cfg.aggregation);
    out.text = attend_aggregate(t_hat, params.agg_t, word_mask, cfg.aggregation);
    out.score = match_score(out.image.vector, out.text.vector, params, cfg.effective_scorer());
    return out;
}

}  // namespace camp
