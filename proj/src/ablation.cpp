#include "camp/ablation.hpp"

#include "camp/error.hpp"

namespace camp {

std::vector<AblationVariant> table4_grid(const ModelConfig& model, const TrainConfig& train) {
    ModelConfig full = model;
    full.variant = Variant::camp;
    full.fusion_op = FusionOp::add;
    full.use_gates = full.use_residual = full.use_cross_attn = full.use_fusion = true;
    full.aggregation = Aggregation::attention;
    full.scorer = Scorer::mlp;
    TrainConfig bce = train;
    bce.loss = LossKind::bce_hardest;
    TrainConfig ranking = train;
    ranking.loss = LossKind::ranking;

    std::vector<AblationVariant> grid;
    auto add = [&](std::string name, auto edit_model, const TrainConfig& tc) {
        ModelConfig m = full;
        edit_model(m);
        grid.push_back({std::move(name), m, tc});
    };
    add("camp", [](ModelConfig&) {}, bce);
    // Cosine scorers produce values outside (0, 1), so every cosine row
    // trains with the ranking loss.
    add("base", [](ModelConfig& m) { m.variant = Variant::base; }, ranking);
    add("no-cross-attn", [](ModelConfig& m) { m.use_cross_attn = false; }, bce);
    add("no-fusion", [](ModelConfig& m) { m.variant = Variant::no_fusion; }, ranking);
    add("no-gates", [](ModelConfig& m) { m.use_gates = false; }, bce);
    add("no-residual", [](ModelConfig& m) { m.use_residual = false; }, bce);
    add("no-attn-agg", [](ModelConfig& m) { m.aggregation = Aggregation::mean; }, bce);
    add("concat", [](ModelConfig& m) { m.fusion_op = FusionOp::concat; }, bce);
    add("product", [](ModelConfig& m) { m.fusion_op = FusionOp::product; }, bce);
    add("joint-embedding", [](ModelConfig& m) { m.scorer = Scorer::cosine; }, ranking);
    add("mlp-ranking", [](ModelConfig&) {}, ranking);
    TrainConfig plain = train;
    plain.loss = LossKind::bce_plain;
    add("bce-plain", [](ModelConfig&) {}, plain);
    return grid;
}

AblationVariant ablation_variant(const std::string& name, const ModelConfig& model, const TrainConfig& train) {
    for (auto& v : table4_grid(model, train)) {
        if (v.name == name) return v;
    }
    throw ConfigError("unknown ablation variant '" + name + "'");
}

}  // namespace camp
