#include "camp/model_config.hpp"

#include "camp/error.hpp"

namespace camp {

void ModelConfig::validate() const {
    if (d == 0 || d_h == 0 || raw_region_dim == 0 || embed_dim == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (d_h > d) throw ConfigError("d_h (" + std::to_string(d_h) + ") must not exceed d (" + std::to_string(d) + ")");
    if (vocab_size < 2) throw ConfigError("vocab_size must leave room for the padding token");
    if (max_words == 0) throw ConfigError("max_words must be positive");
}

Scorer ModelConfig::effective_scorer() const {
    if (variant == Variant::base || variant == Variant::no_fusion) return Scorer::cosine;
    return scorer;
}

ModelConfig ModelConfig::desk() {
    ModelConfig cfg;
    cfg.d = 32;
    cfg.d_h = 16;
    cfg.raw_region_dim = 64;
    cfg.embed_dim = 16;
    cfg.vocab_size = 64;
    cfg.max_words = 50;
    return cfg;
}

std::string_view to_string(FusionOp op) {
    switch (op) {
        case FusionOp::add: return "add";
        case FusionOp::concat: return "concat";
        case FusionOp::product: return "product";
    }
    return "?";
}

std::string_view to_string(Aggregation agg) { return agg == Aggregation::attention ? "attention" : "mean"; }
std::string_view to_string(Scorer scorer) { return scorer == Scorer::mlp ? "mlp" : "cosine"; }

std::string_view to_string(Variant variant) {
    switch (variant) {
        case Variant::camp: return "camp";
        case Variant::base: return "base";
        case Variant::no_fusion: return "no_fusion";
    }
    return "?";
}

FusionOp parse_fusion_op(std::string_view s) {
    if (s == "add") return FusionOp::add;
    if (s == "concat") return FusionOp::concat;
    if (s == "product") return FusionOp::product;
    throw ConfigError("unknown fusion op '" + std::string(s) + "' (expected add, concat or product)");
}

Aggregation parse_aggregation(std::string_view s) {
    if (s == "attention") return Aggregation::attention;
    if (s == "mean") return Aggregation::mean;
    throw ConfigError("unknown aggregation '" + std::string(s) + "' (expected attention or mean)");
}

Scorer parse_scorer(std::string_view s) {
    if (s == "mlp") return Scorer::mlp;
    if (s == "cosine") return Scorer::cosine;
    throw ConfigError("unknown scorer '" + std::string(s) + "' (expected mlp or cosine)");
}

Variant parse_variant(std::string_view s) {
    if (s == "camp") return Variant::camp;
    if (s == "base") return Variant::base;
    if (s == "no_fusion" || s == "no-fusion") return Variant::no_fusion;
    throw ConfigError("unknown variant '" + std::string(s) + "' (expected camp, base or no_fusion)");
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{
        {"d", cfg.d},
        {"d_h", cfg.d_h},
        {"raw_region_dim", cfg.raw_region_dim},
        {"embed_dim", cfg.embed_dim},
        {"vocab_size", cfg.vocab_size},
        {"max_words", cfg.max_words},
        {"fusion_op", to_string(cfg.fusion_op)},
        {"use_gates", cfg.use_gates},
        {"use_residual", cfg.use_residual},
        {"use_cross_attn", cfg.use_cross_attn},
        {"use_fusion", cfg.use_fusion},
        {"aggregation", to_string(cfg.aggregation)},
        {"scorer", to_string(cfg.scorer)},
        {"variant", to_string(cfg.variant)},
    };
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    cfg.d = j.at("d").get<std::size_t>();
    cfg.d_h = j.at("d_h").get<std::size_t>();
    cfg.raw_region_dim = j.at("raw_region_dim").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.max_words = j.at("max_words").get<std::size_t>();
    cfg.fusion_op = parse_fusion_op(j.at("fusion_op").get<std::string>());
    cfg.use_gates = j.at("use_gates").get<bool>();
    cfg.use_residual = j.at("use_residual").get<bool>();
    cfg.use_cross_attn = j.at("use_cross_attn").get<bool>();
    cfg.use_fusion = j.at("use_fusion").get<bool>();
    cfg.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    cfg.scorer = parse_scorer(j.at("scorer").get<std::string>());
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
}

}  // namespace camp
