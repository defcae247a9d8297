#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <json.hpp>

namespace camp {

enum class FusionOp { add, concat, product };
enum class Aggregation { attention, mean };
enum class Scorer { mlp, cosine };
enum class Variant { camp, base, no_fusion };

// Architecture switches and sizes. The defaults are the full model at the
// published sizes; `desk()` is the reduced configuration used by the
// synthetic benchmark.
struct ModelConfig {
    std::size_t d = 1024;
    std::size_t d_h = 512;
    std::size_t raw_region_dim = 2048;
    std::size_t embed_dim = 300;
    std::size_t vocab_size = 10000;
    std::size_t max_words = 50;

    FusionOp fusion_op = FusionOp::add;
    bool use_gates = true;
    bool use_residual = true;
    bool use_cross_attn = true;
    bool use_fusion = true;
    Aggregation aggregation = Aggregation::attention;
    Scorer scorer = Scorer::mlp;
    Variant variant = Variant::camp;

    // Throws ConfigError on inconsistent settings.
    void validate() const;

    // Scorer actually used by forward(): the base and no-fusion variants
    // always compare with cosine similarity.
    Scorer effective_scorer() const;

    static ModelConfig desk();

    bool operator==(const ModelConfig&) const = default;
};

std::string_view to_string(FusionOp op);
std::string_view to_string(Aggregation agg);
std::string_view to_string(Scorer scorer);
std::string_view to_string(Variant variant);
FusionOp parse_fusion_op(std::string_view s);
Aggregation parse_aggregation(std::string_view s);
Scorer parse_scorer(std::string_view s);
Variant parse_variant(std::string_view s);

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

}  // namespace camp
