#pragma once

#include <string>
#include <vector>

#include "camp/model_config.hpp"
#include "camp/training.hpp"

namespace camp {

struct AblationVariant {
    std::string name;
    ModelConfig model;
    TrainConfig train;
};

// The full model followed by each ablation of the published study, all built
// on top of the given base configurations.
std::vector<AblationVariant> table4_grid(const ModelConfig& model, const TrainConfig& train);

// Looks up a variant by name; throws ConfigError on an unknown name.
AblationVariant ablation_variant(const std::string& name, const ModelConfig& model, const TrainConfig& train);

}  // namespace camp
