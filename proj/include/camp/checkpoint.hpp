#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "camp/model.hpp"
#include "camp/training.hpp"

namespace camp {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::uint16_t version = kCheckpointVersion;
    ModelConfig config;
    std::optional<TrainConfig> train_config;
    std::vector<StoredTensor> params;
    std::vector<StoredTensor> best_params;  // empty unless saved mid-run
    std::optional<OptimizerState> optimizer;
    double best_val_rsum = 0.0;
    std::size_t epoch = 0;  // next epoch to run
    std::size_t best_epoch = 0;
    std::size_t epochs_since_best = 0;
    bool stopped = false;
    std::string rng_state;
};

std::vector<StoredTensor> store(const CampParams& params);

// Copies stored values into `params`; any missing name or shape difference
// is a FormatError naming the tensor.
void restore_params(const std::vector<StoredTensor>& stored, CampParams& params);

// Final model: the given parameters, no optimizer state.
Checkpoint make_checkpoint(const CampParams& params, const ModelConfig& cfg, double best_val_rsum);
// Full trainer state, for resuming.
Checkpoint make_checkpoint(const TrainerState& state, const ModelConfig& cfg, const TrainConfig& train_cfg);

// Rebuilds trainer state from a checkpoint written by the overload above.
TrainerState resume_state(const Checkpoint& ckpt);

// Layout: "CAMPCKPT", u16 version, u32 header length, JSON header, then the
// f64 little-endian payload for params, best_params and optimizer moments in
// header order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace camp
