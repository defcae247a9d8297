#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "camp/dataset.hpp"
#include "camp/model.hpp"
#include "camp/objectives.hpp"
#include "camp/rng.hpp"

namespace camp {

enum class LossKind { bce_hardest, bce_plain, ranking };

std::string_view to_string(LossKind kind);
LossKind parse_loss(std::string_view s);

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 40;
    double lr_phase1 = 2e-4;
    double lr_phase2 = 2e-5;
    std::size_t lr_switch_epoch = 15;  // first epoch (0-based) at lr_phase2
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::bce_hardest;
    double margin = 0.2;
    HardestBy hardest_by = HardestBy::score;
    double clip_norm = 2.0;  // global gradient norm; <= 0 disables
    // Epochs trained with bce_plain before bce_hardest takes over. Hardest
    // negatives from a random start give almost no signal.
    std::size_t warmup_epochs = 0;
    unsigned threads = 1;

    void validate() const;

    // Reduced-scale defaults used with the synthetic benchmark.
    static TrainConfig desk();
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

double learning_rate(const TrainConfig& cfg, std::size_t epoch);
LossKind loss_for_epoch(const TrainConfig& cfg, std::size_t epoch);

struct OptimizerState {
    std::vector<std::vector<double>> m;  // first moments, one per parameter
    std::vector<std::vector<double>> v;  // second moments
    std::uint64_t step = 0;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update on every parameter. Moments are created on
// first use. Every requires_grad parameter must carry a gradient.
void adam_step(std::span<Tensor> params, OptimizerState& state, double lr, const AdamSettings& settings = {});

// Scales all gradients so their global L2 norm is at most max_norm and
// returns the norm before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

std::vector<Tensor> parameter_list(const CampParams& params);

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    LossKind loss = LossKind::bce_hardest;
    double mean_positive_gate = 0.0;
    double mean_negative_gate = 0.0;
    std::size_t batches = 0;
    std::size_t core_forwards = 0;     // matching-core passes (B^2 per batch)
    std::size_t encoder_forwards = 0;  // 2B per batch
    std::optional<double> val_rsum;
};

void to_json(nlohmann::json& j, const EpochStats& stats);

// Mutable state of a training run; enough to resume bit-exactly.
struct TrainerState {
    CampParams params;
    CampParams best_params;
    OptimizerState optimizer;
    Rng rng{0};
    std::size_t next_epoch = 0;
    double best_val_rsum = -1.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_since_best = 0;
    bool stopped = false;

    static TrainerState start(CampParams params, const TrainConfig& cfg);
};

// Loss of the configured kind on a score matrix.
LossValue compute_loss(const Tensor& scores, const TrainConfig& cfg);

// One pass over the training set in shuffled batches of B distinct images
// (one caption drawn per image); the final partial batch is dropped.
EpochStats train_epoch(const Dataset& data, TrainerState& state, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, double lr);

using EpochCallback = std::function<void(const EpochStats&, const TrainerState&)>;

struct FitResult {
    CampParams best;
    double best_val_rsum = 0.0;
    std::size_t best_epoch = 0;
    std::vector<EpochStats> history;
    bool stopped_early = false;
};

// Runs epochs under the two-phase learning-rate schedule, scores the
// validation split after each epoch and keeps the parameters with the best
// rsum. Training stops once `patience` consecutive epochs fail to improve.
FitResult fit(const Dataset& train, const Dataset& val, TrainerState& state, const ModelConfig& model_cfg,
              const TrainConfig& train_cfg, const EpochCallback& on_epoch = {});

}  // namespace camp
