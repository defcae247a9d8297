#include "camp/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "camp/error.hpp"
#include "camp/evaluation.hpp"

namespace camp {

std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::bce_hardest: return "bce_hardest";
        case LossKind::bce_plain: return "bce_plain";
        case LossKind::ranking: return "ranking";
    }
    return "?";
}

LossKind parse_loss(std::string_view s) {
    if (s == "bce_hardest" || s == "bce-hardest") return LossKind::bce_hardest;
    if (s == "bce_plain" || s == "bce-plain") return LossKind::bce_plain;
    if (s == "ranking") return LossKind::ranking;
    throw ConfigError("unknown loss '" + std::string(s) + "' (expected bce_hardest, bce_plain or ranking)");
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch size must be at least 2");
    if (!(lr_phase1 >= 0.0) || !(lr_phase2 >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
    if (loss == LossKind::ranking && !(margin >= 0.0)) throw ConfigError("ranking margin must be non-negative");
}

TrainConfig TrainConfig::desk() {
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 30;
    cfg.lr_phase1 = 1e-2;
    cfg.lr_phase2 = 1e-3;
    cfg.lr_switch_epoch = 15;
    cfg.patience = 30;
    cfg.warmup_epochs = 5;
    return cfg;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"lr_phase1", c.lr_phase1},
        {"lr_phase2", c.lr_phase2},
        {"lr_switch_epoch", c.lr_switch_epoch},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"adam_eps", c.adam_eps},
        {"patience", c.patience},
        {"seed", c.seed},
        {"loss", to_string(c.loss)},
        {"margin", c.margin},
        {"hardest_by", c.hardest_by == HardestBy::score ? "score" : "loss-term"},
        {"clip_norm", c.clip_norm},
        {"warmup_epochs", c.warmup_epochs},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.lr_phase1 = j.at("lr_phase1").get<double>();
    c.lr_phase2 = j.at("lr_phase2").get<double>();
    c.lr_switch_epoch = j.at("lr_switch_epoch").get<std::size_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.loss = parse_loss(j.at("loss").get<std::string>());
    c.margin = j.at("margin").get<double>();
    c.hardest_by = j.at("hardest_by").get<std::string>() == "score" ? HardestBy::score : HardestBy::loss_term;
    c.clip_norm = j.at("clip_norm").get<double>();
    c.warmup_epochs = j.value("warmup_epochs", std::size_t{0});
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
    return epoch < cfg.lr_switch_epoch ? cfg.lr_phase1 : cfg.lr_phase2;
}

LossKind loss_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.loss == LossKind::bce_hardest && epoch < cfg.warmup_epochs) return LossKind::bce_plain;
    return cfg.loss;
}

// ---- optimizer -------------------------------------------------------------

void adam_step(std::span<Tensor> params, OptimizerState& state, double lr, const AdamSettings& s) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw OptimizerError("optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                             std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size()) {
            throw OptimizerError("optimizer moments for parameter " + std::to_string(i) + " have the wrong size");
        }
        if (params[i].requires_grad() && !params[i].has_grad()) {
            throw OptimizerError("parameter " + std::to_string(i) + " " + shape_str(params[i].shape()) +
                                 " has no gradient");
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(s.beta1, t);
    const double c2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].requires_grad()) continue;
        auto w = params[i].mutable_data();
        const auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
            v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            w[k] -= lr * m_hat / (std::sqrt(v_hat) + s.eps);
        }
    }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.mutable_grad()) g *= scale;
        }
    }
    return norm;
}

std::vector<Tensor> parameter_list(const CampParams& params) {
    std::vector<Tensor> out;
    for (auto& nt : params.named()) out.push_back(nt.tensor);
    return out;
}

void to_json(nlohmann::json& j, const EpochStats& s) {
    j = nlohmann::json{
        {"epoch", s.epoch},
        {"loss", s.mean_loss},
        {"lr", s.lr},
        {"objective", to_string(s.loss)},
        {"pos_gate", s.mean_positive_gate},
        {"neg_gate", s.mean_negative_gate},
        {"batches", s.batches},
        {"core_forwards", s.core_forwards},
    };
    j["val_rsum"] = s.val_rsum ? nlohmann::json(*s.val_rsum) : nlohmann::json(nullptr);
}

// ---- training loop ---------------------------------------------------------

TrainerState TrainerState::start(CampParams params, const TrainConfig& cfg) {
    TrainerState st;
    st.best_params = params.clone();
    st.params = std::move(params);
    st.rng = Rng(derive_seed(cfg.seed, "train"));
    return st;
}

LossValue compute_loss(const Tensor& scores, const TrainConfig& cfg) {
    switch (cfg.loss) {
        case LossKind::bce_hardest: return bce_hardest(scores, cfg.hardest_by);
        case LossKind::bce_plain: return bce_plain(scores);
        case LossKind::ranking: return ranking_hardest(scores, cfg.margin);
    }
    throw ConfigError("unknown loss kind");
}

EpochStats train_epoch(const Dataset& data, TrainerState& state, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, double lr) {
    train_cfg.validate();
    const std::size_t b = train_cfg.batch_size;

    std::vector<std::vector<std::size_t>> captions_of(data.images.size());
    for (std::size_t c = 0; c < data.captions.size(); ++c) captions_of[data.caption_image[c]].push_back(c);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        if (!captions_of[i].empty()) order.push_back(i);
    }
    std::shuffle(order.begin(), order.end(), state.rng.engine());
    std::vector<std::size_t> caption_for(data.images.size(), 0);
    for (std::size_t i : order) caption_for[i] = captions_of[i][state.rng.index(captions_of[i].size())];

    const std::size_t batches = order.size() / b;
    if (batches == 0) {
        throw ConfigError("training split of " + std::to_string(order.size()) + " pairs is smaller than batch size " +
                          std::to_string(b));
    }

    std::vector<Tensor> params = parameter_list(state.params);
    const AdamSettings adam{train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps};
    EpochStats stats;
    stats.lr = lr;
    stats.loss = train_cfg.loss;
    double loss_sum = 0.0, pos_sum = 0.0, neg_sum = 0.0;
    std::size_t pos_n = 0, neg_n = 0;

    for (std::size_t batch = 0; batch < batches; ++batch) {
        for (auto& p : params) p.zero_grad();
        GradTape tape;
        LossValue loss;
        {
            TapeScope scope(tape);
            std::vector<Tensor> images;
            std::vector<EncodedCaption> captions;
            for (std::size_t k = 0; k < b; ++k) {
                const std::size_t img = order[batch * b + k];
                images.push_back(encode_image(data.images[img], state.params));
                const auto& tokens = data.captions[caption_for[img]];
                captions.push_back(
                    encode_caption(clip_and_pad(tokens, data.vocab_size, model_cfg.max_words), state.params));
            }
            stats.encoder_forwards += 2 * b;

            std::vector<Tensor> cells;
            cells.reserve(b * b);
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t j = 0; j < b; ++j) {
                    const CampOutput out = score_pair(images[i], captions[j], state.params, model_cfg);
                    cells.push_back(out.score);
                    if (out.gate_count == 0) continue;
                    if (i == j) {
                        pos_sum += out.mean_gate();
                        ++pos_n;
                    } else {
                        neg_sum += out.mean_gate();
                        ++neg_n;
                    }
                }
            }
            stats.core_forwards += b * b;
            const Tensor scores = stack(cells, b, b);
            loss = compute_loss(scores, train_cfg);
        }
        tape.backward(loss.value);
        clip_grad_norm(params, train_cfg.clip_norm);
        adam_step(params, state.optimizer, lr, adam);
        loss_sum += loss.value.item();
    }

    stats.batches = batches;
    stats.mean_loss = loss_sum / static_cast<double>(batches);
    stats.mean_positive_gate = pos_n ? pos_sum / static_cast<double>(pos_n) : 0.0;
    stats.mean_negative_gate = neg_n ? neg_sum / static_cast<double>(neg_n) : 0.0;
    return stats;
}

FitResult fit(const Dataset& train, const Dataset& val, TrainerState& state, const ModelConfig& model_cfg,
              const TrainConfig& train_cfg, const EpochCallback& on_epoch) {
    train_cfg.validate();
    model_cfg.validate();
    train.validate();
    val.validate();

    FitResult result;
    while (state.next_epoch < train_cfg.epochs && !state.stopped) {
        const std::size_t epoch = state.next_epoch;
        TrainConfig epoch_cfg = train_cfg;
        epoch_cfg.loss = loss_for_epoch(train_cfg, epoch);
        EpochStats stats = train_epoch(train, state, model_cfg, epoch_cfg, learning_rate(train_cfg, epoch));
        stats.epoch = epoch;
        const RetrievalReport report = evaluate(val, state.params, model_cfg, train_cfg.threads);
        stats.val_rsum = report.rsum;

        if (report.rsum > state.best_val_rsum) {
            state.best_val_rsum = report.rsum;
            state.best_epoch = epoch;
            state.epochs_since_best = 0;
            copy_values(state.params, state.best_params);
        } else {
            ++state.epochs_since_best;
            if (state.epochs_since_best > train_cfg.patience) state.stopped = true;
        }
        state.next_epoch = epoch + 1;
        result.history.push_back(stats);
        if (on_epoch) on_epoch(stats, state);
    }
    result.best = state.best_params.clone();
    result.best_val_rsum = state.best_val_rsum;
    result.best_epoch = state.best_epoch;
    result.stopped_early = state.stopped;
    return result;
}

}  // namespace camp
