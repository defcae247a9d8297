#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "camp/checkpoint.hpp"
#include "camp/error.hpp"
#include "camp/evaluation.hpp"
#include "camp/training.hpp"

using namespace camp;

namespace {

struct Fixture {
    SyntheticData data;
    ModelConfig model;
    TrainConfig train;

    explicit Fixture(std::size_t pairs = 24) {
        SyntheticSpec spec;
        spec.n_pairs = pairs;
        spec.val_pairs = 8;
        spec.test_pairs = 8;
        spec.raw_region_dim = 16;
        spec.vocab_size = 32;
        spec.regions_per_image = 3;
        spec.words_per_caption = 4;
        spec.seed = 11;
        data = generate_synthetic(spec);
        model.d = 6;
        model.d_h = 3;
        model.embed_dim = 4;
        model.raw_region_dim = 16;
        model.vocab_size = 32;
        model.max_words = 8;
        train = TrainConfig::desk();
        train.batch_size = 4;
        train.epochs = 3;
        train.seed = 5;
        train.warmup_epochs = 0;
    }

    TrainerState fresh() const { return TrainerState::start(CampParams::initialize(model, 3), train); }
};

bool same_values(const CampParams& a, const CampParams& b) {
    auto x = a.named(), y = b.named();
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto p = x[i].tensor.data(), q = y[i].tensor.data();
        if (!std::equal(p.begin(), p.end(), q.begin(), q.end())) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("adam first step moves each coordinate by about lr") {
    Tensor x = Tensor::vector({1.0, -2.0, 0.5}, true);
    std::vector<double> g{0.5, -3.0, 1e-3};
    std::copy(g.begin(), g.end(), x.mutable_grad().begin());
    OptimizerState st;
    std::vector<Tensor> params{x};
    adam_step(params, st, 0.01);
    // After bias correction m/sqrt(v) = g/|g| on the first step.
    const std::vector<double> start{1.0, -2.0, 0.5};
    for (std::size_t i = 0; i < 3; ++i) {
        const double want = start[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
        CHECK(x[i] == doctest::Approx(want).epsilon(1e-15));
    }
    CHECK(st.step == 1);
}

TEST_CASE("adam matches a hand-written recurrence over several steps") {
    Tensor x = Tensor::vector({0.3, -0.7}, true);
    std::vector<Tensor> params{x};
    OptimizerState st;
    double ref[2] = {0.3, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
    const AdamSettings s{0.8, 0.95, 1e-6};
    for (int t = 1; t <= 5; ++t) {
        const double g[2] = {std::sin(t * 1.3), std::cos(t * 0.4) - 0.5};
        x.mutable_grad()[0] = g[0];
        x.mutable_grad()[1] = g[1];
        adam_step(params, st, 0.05, s);
        for (int i = 0; i < 2; ++i) {
            m[i] = 0.8 * m[i] + 0.2 * g[i];
            v[i] = 0.95 * v[i] + 0.05 * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(0.8, t)), vh = v[i] / (1 - std::pow(0.95, t));
            ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-6);
        }
    }
    CHECK(x[0] == doctest::Approx(ref[0]).epsilon(1e-13));
    CHECK(x[1] == doctest::Approx(ref[1]).epsilon(1e-13));
}

TEST_CASE("adam leaves parameters with zero gradient unchanged") {
    Tensor x = Tensor::vector({0.25, -4.0}, true);
    x.zero_grad();
    std::vector<Tensor> params{x};
    OptimizerState st;
    adam_step(params, st, 0.1);
    CHECK(x[0] == 0.25);
    CHECK(x[1] == -4.0);
}

TEST_CASE("global gradient clipping") {
    Tensor a = Tensor::vector({0, 0}, true), b = Tensor::vector({0}, true);
    a.mutable_grad()[0] = 3.0;
    a.mutable_grad()[1] = 0.0;
    b.mutable_grad()[0] = 4.0;
    std::vector<Tensor> params{a, b};
    CHECK(clip_grad_norm(params, 2.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(1.2));
    CHECK(b.grad()[0] == doctest::Approx(1.6));
    CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(2.0));
    CHECK(b.grad()[0] == doctest::Approx(1.6));
    CHECK(clip_grad_norm(params, 0.0) == doctest::Approx(2.0));
    CHECK(b.grad()[0] == doctest::Approx(1.6));
}

TEST_CASE("learning-rate schedule and warm-up") {
    TrainConfig cfg;
    CHECK(learning_rate(cfg, 0) == 2e-4);
    CHECK(learning_rate(cfg, 14) == 2e-4);
    CHECK(learning_rate(cfg, 15) == 2e-5);
    CHECK(learning_rate(cfg, 39) == 2e-5);
    CHECK(cfg.epochs == 40);

    cfg.warmup_epochs = 2;
    CHECK(loss_for_epoch(cfg, 1) == LossKind::bce_plain);
    CHECK(loss_for_epoch(cfg, 2) == LossKind::bce_hardest);
    cfg.loss = LossKind::ranking;
    CHECK(loss_for_epoch(cfg, 0) == LossKind::ranking);
}

TEST_CASE("train config validation and json round trip") {
    TrainConfig cfg = TrainConfig::desk();
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig::desk();
    cfg.lr_phase1 = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = TrainConfig::desk();
    cfg.warmup_epochs = 3;
    cfg.hardest_by = HardestBy::loss_term;
    nlohmann::json j = cfg;
    const TrainConfig back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK_THROWS_AS(parse_loss("hinge"), ConfigError);
}

TEST_CASE("an epoch runs 2B encoder and B^2 core passes per batch and drops the partial batch") {
    Fixture fx(26);
    TrainerState st = fx.fresh();
    const EpochStats stats = train_epoch(fx.data.train, st, fx.model, fx.train, 1e-3);
    CHECK(stats.batches == 6);
    CHECK(stats.core_forwards == 6 * 16);
    CHECK(stats.encoder_forwards == 6 * 8);
    CHECK(std::isfinite(stats.mean_loss));
    CHECK(stats.mean_positive_gate > 0.0);
    CHECK(stats.mean_positive_gate < 1.0);
    CHECK(st.optimizer.step == 6);
}

TEST_CASE("a training split smaller than one batch is an error") {
    Fixture fx(3);
    TrainerState st = fx.fresh();
    CHECK_THROWS_AS(train_epoch(fx.data.train, st, fx.model, fx.train, 1e-3), ConfigError);
}

TEST_CASE("zero learning rate freezes the parameters") {
    Fixture fx;
    TrainerState st = fx.fresh();
    const CampParams before = st.params.clone();
    train_epoch(fx.data.train, st, fx.model, fx.train, 0.0);
    CHECK(same_values(before, st.params));
}

TEST_CASE("early stopping with zero patience") {
    Fixture fx;
    fx.train.lr_phase1 = fx.train.lr_phase2 = 0.0;
    fx.train.epochs = 10;
    fx.train.patience = 0;
    TrainerState st = fx.fresh();
    const FitResult r = fit(fx.data.train, fx.data.val, st, fx.model, fx.train);
    // Frozen weights give a constant rsum, so the second epoch cannot improve.
    CHECK(r.history.size() == 2);
    CHECK(r.stopped_early);
    CHECK(r.best_epoch == 0);

    fx.train.patience = 2;
    TrainerState again = fx.fresh();
    CHECK(fit(fx.data.train, fx.data.val, again, fx.model, fx.train).history.size() == 4);
}

TEST_CASE("fit keeps the best validation parameters") {
    Fixture fx;
    fx.train.epochs = 4;
    fx.train.lr_phase1 = 5e-3;
    TrainerState st = fx.fresh();
    const FitResult r = fit(fx.data.train, fx.data.val, st, fx.model, fx.train);
    REQUIRE(r.history.size() == 4);
    for (const auto& h : r.history) CHECK(r.best_val_rsum >= *h.val_rsum);
    CHECK(*r.history[r.best_epoch].val_rsum == r.best_val_rsum);
    CHECK(evaluate(fx.data.val, r.best, fx.model).rsum == r.best_val_rsum);
}

TEST_CASE("training is deterministic for a fixed seed") {
    Fixture fx;
    TrainerState a = fx.fresh(), b = fx.fresh();
    const FitResult ra = fit(fx.data.train, fx.data.val, a, fx.model, fx.train);
    const FitResult rb = fit(fx.data.train, fx.data.val, b, fx.model, fx.train);
    CHECK(same_values(a.params, b.params));
    for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(ra.history[i].mean_loss == rb.history[i].mean_loss);

    fx.train.seed = 6;
    TrainerState c = fx.fresh();
    fit(fx.data.train, fx.data.val, c, fx.model, fx.train);
    CHECK_FALSE(same_values(a.params, c.params));
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
    Fixture fx;
    fx.train.epochs = 4;
    fx.train.warmup_epochs = 1;
    TrainerState straight = fx.fresh();
    fit(fx.data.train, fx.data.val, straight, fx.model, fx.train);

    TrainConfig half = fx.train;
    half.epochs = 2;
    TrainerState first = fx.fresh();
    fit(fx.data.train, fx.data.val, first, fx.model, half);
    const auto path = std::filesystem::temp_directory_path() / "camp_test_resume.ckpt";
    save_checkpoint(make_checkpoint(first, fx.model, fx.train), path);
    TrainerState resumed = resume_state(load_checkpoint(path));
    std::filesystem::remove(path);
    CHECK(resumed.next_epoch == 2);
    fit(fx.data.train, fx.data.val, resumed, fx.model, fx.train);

    CHECK(same_values(straight.params, resumed.params));
    CHECK(same_values(straight.best_params, resumed.best_params));
    CHECK(straight.best_val_rsum == resumed.best_val_rsum);
    CHECK(straight.optimizer.step == resumed.optimizer.step);
}

TEST_CASE("desk training lowers the mean loss over the first five epochs") {
    const SyntheticData data = generate_synthetic(desk_benchmark_spec(0));
    ModelConfig model = ModelConfig::desk();
    model.raw_region_dim = data.train.raw_dim();
    model.vocab_size = data.train.vocab_size;
    TrainConfig train = TrainConfig::desk();
    train.epochs = 5;
    TrainerState st = TrainerState::start(CampParams::initialize(model, 0), train);
    const FitResult r = fit(data.train, data.val, st, model, train);
    REQUIRE(r.history.size() == 5);
    for (std::size_t e = 1; e < 5; ++e) CHECK(r.history[e].mean_loss < r.history[e - 1].mean_loss);
}
