#include "camp/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "camp/ablation.hpp"
#include "camp/checkpoint.hpp"
#include "camp/dataset.hpp"
#include "camp/error.hpp"
#include "camp/evaluation.hpp"
#include "camp/gradcheck_suite.hpp"
#include "camp/model.hpp"
#include "camp/training.hpp"

namespace camp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

// Overrides shared by train and ablate. Only flags given on the command line
// touch the configuration.
struct Overrides {
    std::size_t d = 0, d_hidden = 0, batch = 0, epochs = 0, patience = 0, warmup = 0;
    double lr1 = 0, lr2 = 0, margin = 0, clip = 0;
    std::string loss, fusion_op, variant, aggregation, scorer;
    bool no_gates = false, no_residual = false, no_cross_attn = false;
    CLI::Option *o_d{}, *o_dh{}, *o_batch{}, *o_epochs{}, *o_patience{}, *o_lr1{}, *o_lr2{}, *o_margin{}, *o_clip{},
        *o_warmup{};

    void add_model(CLI::App* app) {
        o_d = app->add_option("--d", d, "Joint feature size d");
        o_dh = app->add_option("--d-hidden", d_hidden, "Affinity projection size (default d/2)");
        app->add_option("--fusion-op", fusion_op, "Fusion operation: add, concat or product")
            ->check(CLI::IsMember({"add", "concat", "product"}));
        app->add_option("--variant", variant, "Model variant: camp, base or no_fusion")
            ->check(CLI::IsMember({"camp", "base", "no_fusion", "no-fusion"}));
        app->add_option("--aggregation", aggregation, "Fused feature aggregation: attention or mean")
            ->check(CLI::IsMember({"attention", "mean"}));
        app->add_option("--scorer", scorer, "Matching scorer: mlp or cosine")->check(CLI::IsMember({"mlp", "cosine"}));
        app->add_flag("--no-gates", no_gates, "Disable the fusion gates");
        app->add_flag("--no-residual", no_residual, "Disable the fusion residual connection");
        app->add_flag("--no-cross-attn", no_cross_attn, "Use mean messages instead of cross-attention");
    }

    void add_train(CLI::App* app) {
        o_batch = app->add_option("--batch", batch, "Mini-batch size B");
        o_lr1 = app->add_option("--lr1", lr1, "Learning rate before the switch epoch");
        o_lr2 = app->add_option("--lr2", lr2, "Learning rate from the switch epoch on");
        o_epochs = app->add_option("--epochs", epochs, "Number of epochs");
        o_patience = app->add_option("--patience", patience, "Epochs without validation gain before stopping");
        o_margin = app->add_option("--margin", margin, "Ranking loss margin");
        o_clip = app->add_option("--clip", clip, "Global gradient norm clip (0 disables)");
        o_warmup = app->add_option("--warmup-epochs", warmup, "Epochs of plain BCE before hardest-negative BCE");
        app->add_option("--loss", loss, "Loss: bce_hardest, bce_plain or ranking")
            ->check(CLI::IsMember({"bce_hardest", "bce-hardest", "bce_plain", "bce-plain", "ranking"}));
    }

    void apply(ModelConfig& m) const {
        if (*o_d) {
            m.d = d;
            if (!*o_dh) m.d_h = d / 2;
        }
        if (*o_dh) m.d_h = d_hidden;
        if (!fusion_op.empty()) m.fusion_op = parse_fusion_op(fusion_op);
        if (!variant.empty()) m.variant = parse_variant(variant);
        if (!aggregation.empty()) m.aggregation = parse_aggregation(aggregation);
        if (!scorer.empty()) m.scorer = parse_scorer(scorer);
        if (no_gates) m.use_gates = false;
        if (no_residual) m.use_residual = false;
        if (no_cross_attn) m.use_cross_attn = false;
    }

    void apply(TrainConfig& t) const {
        if (*o_batch) t.batch_size = batch;
        if (*o_lr1) t.lr_phase1 = lr1;
        if (*o_lr2) t.lr_phase2 = lr2;
        if (*o_epochs) t.epochs = epochs;
        if (*o_patience) t.patience = patience;
        if (*o_margin) t.margin = margin;
        if (*o_clip) t.clip_norm = clip;
        if (*o_warmup) t.warmup_epochs = warmup;
        if (!loss.empty()) t.loss = parse_loss(loss);
    }
};

struct Splits {
    Dataset train, val, test;
};

// A directory written by `synth`, or the built-in desk benchmark.
Splits load_splits(const std::string& dir, std::uint64_t data_seed) {
    if (dir.empty()) {
        SyntheticData data = generate_synthetic(desk_benchmark_spec(data_seed));
        return {std::move(data.train), std::move(data.val), std::move(data.test)};
    }
    return {load_features(fs::path(dir) / "train.json"), load_features(fs::path(dir) / "val.json"),
            load_features(fs::path(dir) / "test.json")};
}

Dataset load_split(const std::string& dir, const std::string& split, std::uint64_t data_seed) {
    if (split != "train" && split != "val" && split != "test") {
        throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
    }
    if (!dir.empty()) return load_features(fs::path(dir) / (split + ".json"));
    Splits s = load_splits(dir, data_seed);
    return split == "train" ? s.train : split == "val" ? s.val : s.test;
}

// Model sizes follow the data: raw feature size and vocabulary come from the
// training split.
ModelConfig model_for(const Dataset& train) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.raw_region_dim = train.raw_dim();
    cfg.vocab_size = train.vocab_size;
    return cfg;
}

json report_json(const RetrievalReport& r) { return json(r); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

// ---- commands --------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SyntheticSpec spec;
};

int cmd_synth(const SynthArgs& a, const Common& c, std::ostream& out) {
    SyntheticSpec spec = a.spec;
    spec.seed = c.seed;
    const SyntheticData data = generate_synthetic(spec);
    fs::create_directories(a.out);
    save_dataset(data.train, fs::path(a.out) / "train.json");
    save_dataset(data.val, fs::path(a.out) / "val.json");
    save_dataset(data.test, fs::path(a.out) / "test.json");
    out << json{{"out", a.out},
                {"train_pairs", data.train.images.size()},
                {"val_pairs", data.val.images.size()},
                {"test_pairs", data.test.images.size()},
                {"raw_dim", spec.raw_region_dim},
                {"vocab_size", spec.vocab_size},
                {"seed", spec.seed}}
               .dump()
        << "\n";
    return 0;
}

struct TrainArgs {
    std::string dataset, out, resume;
    std::uint64_t data_seed = 0;
    Overrides ov;
};

int cmd_train(const TrainArgs& a, const Common& c, std::ostream& out) {
    const Splits splits = load_splits(a.dataset, a.data_seed);
    ModelConfig mcfg;
    TrainConfig tcfg;
    TrainerState state;
    if (!a.resume.empty()) {
        const Checkpoint ck = load_checkpoint(a.resume);
        if (!ck.train_config) throw ConfigError(a.resume + " holds final weights only and cannot be resumed");
        mcfg = ck.config;
        tcfg = *ck.train_config;
        if (*a.ov.o_epochs) tcfg.epochs = a.ov.epochs;
        state = resume_state(ck);
    } else {
        mcfg = model_for(splits.train);
        a.ov.apply(mcfg);
        tcfg = TrainConfig::desk();
        tcfg.seed = c.seed;
        a.ov.apply(tcfg);
        mcfg.validate();
        tcfg.validate();
        state = TrainerState::start(CampParams::initialize(mcfg, derive_seed(c.seed, "init")), tcfg);
    }
    tcfg.threads = c.threads;

    fs::create_directories(a.out);
    const fs::path stats_path = fs::path(a.out) / "stats.jsonl";
    std::ofstream stats(stats_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!stats) throw FormatError(FormatErrorKind::io, "cannot open " + stats_path.string());

    const FitResult result =
        fit(splits.train, splits.val, state, mcfg, tcfg, [&](const EpochStats& s, const TrainerState& st) {
            const std::string line = json(s).dump();
            stats << line << "\n" << std::flush;
            out << line << "\n" << std::flush;
            save_checkpoint(make_checkpoint(st, mcfg, tcfg), fs::path(a.out) / "state.ckpt");
        });

    save_checkpoint(make_checkpoint(result.best, mcfg, result.best_val_rsum), fs::path(a.out) / "model.ckpt");
    const RetrievalReport test = evaluate(splits.test, result.best, mcfg, c.threads);
    out << json{{"best_epoch", result.best_epoch},
                {"best_val_rsum", result.best_val_rsum},
                {"stopped_early", result.stopped_early},
                {"test", report_json(test)}}
               .dump()
        << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint, dataset, split = "test";
    std::uint64_t data_seed = 0;
    std::size_t folds = 1;
};

int cmd_eval(const EvalArgs& a, const Common& c, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    CampParams params = CampParams::zeros(ck.config);
    restore_params(ck.params, params);
    const Dataset data = load_split(a.dataset, a.split, a.data_seed);
    const RetrievalReport r = evaluate(data, params, ck.config, c.threads, a.folds);
    out << report_json(r).dump() << "\n";
    return 0;
}

struct AblateArgs {
    std::string grid, dataset, out, only;
    std::uint64_t data_seed = 0;
    std::size_t seeds = 1;
    Overrides ov;
};

int cmd_ablate(const AblateArgs& a, const Common& c, std::ostream& out) {
    const Splits splits = load_splits(a.dataset, a.data_seed);
    ModelConfig mcfg = model_for(splits.train);
    a.ov.apply(mcfg);
    TrainConfig tcfg = TrainConfig::desk();
    a.ov.apply(tcfg);
    tcfg.threads = c.threads;

    std::vector<AblationVariant> grid = table4_grid(mcfg, tcfg);
    if (!a.only.empty()) {
        std::vector<AblationVariant> picked;
        std::stringstream names(a.only);
        for (std::string name; std::getline(names, name, ',');) picked.push_back(ablation_variant(name, mcfg, tcfg));
        grid = std::move(picked);
    }

    std::ofstream rows;
    if (!a.out.empty()) {
        rows.open(a.out, std::ios::trunc);
        if (!rows) throw FormatError(FormatErrorKind::io, "cannot open " + a.out);
    }
    out << std::left << std::setw(18) << "variant" << std::right;
    for (const char* h : {"cap_r1", "cap_r5", "cap_r10", "img_r1", "img_r5", "img_r10", "rsum"}) {
        out << std::setw(9) << h;
    }
    out << "\n";

    for (const auto& v : grid) {
        RecallSet cap, img;
        double rsum = 0.0;
        for (std::size_t k = 0; k < a.seeds; ++k) {
            const std::uint64_t seed = c.seed + k;
            TrainConfig tc = v.train;
            tc.seed = seed;
            TrainerState st = TrainerState::start(CampParams::initialize(v.model, derive_seed(seed, "init")), tc);
            const FitResult fr = fit(splits.train, splits.val, st, v.model, tc);
            const RetrievalReport r = evaluate(splits.test, fr.best, v.model, c.threads);
            cap.r1 += r.caption_retrieval.r1;
            cap.r5 += r.caption_retrieval.r5;
            cap.r10 += r.caption_retrieval.r10;
            img.r1 += r.image_retrieval.r1;
            img.r5 += r.image_retrieval.r5;
            img.r10 += r.image_retrieval.r10;
            rsum += r.rsum;
        }
        const double n = static_cast<double>(a.seeds);
        for (RecallSet* s : {&cap, &img}) {
            s->r1 /= n;
            s->r5 /= n;
            s->r10 /= n;
        }
        rsum /= n;
        out << std::left << std::setw(18) << v.name << std::right;
        for (double x : {cap.r1, cap.r5, cap.r10, img.r1, img.r5, img.r10, rsum}) out << std::setw(9) << fmt(x);
        out << "\n" << std::flush;
        if (rows.is_open()) {
            rows << json{{"variant", v.name},
                         {"seeds", a.seeds},
                         {"caption_retrieval", {{"r1", cap.r1}, {"r5", cap.r5}, {"r10", cap.r10}}},
                         {"image_retrieval", {{"r1", img.r1}, {"r5", img.r5}, {"r10", img.r10}}},
                         {"rsum", rsum}}
                        .dump()
                 << "\n";
        }
    }
    return 0;
}

struct GradcheckArgs {
    std::size_t seeds = 10;
    double tolerance = 1e-4;
    double eps = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
    std::vector<GradCheckCase> all;
    for (std::size_t k = 0; k < a.seeds; ++k) {
        auto cases = gradcheck_suite(c.seed + k, a.eps);
        all.insert(all.end(), cases.begin(), cases.end());
    }
    std::size_t failed = 0;
    for (const auto& w : worst_per_case(all)) {
        const bool ok = w.result.max_relative_error < a.tolerance;
        failed += ok ? 0 : 1;
        out << json{{"case", w.name},
                    {"worst_relative_error", w.result.max_relative_error},
                    {"seed", w.seed},
                    {"coordinates", w.result.coordinates},
                    {"ok", ok}}
                   .dump()
            << "\n";
    }
    if (failed > 0) {
        err << "error [gradcheck]: " << failed << " case(s) at or above tolerance " << a.tolerance << "\n";
        return 1;
    }
    return 0;
}

struct InspectArgs {
    std::string checkpoint, dataset, split = "test";
    std::uint64_t data_seed = 0;
    std::size_t image = 0, caption = 0;
};

std::vector<double> column_means(const Tensor& gates, const Mask* mask) {
    std::vector<double> out;
    for (std::size_t j = 0; j < gates.cols(); ++j) {
        if (mask && !(*mask)[j]) continue;
        double s = 0.0;
        for (std::size_t i = 0; i < gates.rows(); ++i) s += gates.at(i, j);
        out.push_back(s / static_cast<double>(gates.rows()));
    }
    return out;
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    CampParams params = CampParams::zeros(ck.config);
    restore_params(ck.params, params);
    const Dataset data = load_split(a.dataset, a.split, a.data_seed);
    if (a.image >= data.images.size() || a.caption >= data.captions.size()) {
        throw ConfigError("pair (" + std::to_string(a.image) + ", " + std::to_string(a.caption) +
                          ") is outside the split's " + std::to_string(data.images.size()) + " images and " +
                          std::to_string(data.captions.size()) + " captions");
    }
    NoGradScope no_grad;
    const Tensor v = encode_image(data.images[a.image], params);
    const EncodedCaption t =
        encode_caption(clip_and_pad(data.captions[a.caption], data.vocab_size, ck.config.max_words), params);
    const CampOutput o = score_pair(v, t, params, ck.config);

    json j{{"image", a.image},
           {"caption", a.caption},
           {"matched", data.caption_image[a.caption] == a.image},
           {"score", o.score.item()},
           {"mean_gate", o.gate_count ? json(o.mean_gate()) : json(nullptr)}};
    if (o.visual.gates.defined()) j["region_gates"] = column_means(o.visual.gates, nullptr);
    if (o.textual.gates.defined()) j["word_gates"] = column_means(o.textual.gates, &t.mask);
    j["region_weights"] = std::vector<double>(o.image.weights.data().begin(), o.image.weights.data().end());
    std::vector<double> word_weights;
    for (std::size_t k = 0; k < t.mask.size(); ++k) {
        if (t.mask[k]) word_weights.push_back(o.text.weights.data()[k]);
    }
    j["word_weights"] = word_weights;
    out << j.dump() << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-modal adaptive message passing for image-text matching", "camp"};
    app.set_config("--config", "", "TOML or INI file with flag values");
    app.require_subcommand(1);

    Common common;
    app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--threads", common.threads, "Worker threads for scoring")
        ->check(CLI::Range(1u, 256u))
        ->capture_default_str();

    SynthArgs synth;
    synth.spec = desk_benchmark_spec();
    auto* s_synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
    s_synth->add_option("--out", synth.out, "Output directory")->required();
    s_synth->add_option("--train-pairs", synth.spec.n_pairs)->capture_default_str();
    s_synth->add_option("--val-pairs", synth.spec.val_pairs)->capture_default_str();
    s_synth->add_option("--test-pairs", synth.spec.test_pairs)->capture_default_str();
    s_synth->add_option("--concepts", synth.spec.n_concepts)->capture_default_str();
    s_synth->add_option("--regions", synth.spec.regions_per_image)->capture_default_str();
    s_synth->add_option("--words", synth.spec.words_per_caption)->capture_default_str();
    s_synth->add_option("--raw-dim", synth.spec.raw_region_dim)->capture_default_str();
    s_synth->add_option("--vocab", synth.spec.vocab_size)->capture_default_str();
    s_synth->add_option("--noise", synth.spec.noise_sigma)->capture_default_str();
    s_synth->add_option("--distractors", synth.spec.distractor_rate, "Probability a region is unrelated noise")
        ->capture_default_str();

    TrainArgs train;
    auto* s_train = app.add_subcommand("train", "Train a model and write checkpoints and per-epoch stats");
    s_train->add_option("--dataset", train.dataset, "Directory from `synth` (default: built-in benchmark)");
    s_train->add_option("--data-seed", train.data_seed, "Seed of the built-in benchmark")->capture_default_str();
    s_train->add_option("--out", train.out, "Output directory")->required();
    s_train->add_option("--checkpoint", train.resume, "Resume from a state.ckpt written by an earlier run");
    train.ov.add_model(s_train);
    train.ov.add_train(s_train);

    EvalArgs ev;
    auto* s_eval = app.add_subcommand("eval", "Score a split and print recall at 1, 5 and 10");
    s_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    s_eval->add_option("--dataset", ev.dataset, "Directory from `synth` (default: built-in benchmark)");
    s_eval->add_option("--data-seed", ev.data_seed)->capture_default_str();
    s_eval->add_option("--split", ev.split)->capture_default_str();
    s_eval->add_option("--folds", ev.folds, "Average over this many image folds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    AblateArgs ab;
    auto* s_ablate = app.add_subcommand("ablate", "Train and compare the ablation variants");
    s_ablate->add_option("--grid", ab.grid, "Named grid")->required()->check(CLI::IsMember({"table4"}));
    s_ablate->add_option("--variants", ab.only, "Comma-separated subset of the grid");
    s_ablate->add_option("--dataset", ab.dataset, "Directory from `synth` (default: built-in benchmark)");
    s_ablate->add_option("--data-seed", ab.data_seed)->capture_default_str();
    s_ablate->add_option("--seeds", ab.seeds, "Training seeds averaged per row, starting at --seed")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    s_ablate->add_option("--out", ab.out, "Also write one JSON record per row to this file");
    ab.ov.add_model(s_ablate);
    ab.ov.add_train(s_ablate);

    GradcheckArgs gc;
    auto* s_grad = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
    s_grad->add_option("--seeds", gc.seeds, "Seeds, starting at --seed")->check(CLI::PositiveNumber)->capture_default_str();
    s_grad->add_option("--tolerance", gc.tolerance)->capture_default_str();
    s_grad->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();

    InspectArgs in;
    auto* s_inspect = app.add_subcommand("inspect", "Show gates and attention for one image-caption pair");
    s_inspect->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
    s_inspect->add_option("--dataset", in.dataset, "Directory from `synth` (default: built-in benchmark)");
    s_inspect->add_option("--data-seed", in.data_seed)->capture_default_str();
    s_inspect->add_option("--split", in.split)->capture_default_str();
    s_inspect->add_option("--image", in.image)->capture_default_str();
    s_inspect->add_option("--caption", in.caption)->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        out << target->help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        err << "error [usage]: " << e.what() << "\n\n" << target->help();
        return 2;
    }

    try {
        if (*s_synth) return cmd_synth(synth, common, out);
        if (*s_train) return cmd_train(train, common, out);
        if (*s_eval) return cmd_eval(ev, common, out);
        if (*s_ablate) return cmd_ablate(ab, common, out);
        if (*s_grad) return cmd_gradcheck(gc, common, out, err);
        if (*s_inspect) return cmd_inspect(in, out);
    } catch (const Error& e) {
        err << "error [" << e.category() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error [internal]: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace camp::cli
