#include "camp/gradcheck_suite.hpp"

#include <algorithm>
#include <map>

#include "camp/camp_core.hpp"
#include "camp/model.hpp"
#include "camp/objectives.hpp"
#include "camp/rng.hpp"

namespace camp {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& x : t.mutable_data()) x = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero so kinked functions stay differentiable
// across the finite-difference stencil.
Tensor away_from_zero(Rng& rng, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& x : t.mutable_data()) {
        const double mag = rng.uniform(0.1, 1.0);
        x = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

// Weighted sum with weights fixed by `seed`, turning any output into a scalar.
Tensor probe(const Tensor& out, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> w(out.size());
    for (double& x : w) x = rng.uniform(-1.0, 1.0);
    return sum(mul(out, Tensor::from(out.shape(), std::move(w))));
}

struct Suite {
    std::uint64_t seed;
    double eps;
    std::vector<GradCheckCase> cases;

    void run(const std::string& name, std::vector<Tensor> inputs, const ScalarFunction& f) {
        const std::uint64_t probe_seed = derive_seed(seed, name);
        ScalarFunction g = [&](std::span<const Tensor> in) {
            Tensor y = f(in);
            return y.size() == 1 ? reshape(y, {1}) : probe(y, probe_seed);
        };
        cases.push_back({name, seed, grad_check(g, inputs, eps)});
    }
};

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d = 4;
    cfg.d_h = 2;
    cfg.raw_region_dim = 5;
    cfg.embed_dim = 3;
    cfg.vocab_size = 9;
    cfg.max_words = 6;
    return cfg;
}

// Random caption of `real` tokens padded to cfg.max_words.
TokenSequence random_tokens(Rng& rng, const ModelConfig& cfg, std::size_t real) {
    std::vector<int> ids(real);
    for (int& id : ids) id = 1 + static_cast<int>(rng.index(cfg.vocab_size - 1));
    return clip_and_pad(ids, cfg.vocab_size, cfg.max_words);
}

Mask word_mask(std::size_t n, std::size_t real) {
    Mask m(n, 0);
    std::fill_n(m.begin(), real, 1);
    return m;
}

void add_tensor_ops(Suite& s, Rng& rng) {
    s.run("matmul", {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
          [](auto in) { return matmul(in[0], in[1]); });
    s.run("matmul_order_invariant", {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})},
          [](auto in) { return matmul(in[0], in[1], Accumulation::order_invariant); });
    s.run("transpose", {random_tensor(rng, {3, 2})}, [](auto in) { return transpose(in[0]); });
    s.run("linear", {random_tensor(rng, {4, 3}), random_tensor(rng, {2, 4}), random_tensor(rng, {2})},
          [](auto in) { return linear(in[0], in[1], in[2]); });
    s.run("scaled_softmax", {random_tensor(rng, {3, 4}, -2.0, 2.0)},
          [](auto in) { return scaled_softmax(in[0], 1.7); });
    {
        auto mask = std::make_shared<Mask>(Mask{1, 0, 1, 1, 1, 1, 0, 1, 0, 0, 1, 1});
        s.run("scaled_softmax_masked", {random_tensor(rng, {3, 4}, -2.0, 2.0)},
              [mask](auto in) { return scaled_softmax(in[0], 2.0, mask.get()); });
    }
    s.run("sigmoid", {random_tensor(rng, {3, 3}, -3.0, 3.0)}, [](auto in) { return sigmoid(in[0]); });
    s.run("tanh", {random_tensor(rng, {3, 3}, -2.0, 2.0)}, [](auto in) { return tanh(in[0]); });
    s.run("relu", {away_from_zero(rng, {3, 3})}, [](auto in) { return relu(in[0]); });
    s.run("add", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
          [](auto in) { return add(in[0], in[1]); });
    s.run("mul", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
          [](auto in) { return mul(in[0], in[1]); });
    s.run("sub", {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3})},
          [](auto in) { return sub(in[0], in[1]); });
    s.run("affine", {random_tensor(rng, {4})}, [](auto in) { return affine(in[0], -1.5, 0.25); });
    s.run("log", {random_tensor(rng, {2, 3}, 0.2, 2.0)}, [](auto in) { return log(in[0]); });
    s.run("clamp", {random_tensor(rng, {2, 3}, -0.8, 0.8)}, [](auto in) { return clamp(in[0], -0.9, 0.9); });
    s.run("sum", {random_tensor(rng, {2, 3})}, [](auto in) { return sum(in[0]); });
    s.run("mean", {random_tensor(rng, {2, 3})}, [](auto in) { return mean(in[0]); });
    s.run("element", {random_tensor(rng, {2, 3})}, [](auto in) { return element(in[0], 1, 2); });
    s.run("stack", {random_tensor(rng, {2, 2})}, [](auto in) {
        std::vector<Tensor> cells{element(in[0], 1, 1), element(in[0], 0, 1), element(in[0], 1, 0),
                                  element(in[0], 0, 0), element(in[0], 1, 1), element(in[0], 0, 0)};
        return stack(cells, 2, 3);
    });
    s.run("slice_column", {random_tensor(rng, {3, 4})}, [](auto in) { return slice_column(in[0], 2); });
    s.run("gather_columns", {random_tensor(rng, {2, 4})}, [](auto in) {
        const std::vector<std::size_t> cols{3, 0, 3, 1};
        return gather_columns(in[0], cols);
    });
    s.run("concat_columns", {random_tensor(rng, {3}), random_tensor(rng, {3})}, [](auto in) {
        std::vector<Tensor> cols{in[1], in[0], in[1]};
        return concat_columns(cols);
    });
    s.run("concat_rows", {random_tensor(rng, {2, 3}), random_tensor(rng, {1, 3})},
          [](auto in) { return concat_rows(in[0], in[1]); });
    s.run("repeat_column", {random_tensor(rng, {3})}, [](auto in) { return repeat_column(in[0], 4); });
    s.run("reshape", {random_tensor(rng, {2, 3})}, [](auto in) { return reshape(in[0], {3, 2}); });
    s.run("cosine_similarity", {random_tensor(rng, {4}), random_tensor(rng, {4})},
          [](auto in) { return cosine_similarity(in[0], in[1]); });
}

void add_model_stages(Suite& s, Rng& rng) {
    const ModelConfig cfg = tiny_config();
    const CampParams params = CampParams::initialize(cfg, rng.split("params").seed());
    const std::size_t d = cfg.d, r = 3, n = cfg.max_words, real = 4;

    s.run("project_regions",
          {random_tensor(rng, {cfg.raw_region_dim, r}), params.encoder.w_img.clone(true),
           random_tensor(rng, {d}, -0.5, 0.5)},
          [](auto in) {
              EncoderParams p;
              p.w_img = in[1];
              p.b_img = in[2];
              return project_regions(RawRegionFeatures{in[0]}, p);
          });

    const GruParams& g = params.encoder.forward;
    std::vector<Tensor> gru_in{random_tensor(rng, {cfg.embed_dim, 4}),
                               g.w_z.clone(true), g.u_z.clone(true), random_tensor(rng, {d}, -0.3, 0.3),
                               g.w_r.clone(true), g.u_r.clone(true), random_tensor(rng, {d}, -0.3, 0.3),
                               g.w_h.clone(true), g.u_h.clone(true), random_tensor(rng, {d}, -0.3, 0.3)};
    auto gru_from = [](std::span<const Tensor> in) {
        return GruParams{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9]};
    };
    s.run("gru_forward", gru_in, [gru_from](auto in) { return run_gru(in[0], gru_from(in), false); });
    s.run("gru_reverse", gru_in, [gru_from](auto in) { return run_gru(in[0], gru_from(in), true); });

    {
        const TokenSequence tokens = random_tokens(rng, cfg, real);
        const EncoderParams& e = params.encoder;
        std::vector<Tensor> in{e.embedding.clone(true), e.forward.u_h.clone(true), e.backward.w_z.clone(true)};
        s.run("encode_words", in, [tokens, e](auto in) {
            EncoderParams p = e;
            p.embedding = in[0];
            p.forward.u_h = in[1];
            p.backward.w_z = in[2];
            return encode_words(tokens, p);
        });
    }

    const Mask mask = word_mask(n, real);
    auto batch_from = [mask](const Tensor& v, const Tensor& t) { return FeatureBatch{v, t, mask}; };
    const Tensor v0 = random_tensor(rng, {d, r});
    const Tensor t0 = random_tensor(rng, {d, n});

    s.run("affinity", {v0.clone(true), t0.clone(true), params.core.proj_v.clone(true), params.core.proj_t.clone(true)},
          [batch_from](auto in) {
              CampCoreParams p;
              p.proj_v = in[2];
              p.proj_t = in[3];
              return affinity(batch_from(in[0], in[1]), p);
          });
    s.run("aggregate_messages", {random_tensor(rng, {r, n}, -2.0, 2.0), v0.clone(true), t0.clone(true)},
          [batch_from, &cfg](auto in) {
              Messages m = aggregate_messages(in[0], batch_from(in[1], in[2]), cfg.d_h);
              return concat_rows(m.v_tilde, m.t_tilde);
          });
    s.run("mean_messages", {v0.clone(true), t0.clone(true)}, [batch_from](auto in) {
        Messages m = mean_messages(batch_from(in[0], in[1]));
        return concat_rows(m.v_tilde, m.t_tilde);
    });

    for (FusionOp op : {FusionOp::add, FusionOp::concat, FusionOp::product}) {
        ModelConfig fc = cfg;
        fc.fusion_op = op;
        const std::size_t fuse_in = op == FusionOp::concat ? 2 * d : d;
        for (int variant = 0; variant < 3; ++variant) {
            ModelConfig c = fc;
            std::string name = "gated_fuse_" + std::string(to_string(op));
            if (variant == 1) {
                c.use_gates = false;
                name += "_no_gates";
            } else if (variant == 2) {
                c.use_residual = false;
                name += "_no_residual";
            }
            s.run(name,
                  {random_tensor(rng, {d, r}), random_tensor(rng, {r, d}), random_tensor(rng, {d, fuse_in}, -0.5, 0.5),
                   random_tensor(rng, {d}, -0.5, 0.5)},
                  [c](auto in) { return gated_fuse(in[0], in[1], FusionTransform{in[2], in[3]}, c).fused; });
        }
    }

    for (Aggregation agg : {Aggregation::attention, Aggregation::mean}) {
        s.run("attend_aggregate_" + std::string(to_string(agg)), {t0.clone(true), random_tensor(rng, {1, d})},
              [mask, agg](auto in) { return attend_aggregate(in[0], in[1], &mask, agg).vector; });
    }

    s.run("match_score_mlp",
          {random_tensor(rng, {d}), random_tensor(rng, {d}), params.core.mlp_w1.clone(true),
           random_tensor(rng, {d}, -0.3, 0.3), params.core.mlp_w2.clone(true), random_tensor(rng, {1}, -0.3, 0.3)},
          [](auto in) {
              CampCoreParams p;
              p.mlp_w1 = in[2];
              p.mlp_b1 = in[3];
              p.mlp_w2 = in[4];
              p.mlp_b2 = in[5];
              return match_score(in[0], in[1], p, Scorer::mlp);
          });
    s.run("match_score_cosine", {random_tensor(rng, {d}), random_tensor(rng, {d})},
          [](auto in) { return match_score(in[0], in[1], CampCoreParams{}, Scorer::cosine); });
}

void add_losses(Suite& s, Rng& rng) {
    const std::size_t b = 2 + rng.index(4);
    s.run("bce_hardest", {random_tensor(rng, {b, b}, 0.05, 0.95)},
          [](auto in) { return bce_hardest(in[0]).value; });
    s.run("bce_hardest_by_loss_term", {random_tensor(rng, {b, b}, 0.05, 0.95)},
          [](auto in) { return bce_hardest(in[0], HardestBy::loss_term).value; });
    s.run("bce_plain", {random_tensor(rng, {b, b}, 0.05, 0.95)}, [](auto in) { return bce_plain(in[0]).value; });
    s.run("ranking_hardest", {random_tensor(rng, {b, b})}, [](auto in) { return ranking_hardest(in[0], 0.2).value; });
}

// Encoders, core and loss over a batch of three pairs, differentiated with
// respect to every model parameter at once.
void add_end_to_end(Suite& s, Rng& rng, Variant variant) {
    ModelConfig cfg = tiny_config();
    cfg.variant = variant;
    const CampParams params = CampParams::initialize(cfg, rng.split("e2e").seed());
    std::vector<Tensor> inputs;
    for (auto& nt : params.named()) {
        Tensor t = nt.tensor.clone(true);
        // Nonzero biases exercise their gradient paths.
        if (std::all_of(t.data().begin(), t.data().end(), [](double x) { return x == 0.0; })) {
            for (double& x : t.mutable_data()) x = rng.uniform(-0.2, 0.2);
        }
        inputs.push_back(t);
    }

    constexpr std::size_t kB = 3;
    std::vector<RawRegionFeatures> images;
    std::vector<TokenSequence> captions;
    for (std::size_t i = 0; i < kB; ++i) {
        images.push_back({random_tensor(rng, {cfg.raw_region_dim, 2 + i}).detach()});
        captions.push_back(random_tokens(rng, cfg, 2 + i));
    }

    const bool cosine = cfg.effective_scorer() == Scorer::cosine;
    s.run(std::string("end_to_end_") + std::string(to_string(variant)), inputs,
          [=](std::span<const Tensor> in) {
              CampParams p = CampParams::zeros(cfg);
              p.rebind(in);
              std::vector<Tensor> vs;
              std::vector<EncodedCaption> ts;
              for (std::size_t i = 0; i < kB; ++i) {
                  vs.push_back(encode_image(images[i], p));
                  ts.push_back(encode_caption(captions[i], p));
              }
              std::vector<Tensor> cells;
              for (std::size_t i = 0; i < kB; ++i) {
                  for (std::size_t j = 0; j < kB; ++j) cells.push_back(score_pair(vs[i], ts[j], p, cfg).score);
              }
              const Tensor scores = stack(cells, kB, kB);
              return cosine ? ranking_hardest(scores, 0.2).value : bce_hardest(scores).value;
          });
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed, double eps) {
    Suite s{seed, eps, {}};
    Rng rng(derive_seed(seed, "gradcheck"));
    add_tensor_ops(s, rng);
    add_model_stages(s, rng);
    add_losses(s, rng);
    add_end_to_end(s, rng, Variant::camp);
    add_end_to_end(s, rng, Variant::base);
    add_end_to_end(s, rng, Variant::no_fusion);
    return s.cases;
}

std::vector<GradCheckCase> worst_per_case(std::span<const GradCheckCase> cases) {
    std::vector<GradCheckCase> out;
    std::map<std::string, std::size_t> index;
    for (const auto& c : cases) {
        auto [it, inserted] = index.emplace(c.name, out.size());
        if (inserted) {
            out.push_back(c);
        } else if (c.result.max_relative_error > out[it->second].result.max_relative_error) {
            out[it->second] = c;
        }
    }
    return out;
}

}  // namespace camp
