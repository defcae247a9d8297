#include <doctest.h>

#include <cmath>

#include "camp/encoders.hpp"
#include "camp/error.hpp"
#include "camp/model.hpp"
#include "camp/rng.hpp"

using namespace camp;

namespace {

using Vec = std::vector<double>;

// Plain-array GRU step, written independently of the tensor library.
struct GruOracle {
    std::size_t h, e;
    Vec wz, uz, bz, wr, ur, br, wh, uh, bh;

    static Vec read(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

    explicit GruOracle(const GruParams& p)
        : h(p.hidden()), e(p.input()),
          wz(read(p.w_z)), uz(read(p.u_z)), bz(read(p.b_z)),
          wr(read(p.w_r)), ur(read(p.u_r)), br(read(p.b_r)),
          wh(read(p.w_h)), uh(read(p.u_h)), bh(read(p.b_h)) {}

    Vec affine(const Vec& w, const Vec& x, std::size_t cols, const Vec& u, const Vec& hv, const Vec& b) const {
        Vec out(h);
        for (std::size_t i = 0; i < h; ++i) {
            double s = b[i];
            for (std::size_t k = 0; k < cols; ++k) s += w[i * cols + k] * x[k];
            for (std::size_t k = 0; k < h; ++k) s += u[i * h + k] * hv[k];
            out[i] = s;
        }
        return out;
    }

    Vec step(const Vec& x, const Vec& prev) const {
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        Vec z = affine(wz, x, e, uz, prev, bz);
        Vec r = affine(wr, x, e, ur, prev, br);
        Vec rh(h);
        for (std::size_t i = 0; i < h; ++i) {
            z[i] = sig(z[i]);
            rh[i] = sig(r[i]) * prev[i];
        }
        Vec cand = affine(wh, x, e, uh, rh, bh);
        Vec next(h);
        for (std::size_t i = 0; i < h; ++i) next[i] = (1.0 - z[i]) * prev[i] + z[i] * std::tanh(cand[i]);
        return next;
    }

    // States after consuming each input, in input order.
    std::vector<Vec> run(const std::vector<Vec>& xs, bool reverse) const {
        std::vector<Vec> out(xs.size());
        Vec state(h, 0.0);
        for (std::size_t s = 0; s < xs.size(); ++s) {
            const std::size_t i = reverse ? xs.size() - 1 - s : s;
            state = step(xs[i], state);
            out[i] = state;
        }
        return out;
    }
};

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.d = 5;
    cfg.d_h = 2;
    cfg.raw_region_dim = 7;
    cfg.embed_dim = 4;
    cfg.vocab_size = 12;
    return cfg;
}

void randomize(const CampParams& p, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& nt : p.named()) {
        Tensor t = nt.tensor;
        for (double& v : t.mutable_data()) v = rng.uniform(-0.8, 0.8);
    }
}

}  // namespace

TEST_CASE("clip_and_pad examples") {
    const std::vector<int> three{4, 5, 6};
    auto s = clip_and_pad(three, 10);
    CHECK(s.ids.size() == 50);
    CHECK(s.real_length() == 3);
    CHECK(std::count(s.mask.begin(), s.mask.end(), 0) == 47);
    CHECK(s.ids[3] == kPadToken);

    std::vector<int> sixty(60);
    for (int i = 0; i < 60; ++i) sixty[i] = 1 + i % 9;
    auto c = clip_and_pad(sixty, 10);
    CHECK(c.ids.size() == 50);
    CHECK(c.real_length() == 50);
    CHECK(std::equal(c.ids.begin(), c.ids.end(), sixty.begin()));

    std::vector<int> fifty(sixty.begin(), sixty.begin() + 50);
    auto f = clip_and_pad(fifty, 10);
    CHECK(f.ids == fifty);
    CHECK(std::all_of(f.mask.begin(), f.mask.end(), [](auto m) { return m == 1; }));
}

TEST_CASE("token validation") {
    const std::vector<int> bad_id{3, 12};
    CHECK_THROWS_AS(clip_and_pad(bad_id, 12), DomainError);
    const std::vector<int> pad_inside{3, kPadToken};
    CHECK_THROWS_AS(clip_and_pad(pad_inside, 12), DomainError);
    CHECK_THROWS_AS(clip_and_pad(std::vector<int>{}, 12), DomainError);

    TokenSequence seq{{3, 0}, {1, 1}, 12};
    CHECK_THROWS_AS(seq.validate(), DomainError);
}

TEST_CASE("project_regions examples") {
    EncoderParams p;
    p.w_img = Tensor::zeros({2, 6});
    p.b_img = Tensor::vector({0.5, -2.0});
    Rng rng(1);
    std::vector<double> raw(6 * 3);
    for (double& v : raw) v = rng.normal();
    auto out = project_regions({Tensor::matrix(6, 3, raw)}, p);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(out.at(0, j) == 0.5);
        CHECK(out.at(1, j) == -2.0);
    }

    // One-hot rows select coordinates 4 and 1.
    std::vector<double> w(2 * 6, 0.0);
    w[0 * 6 + 4] = 1.0;
    w[1 * 6 + 1] = 1.0;
    p.w_img = Tensor::matrix(2, 6, w);
    p.b_img = Tensor::zeros({2});
    out = project_regions({Tensor::matrix(6, 3, raw)}, p);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(out.at(0, j) == raw[4 * 3 + j]);
        CHECK(out.at(1, j) == raw[1 * 3 + j]);
    }
}

TEST_CASE("project_regions matches a matrix-multiply oracle at full feature size") {
    Rng rng(2);
    const std::size_t raw_dim = 2048, d = 8, r = 3;
    std::vector<double> w(d * raw_dim), m(raw_dim * r), b(d);
    for (double& v : w) v = rng.uniform(-0.05, 0.05);
    for (double& v : m) v = rng.normal();
    for (double& v : b) v = rng.uniform(-1, 1);
    EncoderParams p;
    p.w_img = Tensor::matrix(d, raw_dim, w);
    p.b_img = Tensor::vector(b);
    auto out = project_regions({Tensor::matrix(raw_dim, r, m)}, p);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double s = b[i];
            for (std::size_t k = 0; k < raw_dim; ++k) s += w[i * raw_dim + k] * m[k * r + j];
            CHECK(out.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("project_regions rejects a feature size mismatch") {
    EncoderParams p;
    p.w_img = Tensor::zeros({2, 6});
    p.b_img = Tensor::zeros({2});
    CHECK_THROWS_AS(project_regions({Tensor::zeros({5, 2})}, p), DimensionError);
}

TEST_CASE("zero GRU parameters give zero word features") {
    const ModelConfig cfg = small_config();
    const CampParams p = CampParams::zeros(cfg);
    Rng rng(3);
    for (double& v : p.encoder.embedding.node()->value) v = rng.normal();
    const std::vector<int> words{1, 2, 3};
    auto t = encode_words(clip_and_pad(words, cfg.vocab_size), p.encoder);
    for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("single-token sentence averages two one-step cells") {
    const ModelConfig cfg = small_config();
    const CampParams p = CampParams::initialize(cfg, 4);
    randomize(p, 44);
    const std::vector<int> words{7};
    const auto seq = clip_and_pad(words, cfg.vocab_size, 1);
    auto t = encode_words(seq, p.encoder);
    REQUIRE(t.cols() == 1);

    Vec x(cfg.embed_dim);
    for (std::size_t k = 0; k < cfg.embed_dim; ++k) x[k] = p.encoder.embedding.at(k, 7);
    const Vec zero(cfg.d, 0.0);
    const Vec f = GruOracle(p.encoder.forward).step(x, zero);
    const Vec b = GruOracle(p.encoder.backward).step(x, zero);
    for (std::size_t i = 0; i < cfg.d; ++i) CHECK(t.at(i, 0) == doctest::Approx((f[i] + b[i]) / 2).epsilon(1e-13));
}

TEST_CASE("bidirectional encoder matches a step-by-step recurrence oracle") {
    const ModelConfig cfg = small_config();
    for (std::uint64_t seed : {5u, 6u, 7u}) {
        const CampParams p = CampParams::initialize(cfg, seed);
        randomize(p, seed * 31);
        const std::vector<int> words{3, 9, 1};
        const auto seq = clip_and_pad(words, cfg.vocab_size);
        const Tensor t = encode_words(seq, p.encoder);
        REQUIRE(t.cols() == 50);

        std::vector<Vec> xs;
        for (int id : seq.ids) {
            Vec x(cfg.embed_dim);
            for (std::size_t k = 0; k < cfg.embed_dim; ++k) x[k] = p.encoder.embedding.at(k, id);
            xs.push_back(x);
        }
        const auto fwd = GruOracle(p.encoder.forward).run(xs, false);
        const auto bwd = GruOracle(p.encoder.backward).run(xs, true);
        for (std::size_t j = 0; j < 50; ++j)
            for (std::size_t i = 0; i < cfg.d; ++i)
                CHECK(t.at(i, j) == doctest::Approx((fwd[j][i] + bwd[j][i]) / 2).epsilon(1e-12));
    }
}

TEST_CASE("run_gru reverse equals forward over reversed columns") {
    const ModelConfig cfg = small_config();
    const CampParams p = CampParams::initialize(cfg, 8);
    Rng rng(8);
    std::vector<double> xv(cfg.embed_dim * 4);
    for (double& v : xv) v = rng.normal();
    std::vector<double> rev(xv.size());
    for (std::size_t k = 0; k < cfg.embed_dim; ++k)
        for (std::size_t j = 0; j < 4; ++j) rev[k * 4 + j] = xv[k * 4 + (3 - j)];
    auto a = run_gru(Tensor::matrix(cfg.embed_dim, 4, xv), p.encoder.forward, true);
    auto b = run_gru(Tensor::matrix(cfg.embed_dim, 4, rev), p.encoder.forward, false);
    for (std::size_t i = 0; i < cfg.d; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(a.at(i, j) == b.at(i, 3 - j));
}
