#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "camp/evaluation.hpp"
#include "camp/rng.hpp"

using namespace camp;

namespace {

Tensor random_scores(Rng& rng, std::size_t images, std::size_t captions) {
    std::vector<double> v(images * captions);
    for (double& x : v) x = rng.uniform(0.0, 1.0);
    return Tensor::matrix(images, captions, v);
}

std::vector<std::size_t> identity_map(std::size_t n) {
    std::vector<std::size_t> m(n);
    std::iota(m.begin(), m.end(), 0);
    return m;
}

// Rank of `target` among `xs`: entries strictly greater, plus equal ones at
// a lower index.
std::size_t rank_of(const std::vector<double>& xs, std::size_t target) {
    std::size_t r = 0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i] > xs[target] || (xs[i] == xs[target] && i < target)) ++r;
    return r;
}

double oracle_recall(const Tensor& s, const std::vector<std::size_t>& gt, std::size_t k, Direction dir) {
    const std::size_t n_img = s.rows(), n_cap = s.cols();
    double hits = 0;
    if (dir == Direction::image_retrieval) {
        for (std::size_t c = 0; c < n_cap; ++c) {
            std::vector<double> col(n_img);
            for (std::size_t i = 0; i < n_img; ++i) col[i] = s.at(i, c);
            if (rank_of(col, gt[c]) < k) hits += 1;
        }
        return hits / static_cast<double>(n_cap);
    }
    for (std::size_t i = 0; i < n_img; ++i) {
        std::vector<double> row(n_cap);
        for (std::size_t c = 0; c < n_cap; ++c) row[c] = s.at(i, c);
        bool hit = false;
        for (std::size_t c = 0; c < n_cap; ++c)
            if (gt[c] == i && rank_of(row, c) < k) hit = true;
        hits += hit;
    }
    return hits / static_cast<double>(n_img);
}

SyntheticData small_data() {
    SyntheticSpec spec;
    spec.n_pairs = 8;
    spec.val_pairs = 7;
    spec.test_pairs = 6;
    spec.raw_region_dim = 12;
    spec.vocab_size = 30;
    spec.regions_per_image = 3;
    spec.words_per_caption = 4;
    spec.seed = 3;
    return generate_synthetic(spec);
}

ModelConfig small_model() {
    ModelConfig cfg;
    cfg.d = 6;
    cfg.d_h = 3;
    cfg.embed_dim = 4;
    cfg.raw_region_dim = 12;
    cfg.vocab_size = 30;
    cfg.max_words = 8;
    return cfg;
}

}  // namespace

TEST_CASE("uniform scores break ties by index") {
    const Tensor s = Tensor::filled({10, 10}, 0.5);
    const auto gt = identity_map(10);
    CHECK(recall_at_k(s, gt, 1, Direction::caption_retrieval) == doctest::Approx(0.1));
    CHECK(recall_at_k(s, gt, 1, Direction::image_retrieval) == doctest::Approx(0.1));
    CHECK(recall_at_k(s, gt, 5, Direction::image_retrieval) == doctest::Approx(0.5));
}

TEST_CASE("recall examples") {
    const auto gt = identity_map(3);
    const Tensor perfect = Tensor::matrix(3, 3, {0.9, 0.1, 0.2, 0.0, 0.8, 0.3, 0.1, 0.2, 0.7});
    CHECK(recall_at_k(perfect, gt, 1, Direction::caption_retrieval) == 1.0);
    CHECK(recall_at_k(perfect, gt, 1, Direction::image_retrieval) == 1.0);

    // Image 0 prefers caption 1; caption 0 prefers image 2.
    const Tensor mixed = Tensor::matrix(3, 3, {0.5, 0.6, 0.0, 0.0, 0.8, 0.0, 0.7, 0.0, 0.9});
    CHECK(recall_at_k(mixed, gt, 1, Direction::caption_retrieval) == doctest::Approx(2.0 / 3));
    CHECK(recall_at_k(mixed, gt, 1, Direction::image_retrieval) == doctest::Approx(2.0 / 3));
    CHECK(recall_at_k(mixed, gt, 2, Direction::image_retrieval) == 1.0);
}

TEST_CASE("k beyond the gallery uses the whole gallery") {
    Rng rng(1);
    const Tensor s = random_scores(rng, 4, 4);
    const auto gt = identity_map(4);
    CHECK(recall_at_k(s, gt, 10, Direction::caption_retrieval) == 1.0);
    CHECK(recall_at_k(s, gt, 4, Direction::image_retrieval) == 1.0);
}

TEST_CASE("caption retrieval counts any of an image's captions") {
    // Two captions per image; image 1 ranks its second caption first.
    const std::vector<std::size_t> gt{0, 0, 1, 1};
    const Tensor s = Tensor::matrix(2, 4, {0.9, 0.1, 0.2, 0.3, 0.8, 0.2, 0.1, 0.95});
    CHECK(recall_at_k(s, gt, 1, Direction::caption_retrieval) == 1.0);
    CHECK(recall_at_k(s, gt, 1, Direction::image_retrieval) == doctest::Approx(0.5));
}

TEST_CASE("recall matches a rank-counting oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n_img = 3 + rng.index(10), per = 1 + rng.index(3);
        std::vector<std::size_t> gt;
        for (std::size_t i = 0; i < n_img; ++i)
            for (std::size_t c = 0; c < per; ++c) gt.push_back(i);
        Tensor s = random_scores(rng, n_img, gt.size());
        if (trial % 4 == 0) {
            std::vector<double> q(s.data().begin(), s.data().end());
            for (double& x : q) x = std::round(x * 3) / 3;
            s = Tensor::matrix(n_img, gt.size(), q);
        }
        for (std::size_t k : {1u, 5u, 10u})
            for (auto dir : {Direction::caption_retrieval, Direction::image_retrieval})
                CHECK(recall_at_k(s, gt, k, dir) == doctest::Approx(oracle_recall(s, gt, k, dir)));
    }
}

TEST_CASE("recall properties") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 5 + rng.index(15);
        const auto gt = identity_map(n);
        const Tensor s = random_scores(rng, n, n);
        const RetrievalReport rep = make_report(s, gt);
        for (const RecallSet& r : {rep.caption_retrieval, rep.image_retrieval}) {
            CHECK(r.r1 <= r.r5);
            CHECK(r.r5 <= r.r10);
            CHECK(r.r1 >= 0.0);
            CHECK(r.r10 <= 1.0);
        }
        CHECK(rep.rsum == doctest::Approx(rep.caption_retrieval.sum() + rep.image_retrieval.sum()));

        // A strictly increasing map of the scores leaves every recall unchanged.
        std::vector<double> mapped(s.data().begin(), s.data().end());
        for (double& x : mapped) x = std::exp(3 * x) - 7;
        const RetrievalReport again = make_report(Tensor::matrix(n, n, mapped), gt);
        CHECK(again.rsum == rep.rsum);
        CHECK(again.caption_retrieval.r1 == rep.caption_retrieval.r1);
    }
}

TEST_CASE("folds split contiguous image groups") {
    Rng rng(4);
    const auto gt = identity_map(10);
    const Tensor s = random_scores(rng, 10, 10);
    const RetrievalReport one = make_report_folds(s, gt, 1);
    CHECK(one.rsum == make_report(s, gt).rsum);

    // Two folds of five: each fold only sees its own block.
    double r1 = 0;
    for (std::size_t f = 0; f < 2; ++f) {
        std::vector<double> block;
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t c = 0; c < 5; ++c) block.push_back(s.at(5 * f + i, 5 * f + c));
        r1 += make_report(Tensor::matrix(5, 5, block), identity_map(5)).caption_retrieval.r1;
    }
    CHECK(make_report_folds(s, gt, 2).caption_retrieval.r1 == doctest::Approx(r1 / 2));
}

TEST_CASE("score_all matches per-pair scoring and is thread-count independent") {
    const SyntheticData data = small_data();
    const ModelConfig cfg = small_model();
    const CampParams p = CampParams::initialize(cfg, 9);
    const Tensor s = score_all(data.val, p, cfg);
    REQUIRE(s.rows() == data.val.images.size());
    REQUIRE(s.cols() == data.val.captions.size());
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t c = 0; c < s.cols(); ++c) {
            const auto img = encode_image(data.val.images[i], p);
            const auto cap = encode_caption(clip_and_pad(data.val.captions[c], cfg.vocab_size, cfg.max_words), p);
            CHECK(s.at(i, c) == score_pair(img, cap, p, cfg).score.item());
        }

    const Tensor threaded = score_all(data.val, p, cfg, 3);
    CHECK(std::equal(s.data().begin(), s.data().end(), threaded.data().begin()));
}

TEST_CASE("duplicated images score identically") {
    SyntheticData data = small_data();
    const ModelConfig cfg = small_model();
    const CampParams p = CampParams::initialize(cfg, 10);
    Dataset d = data.val;
    d.images.push_back(d.images[2]);
    d.captions.push_back(d.captions[2]);
    d.caption_image.push_back(d.images.size() - 1);
    if (!d.region_concepts.empty()) d.region_concepts.push_back(d.region_concepts[2]);
    const Tensor s = score_all(d, p, cfg);
    const std::size_t last = d.images.size() - 1;
    for (std::size_t c = 0; c < s.cols(); ++c) CHECK(s.at(2, c) == s.at(last, c));
}

TEST_CASE("evaluate and gate statistics") {
    const SyntheticData data = small_data();
    const ModelConfig cfg = small_model();
    const CampParams p = CampParams::initialize(cfg, 11);
    const RetrievalReport rep = evaluate(data.test, p, cfg, 2);
    CHECK(rep.images == data.test.images.size());
    CHECK(rep.pair_count == rep.images * rep.captions);
    CHECK(rep.rsum == make_report(score_all(data.test, p, cfg), data.test.caption_image).rsum);
    nlohmann::json j = rep;
    CHECK(j.contains("rsum"));

    const GateStatistics g = gate_statistics(data.test, p, cfg);
    CHECK(g.positive_pairs == data.test.captions.size());
    CHECK(g.negative_pairs == data.test.images.size() * data.test.captions.size() - g.positive_pairs);
    CHECK(g.positive > 0.0);
    CHECK(g.positive < 1.0);
    CHECK(g.negative > 0.0);
    CHECK(g.negative < 1.0);
}
