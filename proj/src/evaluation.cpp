#include "camp/evaluation.hpp"

#include <algorithm>
#include <thread>

#include "camp/error.hpp"
#include "camp/log.hpp"

namespace camp {

namespace {

struct EncodedSet {
    std::vector<Tensor> images;
    std::vector<EncodedCaption> captions;
};

EncodedSet encode_all(const Dataset& data, const CampParams& params, const ModelConfig& cfg) {
    EncodedSet out;
    for (const auto& img : data.images) out.images.push_back(encode_image(img, params));
    for (const auto& cap : data.captions) {
        out.captions.push_back(encode_caption(clip_and_pad(cap, data.vocab_size, cfg.max_words), params));
    }
    return out;
}

// Runs fn(row) for every image row, striding rows across workers.
template <typename Fn>
void for_each_row(std::size_t rows, unsigned threads, Fn fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(rows)));
    if (threads == 1) {
        for (std::size_t i = 0; i < rows; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&, w]() {
            try {
                for (std::size_t i = w; i < rows; i += threads) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Rank of `target` among `values` with ties broken by lower index first.
std::size_t rank_of(std::span<const double> values, std::size_t target) {
    const double v = values[target];
    std::size_t rank = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] > v || (values[i] == v && i < target)) ++rank;
    }
    return rank;
}

}  // namespace

Tensor score_all(const Dataset& data, const CampParams& params, const ModelConfig& cfg, unsigned threads) {
    if (data.images.empty() || data.captions.empty()) throw DomainError("score_all: empty gallery");
    NoGradScope no_grad;
    const EncodedSet enc = encode_all(data, params, cfg);
    const std::size_t n_img = enc.images.size(), n_cap = enc.captions.size();
    std::vector<double> scores(n_img * n_cap);
    for_each_row(n_img, threads, [&](std::size_t i) {
        NoGradScope worker_no_grad;
        for (std::size_t c = 0; c < n_cap; ++c) {
            scores[i * n_cap + c] = score_pair(enc.images[i], enc.captions[c], params, cfg).score.item();
        }
    });
    return Tensor::matrix(n_img, n_cap, std::move(scores));
}

double recall_at_k(const Tensor& scores, std::span<const std::size_t> caption_image, std::size_t k,
                   Direction direction) {
    if (k == 0) throw DomainError("recall_at_k: k must be at least 1");
    const std::size_t n_img = scores.rows(), n_cap = scores.cols();
    if (caption_image.size() != n_cap) {
        throw DimensionError("recall_at_k: " + std::to_string(caption_image.size()) + " ground-truth links for " +
                             std::to_string(n_cap) + " captions");
    }
    const auto s = scores.data();
    if (direction == Direction::image_retrieval) {
        if (k > n_img) warn_once("recall-k-images", "recall_at_k: k exceeds the image gallery; using all images");
        std::vector<double> column(n_img);
        std::size_t hits = 0;
        for (std::size_t c = 0; c < n_cap; ++c) {
            for (std::size_t i = 0; i < n_img; ++i) column[i] = s[i * n_cap + c];
            if (rank_of(column, caption_image[c]) < k) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(n_cap);
    }

    if (k > n_cap) warn_once("recall-k-captions", "recall_at_k: k exceeds the caption gallery; using all captions");
    std::size_t hits = 0, queries = 0;
    for (std::size_t i = 0; i < n_img; ++i) {
        const std::span<const double> row = s.subspan(i * n_cap, n_cap);
        bool has_gt = false, hit = false;
        for (std::size_t c = 0; c < n_cap; ++c) {
            if (caption_image[c] != i) continue;
            has_gt = true;
            if (rank_of(row, c) < k) hit = true;
        }
        if (!has_gt) continue;
        ++queries;
        if (hit) ++hits;
    }
    return queries ? static_cast<double>(hits) / static_cast<double>(queries) : 0.0;
}

RetrievalReport make_report(const Tensor& scores, std::span<const std::size_t> caption_image) {
    RetrievalReport r;
    r.caption_retrieval = {recall_at_k(scores, caption_image, 1, Direction::caption_retrieval),
                           recall_at_k(scores, caption_image, 5, Direction::caption_retrieval),
                           recall_at_k(scores, caption_image, 10, Direction::caption_retrieval)};
    r.image_retrieval = {recall_at_k(scores, caption_image, 1, Direction::image_retrieval),
                         recall_at_k(scores, caption_image, 5, Direction::image_retrieval),
                         recall_at_k(scores, caption_image, 10, Direction::image_retrieval)};
    r.rsum = r.caption_retrieval.sum() + r.image_retrieval.sum();
    r.images = scores.rows();
    r.captions = scores.cols();
    r.pair_count = scores.size();
    return r;
}

RetrievalReport make_report_folds(const Tensor& scores, std::span<const std::size_t> caption_image,
                                  std::size_t folds) {
    const std::size_t n_img = scores.rows(), n_cap = scores.cols();
    if (folds == 0 || folds > n_img) throw DomainError("fold count must be in [1, image count]");
    if (folds == 1) return make_report(scores, caption_image);

    RetrievalReport avg;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t lo = f * n_img / folds, hi = (f + 1) * n_img / folds;
        std::vector<std::size_t> caps;
        for (std::size_t c = 0; c < n_cap; ++c) {
            if (caption_image[c] >= lo && caption_image[c] < hi) caps.push_back(c);
        }
        if (caps.empty()) throw DomainError("fold " + std::to_string(f) + " has no captions");
        std::vector<double> sub((hi - lo) * caps.size());
        std::vector<std::size_t> gt;
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t k = 0; k < caps.size(); ++k) sub[(i - lo) * caps.size() + k] = scores.at(i, caps[k]);
        for (auto c : caps) gt.push_back(caption_image[c] - lo);
        const RetrievalReport r = make_report(Tensor::matrix(hi - lo, caps.size(), std::move(sub)), gt);
        const double w = 1.0 / static_cast<double>(folds);
        avg.caption_retrieval.r1 += w * r.caption_retrieval.r1;
        avg.caption_retrieval.r5 += w * r.caption_retrieval.r5;
        avg.caption_retrieval.r10 += w * r.caption_retrieval.r10;
        avg.image_retrieval.r1 += w * r.image_retrieval.r1;
        avg.image_retrieval.r5 += w * r.image_retrieval.r5;
        avg.image_retrieval.r10 += w * r.image_retrieval.r10;
        avg.pair_count += r.pair_count;
    }
    avg.rsum = avg.caption_retrieval.sum() + avg.image_retrieval.sum();
    avg.images = n_img;
    avg.captions = n_cap;
    return avg;
}

RetrievalReport evaluate(const Dataset& data, const CampParams& params, const ModelConfig& cfg, unsigned threads,
                         std::size_t folds) {
    return make_report_folds(score_all(data, params, cfg, threads), data.caption_image, folds);
}

GateStatistics gate_statistics(const Dataset& data, const CampParams& params, const ModelConfig& cfg,
                               unsigned threads) {
    NoGradScope no_grad;
    const EncodedSet enc = encode_all(data, params, cfg);
    const std::size_t n_img = enc.images.size(), n_cap = enc.captions.size();
    std::vector<double> gates(n_img * n_cap);
    for_each_row(n_img, threads, [&](std::size_t i) {
        NoGradScope worker_no_grad;
        for (std::size_t c = 0; c < n_cap; ++c) {
            gates[i * n_cap + c] = score_pair(enc.images[i], enc.captions[c], params, cfg).mean_gate();
        }
    });
    GateStatistics st;
    for (std::size_t i = 0; i < n_img; ++i)
        for (std::size_t c = 0; c < n_cap; ++c) {
            if (data.caption_image[c] == i) {
                st.positive += gates[i * n_cap + c];
                ++st.positive_pairs;
            } else {
                st.negative += gates[i * n_cap + c];
                ++st.negative_pairs;
            }
        }
    if (st.positive_pairs) st.positive /= static_cast<double>(st.positive_pairs);
    if (st.negative_pairs) st.negative /= static_cast<double>(st.negative_pairs);
    return st;
}

void to_json(nlohmann::json& j, const RetrievalReport& r) {
    j = nlohmann::json{
        {"caption_retrieval", {{"r1", r.caption_retrieval.r1}, {"r5", r.caption_retrieval.r5}, {"r10", r.caption_retrieval.r10}}},
        {"image_retrieval", {{"r1", r.image_retrieval.r1}, {"r5", r.image_retrieval.r5}, {"r10", r.image_retrieval.r10}}},
        {"rsum", r.rsum},
        {"images", r.images},
        {"captions", r.captions},
        {"pair_count", r.pair_count},
    };
}

}  // namespace camp
