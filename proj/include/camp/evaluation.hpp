#pragma once

#include <cstddef>
#include <span>

#include <json.hpp>

#include "camp/dataset.hpp"
#include "camp/model.hpp"

namespace camp {

struct RecallSet {
    double r1 = 0.0, r5 = 0.0, r10 = 0.0;
    double sum() const { return r1 + r5 + r10; }
};

struct RetrievalReport {
    RecallSet caption_retrieval;  // image query, captions ranked
    RecallSet image_retrieval;    // caption query, images ranked
    double rsum = 0.0;
    std::size_t images = 0;
    std::size_t captions = 0;
    std::size_t pair_count = 0;  // scored cells
};

enum class Direction { caption_retrieval, image_retrieval };

// Scores every (image, caption) cell: encoders run once per item, the
// matching core once per cell. No tape is recorded. `threads` > 1 splits
// the image rows across worker threads.
Tensor score_all(const Dataset& data, const CampParams& params, const ModelConfig& cfg, unsigned threads = 1);

// Fraction of queries whose ground truth is in the top k. Ties rank the
// lower index first. Caption retrieval counts an image as a hit if any of
// its captions is in its top k. k beyond the gallery size warns and uses the
// whole gallery.
double recall_at_k(const Tensor& scores, std::span<const std::size_t> caption_image, std::size_t k, Direction direction);

RetrievalReport make_report(const Tensor& scores, std::span<const std::size_t> caption_image);

// Splits images into `folds` contiguous groups (captions follow their
// image), computes a report per fold and averages the recalls.
RetrievalReport make_report_folds(const Tensor& scores, std::span<const std::size_t> caption_image,
                                  std::size_t folds);

RetrievalReport evaluate(const Dataset& data, const CampParams& params, const ModelConfig& cfg, unsigned threads = 1,
                         std::size_t folds = 1);

struct GateStatistics {
    double positive = 0.0;  // mean gate over matched pairs
    double negative = 0.0;  // mean gate over mismatched pairs
    std::size_t positive_pairs = 0;
    std::size_t negative_pairs = 0;
};

GateStatistics gate_statistics(const Dataset& data, const CampParams& params, const ModelConfig& cfg,
                               unsigned threads = 1);

void to_json(nlohmann::json& j, const RetrievalReport& report);

}  // namespace camp
