#pragma once

#include <cstddef>
#include <vector>

#include "camp/tensor.hpp"

namespace camp {

// How the hardest negative for BCE is picked: by highest score (hardest in
// the retrieval sense), or by the largest log(1 - s) term.
enum class HardestBy { score, loss_term };

struct LossValue {
    Tensor value;       // scalar, averaged over the batch
    double image_to_text = 0.0;
    double text_to_image = 0.0;
    // Selected negative per anchor, empty for losses that use every negative.
    std::vector<std::size_t> hardest_caption;  // per image row i: column j*
    std::vector<std::size_t> hardest_image;    // per caption column i: row k*
};

// Scores are clamped to [kScoreClamp, 1 - kScoreClamp] before the log.
inline constexpr double kScoreClamp = 1e-7;

// Index of the largest entry of row `i` of S, excluding column i. Ties go to
// the lower index.
std::size_t hardest_in_row(const Tensor& s, std::size_t i, HardestBy by = HardestBy::score);
std::size_t hardest_in_column(const Tensor& s, std::size_t i, HardestBy by = HardestBy::score);

// -(1/B) sum_i [log S_ii + log(1 - S_ij*) + log S_ii + log(1 - S_k*i)]
LossValue bce_hardest(const Tensor& s, HardestBy by = HardestBy::score);

// Every negative contributes, each direction's negatives averaged over
// b = B - 1 to balance against the positives.
LossValue bce_plain(const Tensor& s);

// (1/B) sum_i ( max_j [alpha - S_ii + S_ij]_+ + max_k [alpha - S_ii + S_ki]_+ )
LossValue ranking_hardest(const Tensor& s, double alpha);

}  // namespace camp
