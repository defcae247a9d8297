#include "camp/objectives.hpp"

#include <cassert>
#include <cmath>

#include "camp/error.hpp"

namespace camp {

namespace {

std::size_t check_square(const Tensor& s, const char* op) {
    if (!s.defined() || s.rank() != 2 || s.rows() != s.cols()) {
        throw DimensionError(std::string(op) + ": score matrix must be square, got " +
                             (s.defined() ? shape_str(s.shape()) : std::string("undefined")));
    }
    if (s.rows() < 2) throw DimensionError(std::string(op) + ": batch needs at least 2 pairs");
    return s.rows();
}

void check_probabilities(const Tensor& s, const char* op) {
    for (double v : s.data()) {
        // Exact 0 or 1 can come from a saturated sigmoid and is handled by
        // the clamp; anything else outside the unit interval is an error.
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw DomainError(std::string(op) + ": score " + std::to_string(v) + " outside (0, 1)");
        }
    }
}

bool better(double candidate, double incumbent, HardestBy by) {
    return by == HardestBy::score ? candidate > incumbent : candidate < incumbent;
}

Tensor log_prob(const Tensor& x) { return log(clamp(x, kScoreClamp, 1.0 - kScoreClamp)); }
Tensor log_complement(const Tensor& x) { return log(clamp(affine(x, -1.0, 1.0), kScoreClamp, 1.0 - kScoreClamp)); }

Tensor total(const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

#ifndef NDEBUG
// Debug builds re-check the selection with a second, independent scan.
void spot_check(const Tensor& s, std::size_t i, std::size_t j, std::size_t k, HardestBy by) {
    const double sign = by == HardestBy::score ? 1.0 : -1.0;
    for (std::size_t x = 0; x < s.rows(); ++x) {
        if (x == i) continue;
        assert(sign * s.at(i, x) <= sign * s.at(i, j));
        assert(sign * s.at(x, i) <= sign * s.at(k, i));
        assert(x > j || s.at(i, x) != s.at(i, j) || x == j);
        assert(x > k || s.at(x, i) != s.at(k, i) || x == k);
    }
}
#endif

}  // namespace

std::size_t hardest_in_row(const Tensor& s, std::size_t i, HardestBy by) {
    const std::size_t b = s.cols();
    std::size_t best = b;
    for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        if (best == b || better(s.at(i, j), s.at(i, best), by)) best = j;
    }
    return best;
}

std::size_t hardest_in_column(const Tensor& s, std::size_t i, HardestBy by) {
    const std::size_t b = s.rows();
    std::size_t best = b;
    for (std::size_t k = 0; k < b; ++k) {
        if (k == i) continue;
        if (best == b || better(s.at(k, i), s.at(best, i), by)) best = k;
    }
    return best;
}

LossValue bce_hardest(const Tensor& s, HardestBy by) {
    const std::size_t b = check_square(s, "bce_hardest");
    check_probabilities(s, "bce_hardest");
    LossValue out;
    std::vector<Tensor> i2t, t2i;
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = hardest_in_row(s, i, by);
        const std::size_t k = hardest_in_column(s, i, by);
#ifndef NDEBUG
        spot_check(s, i, j, k, by);
#endif
        out.hardest_caption.push_back(j);
        out.hardest_image.push_back(k);
        const Tensor pos = log_prob(element(s, i, i));
        i2t.push_back(add(pos, log_complement(element(s, i, j))));
        t2i.push_back(add(pos, log_complement(element(s, k, i))));
    }
    const double scale = -1.0 / static_cast<double>(b);
    const Tensor l_i2t = affine(total(i2t), scale);
    const Tensor l_t2i = affine(total(t2i), scale);
    out.value = add(l_i2t, l_t2i);
    out.image_to_text = l_i2t.item();
    out.text_to_image = l_t2i.item();
    return out;
}

LossValue bce_plain(const Tensor& s) {
    const std::size_t b = check_square(s, "bce_plain");
    check_probabilities(s, "bce_plain");
    const double negatives = static_cast<double>(b - 1);
    LossValue out;
    std::vector<Tensor> i2t, t2i;
    for (std::size_t i = 0; i < b; ++i) {
        const Tensor pos = log_prob(element(s, i, i));
        std::vector<Tensor> row, col;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            row.push_back(log_complement(element(s, i, j)));
            col.push_back(log_complement(element(s, j, i)));
        }
        i2t.push_back(add(pos, affine(total(row), 1.0 / negatives)));
        t2i.push_back(add(pos, affine(total(col), 1.0 / negatives)));
    }
    const double scale = -1.0 / static_cast<double>(b);
    const Tensor l_i2t = affine(total(i2t), scale);
    const Tensor l_t2i = affine(total(t2i), scale);
    out.value = add(l_i2t, l_t2i);
    out.image_to_text = l_i2t.item();
    out.text_to_image = l_t2i.item();
    return out;
}

LossValue ranking_hardest(const Tensor& s, double alpha) {
    const std::size_t b = check_square(s, "ranking_hardest");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("ranking_hardest: margin must be non-negative");
    LossValue out;
    std::vector<Tensor> i2t, t2i;
    for (std::size_t i = 0; i < b; ++i) {
        // The hinge is monotone, so the hardest negative by score maximises it.
        const std::size_t j = hardest_in_row(s, i, HardestBy::score);
        const std::size_t k = hardest_in_column(s, i, HardestBy::score);
        out.hardest_caption.push_back(j);
        out.hardest_image.push_back(k);
        const Tensor margin_pos = affine(element(s, i, i), -1.0, alpha);
        i2t.push_back(relu(add(margin_pos, element(s, i, j))));
        t2i.push_back(relu(add(margin_pos, element(s, k, i))));
    }
    const double scale = 1.0 / static_cast<double>(b);
    const Tensor l_i2t = affine(total(i2t), scale);
    const Tensor l_t2i = affine(total(t2i), scale);
    out.value = add(l_i2t, l_t2i);
    out.image_to_text = l_i2t.item();
    out.text_to_image = l_t2i.item();
    return out;
}

}  // namespace camp
