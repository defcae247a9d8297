#include "camp/encoders.hpp"

#include <algorithm>

#include "camp/error.hpp"

namespace camp {

std::size_t TokenSequence::real_length() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void TokenSequence::validate() const {
    if (ids.empty() || ids.size() != mask.size()) {
        throw DimensionError("token sequence has " + std::to_string(ids.size()) + " ids and " +
                             std::to_string(mask.size()) + " mask entries");
    }
    if (real_length() == 0) throw DomainError("token sequence has no real tokens");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
            throw DomainError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                              " outside vocabulary of size " + std::to_string(vocab_size));
        }
        if (mask[i] != 0 && id == kPadToken) {
            throw DomainError("padding token marked as real at position " + std::to_string(i));
        }
        if (mask[i] == 0 && id != kPadToken) {
            throw DomainError("masked position " + std::to_string(i) + " holds non-padding token " + std::to_string(id));
        }
    }
}

Tensor project_regions(const RawRegionFeatures& raw, const EncoderParams& p) {
    if (!raw.m.defined()) throw DimensionError("project_regions: no region features");
    if (raw.m.rows() != p.w_img.cols()) {
        throw DimensionError("project_regions: region features " + shape_str(raw.m.shape()) +
                             " do not match projection " + shape_str(p.w_img.shape()));
    }
    return linear(raw.m, p.w_img, p.b_img);
}

Tensor run_gru(const Tensor& x, const GruParams& p, bool reverse) {
    const std::size_t n = x.cols();
    const std::size_t hidden = p.hidden();
    // Input contributions for all steps at once.
    const Tensor xz = linear(x, p.w_z, p.b_z);
    const Tensor xr = linear(x, p.w_r, p.b_r);
    const Tensor xh = linear(x, p.w_h, p.b_h);

    std::vector<Tensor> states(n);
    Tensor h = Tensor::zeros({hidden, 1});
    for (std::size_t step = 0; step < n; ++step) {
        const std::size_t t = reverse ? n - 1 - step : step;
        const Tensor z = sigmoid(add(slice_column(xz, t), matmul(p.u_z, h)));
        const Tensor r = sigmoid(add(slice_column(xr, t), matmul(p.u_r, h)));
        const Tensor cand = tanh(add(slice_column(xh, t), matmul(p.u_h, mul(r, h))));
        // (1 - z) * h + z * cand == h + z * (cand - h)
        h = add(h, mul(z, sub(cand, h)));
        states[t] = h;
    }
    return concat_columns(states);
}

Tensor encode_words(const TokenSequence& tokens, const EncoderParams& p) {
    tokens.validate();
    if (tokens.vocab_size != p.embedding.cols()) {
        throw DimensionError("encode_words: vocabulary of size " + std::to_string(tokens.vocab_size) +
                             " does not match embedding " + shape_str(p.embedding.shape()));
    }
    std::vector<std::size_t> cols(tokens.ids.begin(), tokens.ids.end());
    const Tensor x = gather_columns(p.embedding, cols);
    const Tensor fwd = run_gru(x, p.forward, false);
    const Tensor bwd = run_gru(x, p.backward, true);
    return affine(add(fwd, bwd), 0.5);
}

TokenSequence clip_and_pad(std::span<const int> words, std::size_t vocab_size, std::size_t max_len) {
    if (words.empty()) throw DomainError("clip_and_pad: empty sentence");
    if (max_len == 0) throw ConfigError("clip_and_pad: max_len must be positive");
    TokenSequence seq;
    seq.vocab_size = vocab_size;
    seq.ids.assign(max_len, kPadToken);
    seq.mask.assign(max_len, 0);
    const std::size_t keep = std::min(words.size(), max_len);
    for (std::size_t i = 0; i < keep; ++i) {
        seq.ids[i] = words[i];
        seq.mask[i] = 1;
    }
    seq.validate();
    return seq;
}

}  // namespace camp
