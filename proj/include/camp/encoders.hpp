#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "camp/tensor.hpp"

namespace camp {

inline constexpr int kPadToken = 0;
inline constexpr std::size_t kMaxWords = 50;

// Pooled region descriptors, one column per region (raw_dim x R).
struct RawRegionFeatures {
    Tensor m;
    std::size_t regions() const { return m.cols(); }
};

// Token ids padded to a fixed length. Real tokens lie in [1, vocab_size);
// id 0 is reserved for padding and never carries a true mask entry.
struct TokenSequence {
    std::vector<int> ids;
    Mask mask;
    std::size_t vocab_size = 0;

    std::size_t real_length() const;
    void validate() const;
};

// Standard GRU cell parameters (hidden size H, input size E):
//   z  = sigmoid(W_z x + U_z h + b_z)
//   r  = sigmoid(W_r x + U_r h + b_r)
//   h~ = tanh(W_h x + U_h (r * h) + b_h)
//   h' = (1 - z) * h + z * h~
struct GruParams {
    Tensor w_z, u_z, b_z;
    Tensor w_r, u_r, b_r;
    Tensor w_h, u_h, b_h;

    std::size_t hidden() const { return u_z.rows(); }
    std::size_t input() const { return w_z.cols(); }
};

struct EncoderParams {
    Tensor w_img;      // d x raw_dim
    Tensor b_img;      // d
    Tensor embedding;  // embed_dim x vocab_size
    GruParams forward;
    GruParams backward;
};

// v_i = W_I m_i + b_I for every region column.
Tensor project_regions(const RawRegionFeatures& raw, const EncoderParams& p);

// Bidirectional GRU over the embedded tokens; column i is the average of the
// forward and backward hidden states at position i. Both directions start
// from a zero state and step over padding positions as well.
Tensor encode_words(const TokenSequence& tokens, const EncoderParams& p);

// Runs one GRU direction over the columns of x (E x N) and returns the
// hidden states as H x N, column i holding the state after consuming x_i.
Tensor run_gru(const Tensor& x, const GruParams& p, bool reverse);

// Keeps the first max_len tokens and pads the rest with kPadToken.
TokenSequence clip_and_pad(std::span<const int> words, std::size_t vocab_size, std::size_t max_len = kMaxWords);

}  // namespace camp
