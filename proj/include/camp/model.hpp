#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "camp/camp_core.hpp"
#include "camp/encoders.hpp"
#include "camp/model_config.hpp"

namespace camp {

struct NamedTensor {
    std::string name;
    Tensor tensor;  // shares storage with the owning CampParams
};

// Every learnable tensor of the model: encoders, matching core and scorer.
struct CampParams {
    EncoderParams encoder;
    CampCoreParams core;

    // Stable order; names are used as checkpoint keys.
    std::vector<NamedTensor> named() const;
    // Handles in the same order, for re-seating.
    std::vector<std::pair<std::string, Tensor*>> slots();
    // Points every parameter at the given tensors, in named() order.
    void rebind(std::span<const Tensor> tensors);

    CampParams clone() const;

    // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in the
    // column count (1 for the embedding table), biases zero.
    static CampParams initialize(const ModelConfig& cfg, std::uint64_t seed);
    static CampParams zeros(const ModelConfig& cfg);
};

// Overwrites the values of `to` with those of `from`; shapes must agree.
void copy_values(const CampParams& from, CampParams& to);

struct EncodedCaption {
    Tensor t;
    Mask mask;
};

Tensor encode_image(const RawRegionFeatures& raw, const CampParams& params);
EncodedCaption encode_caption(const TokenSequence& tokens, const CampParams& params);
CampOutput score_pair(const Tensor& v, const EncodedCaption& caption, const CampParams& params,
                      const ModelConfig& cfg);

}  // namespace camp
