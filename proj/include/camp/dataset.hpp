#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "camp/encoders.hpp"
#include "camp/tensor.hpp"

namespace camp {

// Images with their region descriptors and captions as token-id lists.
// caption_image[c] is the ground-truth image of caption c.
struct Dataset {
    std::vector<RawRegionFeatures> images;
    std::vector<std::vector<int>> captions;
    std::vector<std::size_t> caption_image;
    std::size_t vocab_size = 0;

    // Planted concept id per region (-1 for distractors); only present for
    // generated data.
    std::vector<std::vector<int>> region_concepts;

    std::size_t raw_dim() const { return images.empty() ? 0 : images.front().m.rows(); }
    void validate() const;
};

struct SyntheticSpec {
    std::size_t n_pairs = 200;  // training pairs
    std::size_t val_pairs = 50;
    std::size_t test_pairs = 50;
    std::size_t n_concepts = 20;
    std::size_t regions_per_image = 4;
    std::size_t words_per_caption = 6;
    std::size_t raw_region_dim = 2048;
    std::size_t vocab_size = 64;
    double noise_sigma = 0.1;
    double distractor_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticData {
    Dataset train, val, test;
    Tensor prototypes;  // raw_dim x n_concepts
};

// Each pair owns a distinct set of concepts, one per region. A region is its
// concept's prototype plus Gaussian noise, or (with probability
// distractor_rate) an unrelated random vector. The caption lists the concept
// tokens of the non-distractor regions plus filler tokens, shuffled. Token
// 1 + c names concept c; ids above the concept range are fillers. All values
// are rounded to float precision so they survive the on-disk format.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// The reference desk-scale benchmark: 200/50/50 pairs, 20 concepts, 4
// regions, 6 words, noise 0.1.
SyntheticSpec desk_benchmark_spec(std::uint64_t seed = 0);

// ---- files ---------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'C', 'A', 'M', 'P', 'F', 'E', 'A', 'T'};
inline constexpr std::uint16_t kFeatureVersion = 1;

// Flat block of `count` vectors of `dim` floats.
struct FeatureBlock {
    std::uint32_t dim = 0;
    std::uint32_t count = 0;
    std::vector<float> values;
};

// Layout: "CAMPFEAT", u16 version, u32 dim, u32 count, count*dim f32, all
// little-endian.
void write_feature_file(const std::filesystem::path& path, const FeatureBlock& block);
FeatureBlock read_feature_file(const std::filesystem::path& path);

// Writes `<manifest>` (JSON) plus a sibling feature file named after it.
void save_dataset(const Dataset& data, const std::filesystem::path& manifest);
// Loads a manifest and the feature file it references.
Dataset load_features(const std::filesystem::path& manifest);

}  // namespace camp
