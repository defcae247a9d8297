#include "camp/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "camp/error.hpp"
#include "camp/rng.hpp"

namespace camp {

namespace fs = std::filesystem;
using nlohmann::json;

void Dataset::validate() const {
    if (images.empty()) throw DomainError("dataset has no images");
    if (captions.size() != caption_image.size()) {
        throw DimensionError("dataset has " + std::to_string(captions.size()) + " captions but " +
                             std::to_string(caption_image.size()) + " ground-truth links");
    }
    const std::size_t dim = raw_dim();
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i].m.defined() || images[i].m.rows() != dim) {
            throw DimensionError("image " + std::to_string(i) + " has inconsistent feature dimension");
        }
    }
    for (std::size_t c = 0; c < captions.size(); ++c) {
        if (caption_image[c] >= images.size()) {
            throw DomainError("caption " + std::to_string(c) + " points at missing image " +
                              std::to_string(caption_image[c]));
        }
        if (captions[c].empty()) throw DomainError("caption " + std::to_string(c) + " is empty");
        for (int id : captions[c]) {
            if (id <= kPadToken || static_cast<std::size_t>(id) >= vocab_size) {
                throw DomainError("caption " + std::to_string(c) + " has token " + std::to_string(id) +
                                  " outside [1, " + std::to_string(vocab_size) + ")");
            }
        }
    }
}

// ---- synthetic -------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (n_pairs == 0) throw ConfigError("synthetic spec: n_pairs must be positive");
    if (n_concepts == 0) throw ConfigError("synthetic spec: n_concepts must be positive");
    if (n_concepts + 1 > vocab_size) {
        throw ConfigError("synthetic spec: " + std::to_string(n_concepts) + " concepts do not fit a vocabulary of " +
                          std::to_string(vocab_size) + " (token 0 is padding)");
    }
    if (regions_per_image == 0 || regions_per_image > 36) {
        throw ConfigError("synthetic spec: regions_per_image must be in [1, 36]");
    }
    if (regions_per_image > n_concepts) throw ConfigError("synthetic spec: more regions than concepts");
    if (words_per_caption == 0 || words_per_caption > kMaxWords) {
        throw ConfigError("synthetic spec: words_per_caption must be in [1, 50]");
    }
    if (words_per_caption < regions_per_image) {
        throw ConfigError("synthetic spec: captions must have room for one word per region");
    }
    if (words_per_caption > regions_per_image && vocab_size <= n_concepts + 1) {
        throw ConfigError("synthetic spec: no filler tokens left in the vocabulary");
    }
    if (raw_region_dim == 0) throw ConfigError("synthetic spec: raw_region_dim must be positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic spec: noise_sigma must be non-negative");
    if (!(distractor_rate >= 0.0 && distractor_rate < 1.0)) {
        throw ConfigError("synthetic spec: distractor_rate must be in [0, 1)");
    }
    // Enough distinct concept sets for every pair?
    const std::size_t total = n_pairs + val_pairs + test_pairs;
    double combos = 1.0;
    for (std::size_t i = 0; i < regions_per_image; ++i) {
        combos *= static_cast<double>(n_concepts - i) / static_cast<double>(i + 1);
    }
    if (combos < static_cast<double>(total)) {
        throw ConfigError("synthetic spec: only " + std::to_string(static_cast<long long>(combos)) +
                          " distinct concept sets for " + std::to_string(total) + " pairs");
    }
}

SyntheticSpec desk_benchmark_spec(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_pairs = 200;
    spec.val_pairs = 50;
    spec.test_pairs = 50;
    spec.n_concepts = 20;
    spec.regions_per_image = 4;
    spec.words_per_caption = 6;
    spec.raw_region_dim = 64;
    spec.vocab_size = 64;
    spec.noise_sigma = 0.1;
    spec.distractor_rate = 0.0;
    spec.seed = seed;
    return spec;
}

namespace {

double as_float(double v) { return static_cast<double>(static_cast<float>(v)); }

struct PairDraw {
    std::vector<int> concepts;          // per region, -1 for distractor
    std::vector<int> caption_concepts;  // sorted
};

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const Rng root(spec.seed);
    const std::size_t dim = spec.raw_region_dim;

    SyntheticData out;
    {
        Rng rng = root.split("synthetic/prototypes");
        std::vector<double> proto(dim * spec.n_concepts);
        for (double& v : proto) v = as_float(rng.normal());
        out.prototypes = Tensor::matrix(dim, spec.n_concepts, std::move(proto));
    }
    const auto proto = out.prototypes.data();

    Rng rng = root.split("synthetic/pairs");
    std::set<std::vector<int>> used_image_sets;
    std::set<std::vector<int>> used_caption_sets;
    const int first_filler = static_cast<int>(spec.n_concepts) + 1;
    const std::size_t filler_count = spec.vocab_size - static_cast<std::size_t>(first_filler);

    auto make_split = [&](std::size_t count) {
        Dataset ds;
        ds.vocab_size = spec.vocab_size;
        for (std::size_t p = 0; p < count; ++p) {
            PairDraw draw;
            std::vector<int> image_set;
            for (int attempt = 0;; ++attempt) {
                if (attempt > 100000) throw ConfigError("synthetic spec: cannot draw enough unique concept sets");
                std::vector<int> pool(spec.n_concepts);
                std::iota(pool.begin(), pool.end(), 0);
                for (std::size_t i = 0; i < spec.regions_per_image; ++i) {
                    std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
                }
                draw.concepts.assign(pool.begin(), pool.begin() + static_cast<long>(spec.regions_per_image));
                image_set = draw.concepts;
                std::sort(image_set.begin(), image_set.end());

                std::vector<bool> distractor(spec.regions_per_image, false);
                for (std::size_t r = 0; r < spec.regions_per_image; ++r) distractor[r] = rng.bernoulli(spec.distractor_rate);
                if (std::all_of(distractor.begin(), distractor.end(), [](bool b) { return b; })) distractor[0] = false;

                draw.caption_concepts.clear();
                for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
                    if (distractor[r]) {
                        draw.concepts[r] = -1;
                    } else {
                        draw.caption_concepts.push_back(draw.concepts[r]);
                    }
                }
                std::sort(draw.caption_concepts.begin(), draw.caption_concepts.end());
                if (used_image_sets.count(image_set) || used_caption_sets.count(draw.caption_concepts)) continue;
                break;
            }
            used_image_sets.insert(image_set);
            used_caption_sets.insert(draw.caption_concepts);

            std::vector<double> regions(dim * spec.regions_per_image);
            for (std::size_t r = 0; r < spec.regions_per_image; ++r) {
                const int c = draw.concepts[r];
                for (std::size_t k = 0; k < dim; ++k) {
                    const double v = c < 0 ? rng.normal()
                                           : proto[k * spec.n_concepts + static_cast<std::size_t>(c)] +
                                                 (spec.noise_sigma > 0.0 ? rng.normal(0.0, spec.noise_sigma) : 0.0);
                    regions[k * spec.regions_per_image + r] = as_float(v);
                }
            }
            ds.images.push_back({Tensor::matrix(dim, spec.regions_per_image, std::move(regions))});
            ds.region_concepts.push_back(draw.concepts);

            std::vector<int> tokens;
            for (int c : draw.caption_concepts) tokens.push_back(c + 1);
            while (tokens.size() < spec.words_per_caption) {
                tokens.push_back(first_filler + static_cast<int>(rng.index(filler_count)));
            }
            std::shuffle(tokens.begin(), tokens.end(), rng.engine());
            ds.captions.push_back(std::move(tokens));
            ds.caption_image.push_back(ds.images.size() - 1);
        }
        return ds;
    };

    out.train = make_split(spec.n_pairs);
    if (spec.val_pairs) out.val = make_split(spec.val_pairs);
    if (spec.test_pairs) out.test = make_split(spec.test_pairs);
    return out;
}

// ---- feature files ---------------------------------------------------------

namespace {

constexpr std::size_t kHeaderBytes = 8 + 2 + 4 + 4;

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_feature_file(const fs::path& path, const FeatureBlock& block) {
    if (static_cast<std::size_t>(block.dim) * block.count != block.values.size()) {
        throw DimensionError("feature block declares " + std::to_string(block.count) + "x" + std::to_string(block.dim) +
                             " values but holds " + std::to_string(block.values.size()));
    }
    std::string buf;
    buf.reserve(kHeaderBytes + block.values.size() * 4);
    buf.append(kFeatureMagic, sizeof kFeatureMagic);
    put_u16(buf, kFeatureVersion);
    put_u32(buf, block.dim);
    put_u32(buf, block.count);
    for (float f : block.values) {
        if (!std::isfinite(f)) throw FormatError(FormatErrorKind::non_finite, "refusing to write non-finite feature");
        put_u32(buf, std::bit_cast<std::uint32_t>(f));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatErrorKind::io, "cannot open " + path.string() + " for writing");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

FeatureBlock read_feature_file(const fs::path& path) {
    std::error_code ec;
    const auto file_size = fs::file_size(path, ec);
    if (ec) throw FormatError(FormatErrorKind::io, "cannot stat " + path.string() + ": " + ec.message());
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());

    if (file_size < kHeaderBytes) {
        throw FormatError(FormatErrorKind::truncated, path.string() + ": file too short for a feature header");
    }
    unsigned char header[kHeaderBytes];
    is.read(reinterpret_cast<char*>(header), kHeaderBytes);
    if (!is) throw FormatError(FormatErrorKind::io, "read failed for " + path.string());
    if (std::memcmp(header, kFeatureMagic, sizeof kFeatureMagic) != 0) {
        throw FormatError(FormatErrorKind::bad_magic, path.string() + ": expected magic \"CAMPFEAT\"");
    }
    const std::uint16_t version = get_u16(header + 8);
    if (version != kFeatureVersion) {
        throw FormatError(FormatErrorKind::version_mismatch, path.string() + ": feature file version " +
                                                                 std::to_string(version) + ", expected " +
                                                                 std::to_string(kFeatureVersion));
    }
    FeatureBlock block;
    block.dim = get_u32(header + 10);
    block.count = get_u32(header + 14);
    const std::uint64_t payload = static_cast<std::uint64_t>(block.dim) * block.count * 4;
    const std::uint64_t available = file_size - kHeaderBytes;
    if (payload > available) {
        throw FormatError(FormatErrorKind::truncated, path.string() + ": header declares " +
                                                          std::to_string(payload) + " payload bytes, file has " +
                                                          std::to_string(available));
    }
    if (payload < available) {
        throw FormatError(FormatErrorKind::malformed,
                          path.string() + ": " + std::to_string(available - payload) + " trailing bytes");
    }
    std::vector<unsigned char> raw(payload);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
    if (!is) throw FormatError(FormatErrorKind::truncated, path.string() + ": short read");
    block.values.resize(static_cast<std::size_t>(block.dim) * block.count);
    for (std::size_t i = 0; i < block.values.size(); ++i) {
        const float f = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
        if (!std::isfinite(f)) {
            throw FormatError(FormatErrorKind::non_finite,
                              path.string() + ": non-finite value at float index " + std::to_string(i));
        }
        block.values[i] = f;
    }
    return block;
}

// ---- manifests -------------------------------------------------------------

void save_dataset(const Dataset& data, const fs::path& manifest) {
    data.validate();
    const std::size_t dim = data.raw_dim();
    FeatureBlock block;
    block.dim = static_cast<std::uint32_t>(dim);
    json images = json::array();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const auto& m = data.images[i].m;
        const std::size_t regions = m.cols();
        for (std::size_t r = 0; r < regions; ++r)
            for (std::size_t k = 0; k < dim; ++k) block.values.push_back(static_cast<float>(m.at(k, r)));
        images.push_back({{"id", "img-" + std::to_string(i)}, {"offset", offset}, {"regions", regions}});
        offset += regions;
    }
    block.count = static_cast<std::uint32_t>(offset);

    json captions = json::array();
    for (std::size_t c = 0; c < data.captions.size(); ++c) {
        captions.push_back(
            {{"id", "cap-" + std::to_string(c)}, {"image", data.caption_image[c]}, {"tokens", data.captions[c]}});
    }

    fs::path feat = manifest;
    feat.replace_extension(".feat");
    json doc = {
        {"format", "camp-manifest"},
        {"version", 1},
        {"features", feat.filename().string()},
        {"dim", dim},
        {"vocab_size", data.vocab_size},
        {"images", images},
        {"captions", captions},
    };
    if (!data.region_concepts.empty()) doc["region_concepts"] = data.region_concepts;

    write_feature_file(feat, block);
    std::ofstream os(manifest, std::ios::trunc);
    if (!os) throw FormatError(FormatErrorKind::io, "cannot open " + manifest.string() + " for writing");
    os << doc.dump(1) << '\n';
}

Dataset load_features(const fs::path& manifest) {
    std::ifstream is(manifest);
    if (!is) throw FormatError(FormatErrorKind::io, "cannot open manifest " + manifest.string());
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError(FormatErrorKind::malformed, manifest.string() + ": " + e.what());
    }

    Dataset ds;
    FeatureBlock block;
    try {
        if (doc.at("format").get<std::string>() != "camp-manifest") {
            throw FormatError(FormatErrorKind::bad_magic, manifest.string() + ": expected format \"camp-manifest\"");
        }
        if (doc.at("version").get<int>() != 1) {
            throw FormatError(FormatErrorKind::version_mismatch, manifest.string() + ": unsupported manifest version");
        }
        block = read_feature_file(manifest.parent_path() / doc.at("features").get<std::string>());
        const std::size_t dim = doc.at("dim").get<std::size_t>();
        if (dim != block.dim) {
            throw FormatError(FormatErrorKind::shape_mismatch, manifest.string() + ": manifest dim " +
                                                                   std::to_string(dim) + " but feature file dim " +
                                                                   std::to_string(block.dim));
        }
        ds.vocab_size = doc.at("vocab_size").get<std::size_t>();
        for (const auto& img : doc.at("images")) {
            const std::size_t offset = img.at("offset").get<std::size_t>();
            const std::size_t regions = img.at("regions").get<std::size_t>();
            if (regions == 0 || offset + regions > block.count) {
                throw FormatError(FormatErrorKind::malformed, manifest.string() + ": image " +
                                                                  img.at("id").get<std::string>() +
                                                                  " references vectors outside the feature file");
            }
            std::vector<double> values(dim * regions);
            for (std::size_t r = 0; r < regions; ++r)
                for (std::size_t k = 0; k < dim; ++k) values[k * regions + r] = block.values[(offset + r) * dim + k];
            ds.images.push_back({Tensor::matrix(dim, regions, std::move(values))});
        }
        for (const auto& cap : doc.at("captions")) {
            ds.captions.push_back(cap.at("tokens").get<std::vector<int>>());
            ds.caption_image.push_back(cap.at("image").get<std::size_t>());
        }
        if (doc.contains("region_concepts")) {
            ds.region_concepts = doc.at("region_concepts").get<std::vector<std::vector<int>>>();
        }
    } catch (const json::exception& e) {
        throw FormatError(FormatErrorKind::malformed, manifest.string() + ": " + e.what());
    }
    try {
        ds.validate();
    } catch (const Error& e) {
        throw FormatError(FormatErrorKind::malformed, manifest.string() + ": " + e.what());
    }
    return ds;
}

}  // namespace camp
