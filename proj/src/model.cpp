#include "camp/model.hpp"

#include <cmath>

#include "camp/error.hpp"
#include "camp/rng.hpp"

namespace camp {

namespace {

GruParams make_gru(std::size_t input, std::size_t hidden) {
    GruParams g;
    for (Tensor* w : {&g.w_z, &g.w_r, &g.w_h}) *w = Tensor::zeros({hidden, input}, true);
    for (Tensor* u : {&g.u_z, &g.u_r, &g.u_h}) *u = Tensor::zeros({hidden, hidden}, true);
    for (Tensor* b : {&g.b_z, &g.b_r, &g.b_h}) *b = Tensor::zeros({hidden}, true);
    return g;
}

void push_gru(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix, GruParams& g) {
    out.emplace_back(prefix + ".w_z", &g.w_z);
    out.emplace_back(prefix + ".u_z", &g.u_z);
    out.emplace_back(prefix + ".b_z", &g.b_z);
    out.emplace_back(prefix + ".w_r", &g.w_r);
    out.emplace_back(prefix + ".u_r", &g.u_r);
    out.emplace_back(prefix + ".b_r", &g.b_r);
    out.emplace_back(prefix + ".w_h", &g.w_h);
    out.emplace_back(prefix + ".u_h", &g.u_h);
    out.emplace_back(prefix + ".b_h", &g.b_h);
}

bool is_bias(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return leaf.rfind("b_", 0) == 0 || leaf == "bias" || leaf == "mlp_b1" || leaf == "mlp_b2";
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> CampParams::slots() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("encoder.w_img", &encoder.w_img);
    out.emplace_back("encoder.b_img", &encoder.b_img);
    out.emplace_back("encoder.embedding", &encoder.embedding);
    push_gru(out, "encoder.gru_fwd", encoder.forward);
    push_gru(out, "encoder.gru_bwd", encoder.backward);
    out.emplace_back("core.proj_v", &core.proj_v);
    out.emplace_back("core.proj_t", &core.proj_t);
    out.emplace_back("core.fuse_v.weight", &core.fuse_v.weight);
    out.emplace_back("core.fuse_v.bias", &core.fuse_v.bias);
    out.emplace_back("core.fuse_t.weight", &core.fuse_t.weight);
    out.emplace_back("core.fuse_t.bias", &core.fuse_t.bias);
    out.emplace_back("core.agg_v", &core.agg_v);
    out.emplace_back("core.agg_t", &core.agg_t);
    out.emplace_back("core.mlp_w1", &core.mlp_w1);
    out.emplace_back("core.mlp_b1", &core.mlp_b1);
    out.emplace_back("core.mlp_w2", &core.mlp_w2);
    out.emplace_back("core.mlp_b2", &core.mlp_b2);
    return out;
}

std::vector<NamedTensor> CampParams::named() const {
    std::vector<NamedTensor> out;
    for (auto& [name, t] : const_cast<CampParams*>(this)->slots()) out.push_back({name, *t});
    return out;
}

void CampParams::rebind(std::span<const Tensor> tensors) {
    auto s = slots();
    if (tensors.size() != s.size()) {
        throw DimensionError("rebind: expected " + std::to_string(s.size()) + " tensors, got " +
                             std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (tensors[i].shape() != s[i].second->shape()) {
            throw DimensionError("rebind: " + s[i].first + " is " + shape_str(s[i].second->shape()) + ", got " +
                                 shape_str(tensors[i].shape()));
        }
        *s[i].second = tensors[i];
    }
}

CampParams CampParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d;
    const std::size_t fuse_in = cfg.fusion_op == FusionOp::concat ? 2 * d : d;
    CampParams p;
    p.encoder.w_img = Tensor::zeros({d, cfg.raw_region_dim}, true);
    p.encoder.b_img = Tensor::zeros({d}, true);
    p.encoder.embedding = Tensor::zeros({cfg.embed_dim, cfg.vocab_size}, true);
    p.encoder.forward = make_gru(cfg.embed_dim, d);
    p.encoder.backward = make_gru(cfg.embed_dim, d);
    p.core.proj_v = Tensor::zeros({cfg.d_h, d}, true);
    p.core.proj_t = Tensor::zeros({cfg.d_h, d}, true);
    p.core.fuse_v = {Tensor::zeros({d, fuse_in}, true), Tensor::zeros({d}, true)};
    p.core.fuse_t = {Tensor::zeros({d, fuse_in}, true), Tensor::zeros({d}, true)};
    p.core.agg_v = Tensor::zeros({1, d}, true);
    p.core.agg_t = Tensor::zeros({1, d}, true);
    p.core.mlp_w1 = Tensor::zeros({d, d}, true);
    p.core.mlp_b1 = Tensor::zeros({d}, true);
    p.core.mlp_w2 = Tensor::zeros({1, d}, true);
    p.core.mlp_b2 = Tensor::zeros({1}, true);
    return p;
}

CampParams CampParams::initialize(const ModelConfig& cfg, std::uint64_t seed) {
    CampParams p = zeros(cfg);
    const Rng root(seed);
    for (auto& [name, tensor] : p.named()) {
        if (is_bias(name)) continue;
        Rng rng = root.split("init/" + name);
        // A lookup reads one column per token, so the table's fan-in is 1.
        const double fan_in = name == "encoder.embedding" ? 1.0 : static_cast<double>(tensor.cols());
        const double bound = 1.0 / std::sqrt(fan_in);
        for (double& v : tensor.mutable_data()) v = rng.uniform(-bound, bound);
    }
    return p;
}

CampParams CampParams::clone() const {
    CampParams out = *this;
    for (auto& [name, t] : out.slots()) *t = t->clone(t->requires_grad());
    return out;
}

void copy_values(const CampParams& from, CampParams& to) {
    auto src = from.named();
    auto dst = to.named();
    if (src.size() != dst.size()) throw DimensionError("copy_values: parameter sets differ");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].tensor.shape() != dst[i].tensor.shape()) {
            throw DimensionError("copy_values: " + src[i].name + " is " + shape_str(src[i].tensor.shape()) +
                                 " but target is " + shape_str(dst[i].tensor.shape()));
        }
        auto out = dst[i].tensor.mutable_data();
        std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), out.begin());
    }
}

Tensor encode_image(const RawRegionFeatures& raw, const CampParams& params) {
    return project_regions(raw, params.encoder);
}

EncodedCaption encode_caption(const TokenSequence& tokens, const CampParams& params) {
    return {encode_words(tokens, params.encoder), tokens.mask};
}

CampOutput score_pair(const Tensor& v, const EncodedCaption& caption, const CampParams& params,
                      const ModelConfig& cfg) {
    return forward(FeatureBatch{v, caption.t, caption.mask}, params.core, cfg);
}

}  // namespace camp
