#include "camp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "camp/error.hpp"

namespace camp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

json describe(const std::vector<StoredTensor>& tensors) {
    json arr = json::array();
    for (const auto& t : tensors) arr.push_back({{"name", t.name}, {"shape", t.shape}});
    return arr;
}

std::size_t count_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<StoredTensor> read_layout(const json& arr) {
    std::vector<StoredTensor> out;
    for (const auto& e : arr) {
        StoredTensor t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<Shape>();
        if (t.shape.empty() || t.shape.size() > 2) {
            throw FormatError(FormatErrorKind::malformed, "checkpoint tensor " + t.name + " has invalid rank");
        }
        for (auto extent : t.shape) {
            if (extent == 0 || extent > (std::size_t{1} << 32)) {
                throw FormatError(FormatErrorKind::malformed, "checkpoint tensor " + t.name + " has invalid extent");
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

std::vector<StoredTensor> store(const CampParams& params) {
    std::vector<StoredTensor> out;
    for (const auto& nt : params.named()) {
        out.push_back({nt.name, nt.tensor.shape(), {nt.tensor.data().begin(), nt.tensor.data().end()}});
    }
    return out;
}

void restore_params(const std::vector<StoredTensor>& stored, CampParams& params) {
    auto named = params.named();
    if (named.size() != stored.size()) {
        throw FormatError(FormatErrorKind::shape_mismatch, "checkpoint holds " + std::to_string(stored.size()) +
                                                               " tensors, model expects " + std::to_string(named.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        if (stored[i].name != named[i].name) {
            throw FormatError(FormatErrorKind::shape_mismatch,
                              "checkpoint tensor " + stored[i].name + " where model expects " + named[i].name);
        }
        if (stored[i].shape != named[i].tensor.shape()) {
            throw FormatError(FormatErrorKind::shape_mismatch, "checkpoint tensor " + stored[i].name + " has shape " +
                                                                   shape_str(stored[i].shape) + ", model expects " +
                                                                   shape_str(named[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto dst = named[i].tensor.mutable_data();
        std::copy(stored[i].values.begin(), stored[i].values.end(), dst.begin());
    }
}

Checkpoint make_checkpoint(const CampParams& params, const ModelConfig& cfg, double best_val_rsum) {
    Checkpoint ck;
    ck.config = cfg;
    ck.params = store(params);
    ck.best_val_rsum = best_val_rsum;
    return ck;
}

Checkpoint make_checkpoint(const TrainerState& state, const ModelConfig& cfg, const TrainConfig& train_cfg) {
    Checkpoint ck;
    ck.config = cfg;
    ck.train_config = train_cfg;
    ck.params = store(state.params);
    ck.best_params = store(state.best_params);
    ck.optimizer = state.optimizer;
    ck.best_val_rsum = state.best_val_rsum;
    ck.epoch = state.next_epoch;
    ck.best_epoch = state.best_epoch;
    ck.epochs_since_best = state.epochs_since_best;
    ck.stopped = state.stopped;
    ck.rng_state = state.rng.state();
    return ck;
}

TrainerState resume_state(const Checkpoint& ckpt) {
    TrainerState st;
    st.params = CampParams::zeros(ckpt.config);
    restore_params(ckpt.params, st.params);
    st.best_params = CampParams::zeros(ckpt.config);
    restore_params(ckpt.best_params.empty() ? ckpt.params : ckpt.best_params, st.best_params);
    if (ckpt.optimizer) st.optimizer = *ckpt.optimizer;
    st.best_val_rsum = ckpt.best_val_rsum;
    st.next_epoch = ckpt.epoch;
    st.best_epoch = ckpt.best_epoch;
    st.epochs_since_best = ckpt.epochs_since_best;
    st.stopped = ckpt.stopped;
    if (!ckpt.rng_state.empty()) st.rng.restore(ckpt.rng_state);
    return st;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
    json header = {
        {"config", ck.config},
        {"params", describe(ck.params)},
        {"best_params", describe(ck.best_params)},
        {"best_val_rsum", ck.best_val_rsum},
        {"epoch", ck.epoch},
        {"best_epoch", ck.best_epoch},
        {"epochs_since_best", ck.epochs_since_best},
        {"stopped", ck.stopped},
        {"rng_state", ck.rng_state},
    };
    header["train_config"] = ck.train_config ? json(*ck.train_config) : json(nullptr);
    if (ck.optimizer) {
        json sizes = json::array();
        for (const auto& m : ck.optimizer->m) sizes.push_back(m.size());
        header["optimizer"] = {{"step", ck.optimizer->step}, {"sizes", sizes}};
    } else {
        header["optimizer"] = nullptr;
    }
    const std::string text = header.dump();

    std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
    buf.push_back(static_cast<char>(ck.version & 0xff));
    buf.push_back(static_cast<char>(ck.version >> 8));
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
    buf += text;
    auto put_all = [&](const std::vector<double>& values) {
        for (double v : values) put_u64(buf, std::bit_cast<std::uint64_t>(v));
    };
    for (const auto& t : ck.params) put_all(t.values);
    for (const auto& t : ck.best_params) put_all(t.values);
    if (ck.optimizer) {
        for (const auto& m : ck.optimizer->m) put_all(m);
        for (const auto& v : ck.optimizer->v) put_all(v);
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatErrorKind::io, "cannot open " + path.string() + " for writing");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::error_code ec;
    const auto file_size = fs::file_size(path, ec);
    if (ec) throw FormatError(FormatErrorKind::io, "cannot stat " + path.string() + ": " + ec.message());
    constexpr std::size_t prefix = 8 + 2 + 4;
    if (file_size < prefix) throw FormatError(FormatErrorKind::truncated, path.string() + ": too short for a checkpoint");

    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
    unsigned char head[prefix];
    is.read(reinterpret_cast<char*>(head), prefix);
    if (std::memcmp(head, kCheckpointMagic, 8) != 0) {
        throw FormatError(FormatErrorKind::bad_magic, path.string() + ": expected magic \"CAMPCKPT\"");
    }
    const std::uint16_t version = static_cast<std::uint16_t>(head[8] | (head[9] << 8));
    if (version != kCheckpointVersion) {
        throw FormatError(FormatErrorKind::version_mismatch, path.string() + ": checkpoint version " +
                                                                 std::to_string(version) + ", expected " +
                                                                 std::to_string(kCheckpointVersion));
    }
    const std::uint32_t len = static_cast<std::uint32_t>(head[10]) | (static_cast<std::uint32_t>(head[11]) << 8) |
                              (static_cast<std::uint32_t>(head[12]) << 16) |
                              (static_cast<std::uint32_t>(head[13]) << 24);
    if (len > file_size - prefix) throw FormatError(FormatErrorKind::truncated, path.string() + ": header truncated");
    std::string text(len, '\0');
    is.read(text.data(), len);

    Checkpoint ck;
    ck.version = version;
    std::size_t floats = 0;
    std::vector<std::size_t> opt_sizes;
    try {
        const json header = json::parse(text);
        ck.config = header.at("config").get<ModelConfig>();
        if (!header.at("train_config").is_null()) ck.train_config = header.at("train_config").get<TrainConfig>();
        ck.params = read_layout(header.at("params"));
        ck.best_params = read_layout(header.at("best_params"));
        ck.best_val_rsum = header.at("best_val_rsum").get<double>();
        ck.epoch = header.at("epoch").get<std::size_t>();
        ck.best_epoch = header.at("best_epoch").get<std::size_t>();
        ck.epochs_since_best = header.at("epochs_since_best").get<std::size_t>();
        ck.stopped = header.at("stopped").get<bool>();
        ck.rng_state = header.at("rng_state").get<std::string>();
        for (const auto& t : ck.params) floats += count_of(t.shape);
        for (const auto& t : ck.best_params) floats += count_of(t.shape);
        if (!header.at("optimizer").is_null()) {
            OptimizerState opt;
            opt.step = header.at("optimizer").at("step").get<std::uint64_t>();
            opt_sizes = header.at("optimizer").at("sizes").get<std::vector<std::size_t>>();
            for (auto n : opt_sizes) floats += 2 * n;
            ck.optimizer = std::move(opt);
        }
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(FormatErrorKind::malformed, path.string() + ": " + e.what());
    }

    const std::uint64_t payload = file_size - prefix - len;
    if (payload != static_cast<std::uint64_t>(floats) * 8) {
        throw FormatError(payload < floats * 8 ? FormatErrorKind::truncated : FormatErrorKind::malformed,
                          path.string() + ": payload has " + std::to_string(payload) + " bytes, header implies " +
                              std::to_string(floats * 8));
    }
    std::vector<unsigned char> raw(payload);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
    if (!is) throw FormatError(FormatErrorKind::truncated, path.string() + ": short read");

    std::size_t pos = 0;
    auto take = [&](std::vector<double>& out, std::size_t n) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i, pos += 8) out[i] = std::bit_cast<double>(get_u64(raw.data() + pos));
    };
    for (auto& t : ck.params) take(t.values, count_of(t.shape));
    for (auto& t : ck.best_params) take(t.values, count_of(t.shape));
    if (ck.optimizer) {
        ck.optimizer->m.resize(opt_sizes.size());
        ck.optimizer->v.resize(opt_sizes.size());
        for (std::size_t i = 0; i < opt_sizes.size(); ++i) take(ck.optimizer->m[i], opt_sizes[i]);
        for (std::size_t i = 0; i < opt_sizes.size(); ++i) take(ck.optimizer->v[i], opt_sizes[i]);
    }
    return ck;
}

}  // namespace camp
