#include <atomic>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>

#include "camp/error.hpp"
#include "camp/log.hpp"
#include "camp/rng.hpp"

namespace camp {

const char* to_string(FormatErrorKind kind) noexcept {
    switch (kind) {
        case FormatErrorKind::bad_magic: return "bad-magic";
        case FormatErrorKind::version_mismatch: return "version-mismatch";
        case FormatErrorKind::truncated: return "truncated";
        case FormatErrorKind::non_finite: return "non-finite";
        case FormatErrorKind::malformed: return "malformed";
        case FormatErrorKind::shape_mismatch: return "shape-mismatch";
        case FormatErrorKind::io: return "io";
    }
    return "unknown";
}

// ---- logging ---------------------------------------------------------------

namespace {
std::mutex g_log_mutex;
std::set<std::string, std::less<>> g_seen;
std::atomic<std::size_t> g_warnings{0};
}  // namespace

void warn(std::string_view message) {
    ++g_warnings;
    std::lock_guard lock(g_log_mutex);
    std::cerr << "warning: " << message << '\n';
}

void warn_once(std::string_view key, std::string_view message) {
    ++g_warnings;
    std::lock_guard lock(g_log_mutex);
    if (g_seen.find(key) != g_seen.end()) return;
    g_seen.emplace(key);
    std::cerr << "warning: " << message << '\n';
}

std::size_t warning_count() { return g_warnings.load(); }

// ---- rng -------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
    // FNV-1a over the tag, mixed with the parent seed.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed) ^ h);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) noexcept {
    return splitmix64(derive_seed(seed, tag) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::string Rng::state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    std::uint64_t seed = 0;
    std::mt19937_64 engine;
    if (!(is >> seed >> engine)) throw FormatError(FormatErrorKind::malformed, "unreadable RNG state");
    seed_ = seed;
    engine_ = engine;
}

}  // namespace camp
