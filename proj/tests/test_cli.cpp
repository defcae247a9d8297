#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "camp/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "camp");
    std::ostringstream out, err;
    const int code = camp::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("camp_cli_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

const std::vector<std::string> kSmallData{"--train-pairs", "16", "--val-pairs", "6",  "--test-pairs", "6",
                                          "--raw-dim",     "12", "--vocab",      "30", "--concepts",   "10",
                                          "--regions",     "3",  "--words",      "4"};

const std::vector<std::string> kSmallTrain{"--d", "6", "--batch", "4", "--epochs", "2"};

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("help exits with success") {
    auto r = run({"train", "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--epochs") != std::string::npos);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("usage errors exit with 2") {
    auto r = run({"train", "--bogus"});
    CHECK(r.code == 2);
    CHECK(r.err.find("error [usage]") != std::string::npos);
    CHECK(run({}).code == 2);
    CHECK(run({"train"}).code == 2);
    CHECK(run({"train", "--out", "x", "--fusion-op", "sum"}).code == 2);
}

TEST_CASE("runtime errors exit with 1 and name their category") {
    TempDir dir("errors");
    auto r = run({"eval", "--checkpoint", dir / "missing.ckpt"});
    CHECK(r.code == 1);
    CHECK(r.err.find("error [format/io]") != std::string::npos);

    r = run({"ablate", "--grid", "table4", "--variants", "nonsense"});
    CHECK(r.code == 1);
    CHECK(r.err.find("error [config]") != std::string::npos);
}

TEST_CASE("gradcheck passes on one seed") {
    auto r = run({"gradcheck", "--seeds", "1"});
    CHECK(r.code == 0);
    CHECK(r.out.find("end_to_end") != std::string::npos);
}

TEST_CASE("synth, train, eval and inspect") {
    TempDir dir("pipeline");
    REQUIRE(run(join({"--seed", "3", "synth", "--out", dir / "data"}, kSmallData)).code == 0);
    CHECK(fs::exists(dir / "data/train.json"));
    CHECK(fs::exists(dir / "data/test.feat"));

    auto r = run(join({"--seed", "4", "train", "--dataset", dir / "data", "--out", dir / "run"}, kSmallTrain));
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "run/model.ckpt"));
    CHECK(fs::exists(dir / "run/state.ckpt"));
    std::istringstream stats(slurp(dir / "run/stats.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(stats, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("val_rsum"));
        ++lines;
    }
    CHECK(lines == 2);

    r = run({"eval", "--checkpoint", dir / "run/model.ckpt", "--dataset", dir / "data"});
    REQUIRE(r.code == 0);
    const auto report = nlohmann::json::parse(r.out);
    CHECK(report.contains("rsum"));

    r = run({"inspect", "--checkpoint", dir / "run/model.ckpt", "--dataset", dir / "data", "--image", "1"});
    CHECK(r.code == 0);
    CHECK(r.out.find("gate") != std::string::npos);
}

TEST_CASE("the same seed reproduces synth and train output byte for byte") {
    TempDir dir("repro");
    for (const char* name : {"a", "b"}) {
        const std::string n = name;
        REQUIRE(run(join({"--seed", "7", "synth", "--out", dir / ("data" + n)}, kSmallData)).code == 0);
        REQUIRE(run(join({"--seed", "8", "train", "--dataset", dir / "dataa", "--out", dir / ("run" + n)}, kSmallTrain))
                    .code == 0);
    }
    CHECK(slurp(dir / "dataa/train.feat") == slurp(dir / "datab/train.feat"));
    CHECK(slurp(dir / "runa/stats.jsonl") == slurp(dir / "runb/stats.jsonl"));
    CHECK(slurp(dir / "runa/model.ckpt") == slurp(dir / "runb/model.ckpt"));
    CHECK(slurp(dir / "runa/state.ckpt") == slurp(dir / "runb/state.ckpt"));
}
