// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latentplan/checkpoint.hpp"
#include "latentplan/rng.hpp"

using namespace latentplan;
namespace fs = std::filesystem;

namespace {
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("lp_ck_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

NamedParams sample_params(Rng& rng) {
    Linear lin(4, 3, rng);
    NamedParams named;
    lin.collect("enc", named);
    return named;
}
} // namespace

TEST_CASE("checkpoint: roundtrip preserves everything") {
    TempDir tmp;
    Rng rng(5);
    NamedParams params = sample_params(rng);
    std::map<std::string, std::string> meta{{"latent_dim", "32"}, {"kind", "backward"}};
    const std::string path = (tmp.path / "model.ckpt").string();
    save_checkpoint(path, "planner", meta, params);

    CheckpointData ck = load_checkpoint(path);
    CHECK(ck.model == "planner");
    CHECK(ck.metadata == meta);
    REQUIRE(ck.params.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(ck.params[i].first == params[i].first);
        CHECK(ck.params[i].second.shape() == params[i].second.shape());
        CHECK(ck.params[i].second.value() == params[i].second.value());
    }
    CHECK(require_meta(ck, "kind") == "backward");
    CHECK_THROWS_AS(require_meta(ck, "absent"), IoError);
}

TEST_CASE("checkpoint: save is byte-stable") {
    TempDir tmp;
    Rng rng(6);
    NamedParams params = sample_params(rng);
    const std::string p1 = (tmp.path / "a.ckpt").string();
    const std::string p2 = (tmp.path / "b.ckpt").string();
    save_checkpoint(p1, "m", {{"k", "v"}}, params);
    save_checkpoint(p2, "m", {{"k", "v"}}, params);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());
}

TEST_CASE("checkpoint: manifest checksum matches file content") {
    TempDir tmp;
    Rng rng(7);
    NamedParams params = sample_params(rng);
    const std::string path = (tmp.path / "m.ckpt").string();
    save_checkpoint(path, "m", {}, params);

    std::ifstream bf(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    const std::string want = hex64(fnv1a64(bytes.data(), bytes.size()));

    std::ifstream mf(path + ".manifest");
    std::string word, found;
    while (mf >> word) {
        if (word == "checksum") {
            mf >> found;
            break;
        }
    }
    CHECK(found == want);
}

TEST_CASE("checkpoint: restore_params copies values and validates") {
    TempDir tmp;
    Rng rng(8);
    NamedParams src = sample_params(rng);
    const std::string path = (tmp.path / "m.ckpt").string();
    save_checkpoint(path, "m", {}, src);
    CheckpointData ck = load_checkpoint(path);

    Rng rng2(99);
    NamedParams dst = sample_params(rng2);
    CHECK(dst[0].second.value() != src[0].second.value());
    restore_params(ck, dst);
    CHECK(dst[0].second.value() == src[0].second.value());
    CHECK(dst[1].second.value() == src[1].second.value());

    NamedParams wrong;
    Linear other(5, 3, rng2);
    other.collect("enc", wrong);
    CHECK_THROWS_AS(restore_params(ck, wrong), IoError);
}

TEST_CASE("checkpoint: corrupted files are rejected") {
    TempDir tmp;
    const std::string path = (tmp.path / "bad.ckpt").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    CHECK_THROWS_AS(load_checkpoint((tmp.path / "missing.ckpt").string()), IoError);

    // truncated real checkpoint
    Rng rng(9);
    NamedParams params = sample_params(rng);
    const std::string full = (tmp.path / "full.ckpt").string();
    save_checkpoint(full, "m", {}, params);
    std::ifstream f(full, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string trunc = (tmp.path / "trunc.ckpt").string();
    {
        std::ofstream tf(trunc, std::ios::binary);
        tf.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
    }
    CHECK_THROWS_AS(load_checkpoint(trunc), IoError);
}
