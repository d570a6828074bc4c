#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

fs::path scratch() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "semgen_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// Runs the CLI against a private artifact root; stderr is discarded.
Result run(const std::string &args) {
    const std::string cmd = "SEMGEN_ARTIFACTS='" + scratch().string() + "' '" SEMGEN_CLI_PATH "' " + args +
                            " 2>/dev/null";
    Result r;
    FILE *p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace

TEST_CASE("help exits 0 and lists the config keys") {
    const auto r = run("--help");
    CHECK(r.code == 0);
    CHECK(r.out.find("sem.d_c") != std::string::npos);
    CHECK(r.out.find("Exit codes") != std::string::npos);
}

TEST_CASE("configuration errors exit 2") {
    CHECK(run("make-corpus --set no.such.key=1").code == 2);
    CHECK(run("make-corpus --set corpus.num_clips=oops").code == 2);
    CHECK(run("train-baseline -k transformer -n x").code == 2);
    CHECK(run("no-such-verb").code == 2);
    CHECK(run("").code == 2);
    // Named runs that do not exist are a configuration mistake for an experiment.
    CHECK(run("eval-drift --runs a b").code == 2);
}

TEST_CASE("missing trained artifacts exit 3") {
    CHECK(run("sample -n never_trained").code == 3);
    CHECK(run("train-latent-gen -n x").code == 3);
}

TEST_CASE("make-corpus is deterministic in the seed") {
    const auto a = run("make-corpus --seed 5 corpus.num_clips=4 -o " + (scratch() / "a").string());
    const auto b = run("make-corpus --seed 5 corpus.num_clips=4 -o " + (scratch() / "b").string());
    const auto c = run("make-corpus --seed 6 corpus.num_clips=4 -o " + (scratch() / "c").string());
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    REQUIRE(c.code == 0);
    const auto ja = nlohmann::json::parse(a.out), jb = nlohmann::json::parse(b.out), jc = nlohmann::json::parse(c.out);
    CHECK(ja.at("clips") == 4);
    CHECK(ja.at("corpus_hash") == jb.at("corpus_hash"));
    CHECK(ja.at("corpus_hash") != jc.at("corpus_hash"));
    CHECK(fs::exists(scratch() / "a"));
}
