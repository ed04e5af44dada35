#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcdnn/dataset.hpp"
#include "dcdnn/rng.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("dcdnn_cli_" + std::to_string(::getpid()) +
                                            "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args, const std::string& stderr_to = "") {
    std::string cmd = std::string(DCDNN_CLI_PATH) + " " + args + " > /dev/null";
    cmd += stderr_to.empty() ? " 2>/dev/null" : (" 2> " + stderr_to);
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Small two-family test image: left half horizontal-gradient texture,
// right half vertical, enough blocks to train a toy model.
void write_test_image(const std::string& path, std::uint64_t seed) {
    dcdnn::Rng rng(seed);
    dcdnn::Plane p;
    p.width = 64;
    p.height = 64;
    p.samples.resize(64 * 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const bool horizontal = x < 32;
            const double v = 100.0 + 2.5 * (horizontal ? (x % 16) : (y % 16)) +
                             2.0 * rng.gaussian();
            p.samples[y * 64 + x] =
                static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    dcdnn::save_plane(p, path);
}

const char* kTinyConfig =
    "block_sizes = 4\n"
    "ref_lines = 4\n"
    "hidden.4 = 16\n"
    "depth = 2\n"
    "modes = 2\n"
    "rounds = 2\n"
    "stop_threshold = 1.01\n"
    "pretrain.epochs = 2\n"
    "pretrain.step = 1\n"
    "pretrain.lr_start = 0.01\n"
    "pretrain.lr_floor = 0.001\n"
    "train.epochs = 2\n"
    "train.step = 1\n"
    "train.lr_start = 0.01\n"
    "train.lr_floor = 0.001\n"
    "seed = 11\n"
    "threads = 1\n";

}  // namespace

TEST_CASE("help exits zero, unknown flags exit two") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("extract --help") == 0);
    CHECK(run_cli("extract --no-such-flag") == 2);
    CHECK(run_cli("--bogus") == 2);
}

TEST_CASE("missing required inputs exit one and name the flag") {
    TempDir tmp;
    const std::string err = tmp.file("err.txt");
    CHECK(run_cli("train", err) == 1);
    CHECK(slurp(err).find("--models") != std::string::npos);

    CHECK(run_cli("extract", err) == 1);
    CHECK(slurp(err).find("--input") != std::string::npos);

    CHECK(run_cli("evaluate --models x.dcdb", err) == 1);
    CHECK(slurp(err).find("--image") != std::string::npos);
}

TEST_CASE("selftest passes on a clean build") {
    CHECK(run_cli("selftest") == 0);
}

TEST_CASE("full CLI pipeline runs and is seed-deterministic") {
    TempDir tmp;
    write_test_image(tmp.file("img.pgm"), 3);
    {
        std::ofstream f(tmp.file("run.cfg"));
        f << kTinyConfig;
    }
    const std::string cfg = " --config " + tmp.file("run.cfg");

    for (const std::string run : {"a", "b"}) {
        const std::string dir = tmp.file(run);
        REQUIRE(run_cli("extract --input " + tmp.file("img.pgm") + " --out " + dir +
                        "/ds" + cfg) == 0);
        REQUIRE(run_cli("pretrain --dataset " + dir + "/ds/dataset_n4.dcds --out " +
                        dir + "/pre" + cfg) == 0);
        REQUIRE(run_cli("train --models " + dir + "/pre/banks.dcdb --dataset " + dir +
                        "/ds/dataset_n4.dcds --out " + dir + "/tr --k 2" + cfg) == 0);
        REQUIRE(run_cli("evaluate --models " + dir + "/tr/banks.dcdb --image " +
                        tmp.file("img.pgm") + " --out-dir " + dir + "/ev" + cfg) == 0);
        REQUIRE(run_cli("evaluate --models " + dir + "/tr/banks.dcdb --dataset " + dir +
                        "/ds/dataset_n4.dcds --out-dir " + dir + "/evds" + cfg) == 0);
        REQUIRE(fs::exists(dir + "/evds/decisions.csv"));
        REQUIRE(run_cli("report --history " + dir + "/tr/history.csv --decisions " +
                        dir + "/ev/decisions.csv --out-dir " + dir + "/rep" + cfg) == 0);
    }

    // identical seeds and config, byte-identical artifacts
    for (const std::string rel :
         {"ds/dataset_n4.dcds", "ds/manifest.json", "pre/banks.dcdb", "tr/banks.dcdb",
          "tr/history.csv", "tr/assignments.csv", "tr/manifest.json",
          "ev/decisions.csv", "ev/report/summary.json", "rep/summary.json"}) {
        const std::string a = slurp(tmp.file("a/" + rel));
        const std::string b = slurp(tmp.file("b/" + rel));
        REQUIRE_FALSE(a.empty());
        CHECK(a == b);
    }

    // different seed, different models
    const std::string dir = tmp.file("c");
    REQUIRE(run_cli("extract --input " + tmp.file("img.pgm") + " --out " + dir + "/ds" +
                    cfg) == 0);
    REQUIRE(run_cli("pretrain --dataset " + dir + "/ds/dataset_n4.dcds --out " + dir +
                    "/pre --seed 12" + cfg) == 0);
    CHECK(slurp(tmp.file("a/pre/banks.dcdb")) != slurp(tmp.file("c/pre/banks.dcdb")));
}

TEST_CASE("split subcommand doubles a bank deterministically") {
    TempDir tmp;
    write_test_image(tmp.file("img.pgm"), 5);
    {
        std::ofstream f(tmp.file("run.cfg"));
        f << kTinyConfig;
    }
    const std::string cfg = " --config " + tmp.file("run.cfg");
    REQUIRE(run_cli("extract --input " + tmp.file("img.pgm") + " --out " +
                    tmp.file("ds") + cfg) == 0);
    REQUIRE(run_cli("pretrain --dataset " + tmp.file("ds/dataset_n4.dcds") + " --out " +
                    tmp.file("pre") + cfg) == 0);
    REQUIRE(run_cli("split --models " + tmp.file("pre/banks.dcdb") + " --out " +
                    tmp.file("sp1") + " --kappa 0.03" + cfg) == 0);
    REQUIRE(run_cli("split --models " + tmp.file("pre/banks.dcdb") + " --out " +
                    tmp.file("sp2") + " --kappa 0.03" + cfg) == 0);
    const auto banks = dcdnn::load_banks_file(tmp.file("sp1/banks.dcdb"));
    CHECK(banks.size() == 2);
    CHECK(slurp(tmp.file("sp1/banks.dcdb")) == slurp(tmp.file("sp2/banks.dcdb")));
}
