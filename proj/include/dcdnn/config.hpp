#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcdnn/trainer.hpp"

namespace dcdnn {

// Every tunable of the pipeline. Parsed from a key=value file, overridden
// from the command line, and echoed verbatim into run manifests.
struct RunConfig {
    // data extraction
    std::vector<int> block_sizes = {4};
    int ref_lines = 8;
    int pu_size = 0;      // 0 -> block size
    std::string tiling;   // "" -> uniform over block_sizes; or "mixed64"
    int stride = 0;       // 0 -> pu size
    bool filter = true;

    // network shape
    int depth = 4;
    std::map<int, int> hidden = {{4, 128}, {8, 256}, {16, 256}, {32, 512}};
    bool paper_init = false;

    // training
    int modes = 2;  // K
    double kappa = 0.02;
    int rounds = 8;
    double stop_threshold = 0.97;
    Schedule pretrain{40, 0.1, 1e-4, 10};
    Schedule recursive{30, 0.01, 1e-4, 10};
    int batch_small = 128;
    int batch_large = 64;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double value_scale = kDefaultValueScale;
    std::uint64_t seed = 1;
    int threads = 1;

    // evaluation
    int qp = 32;
    double lambda_override = -1.0;  // < 0 -> derive from qp
    double flag_bits = 1.0;
    double baseline_mode_bits = 6.0;
    int eval_block = 0;  // 0 -> smallest size in the model bank

    double lambda() const;
    RecursiveConfig recursive_config() const;
    void validate() const;
};

// key = value lines; '#' starts a comment; unknown keys are ConfigErrors.
RunConfig parse_config_file(const std::string& path);
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Ordered (key, value) echo covering every field; manifests embed this.
std::vector<std::pair<std::string, std::string>> echo_config(const RunConfig& cfg);

// Environment variable naming a default config file.
inline constexpr const char* kConfigEnvVar = "DCDNN_CONFIG";

}  // namespace dcdnn
