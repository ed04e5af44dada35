#include "dcdnn/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcdnn/errors.hpp"
#include "dcdnn/evaluator.hpp"
#include "dcdnn/rng.hpp"

namespace dcdnn {

double RunConfig::lambda() const {
    return lambda_override >= 0.0 ? lambda_override : lambda_for_qp(qp);
}

RecursiveConfig RunConfig::recursive_config() const {
    RecursiveConfig rc;
    rc.target_modes = modes;
    rc.rounds_per_stage = rounds;
    rc.stop_threshold = stop_threshold;
    rc.kappa = kappa;
    rc.pretrain_schedule = pretrain;
    rc.recursive_schedule = recursive;
    rc.batch_small = batch_small;
    rc.batch_large = batch_large;
    rc.momentum = momentum;
    rc.weight_decay = weight_decay;
    rc.value_scale = value_scale;
    rc.seed = seed;
    rc.threads = threads;
    rc.depth = depth;
    rc.hidden_dims = hidden;
    rc.init = paper_init ? WeightInit::kUnitStd : WeightInit::kFanInScaled;
    return rc;
}

void RunConfig::validate() const {
    if (block_sizes.empty()) throw ConfigError("block_sizes must not be empty");
    for (int n : block_sizes)
        if (n != 4 && n != 8 && n != 16 && n != 32)
            throw ConfigError("block size must be one of {4,8,16,32}");
    if (ref_lines < 1) throw ConfigError("ref_lines must be >= 1");
    if (modes < 1 || (modes & (modes - 1)) != 0)
        throw ConfigError("modes must be a power of two");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (!(kappa >= 0.0)) throw ConfigError("kappa must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(value_scale > 0.0)) throw ConfigError("value_scale must be > 0");
    pretrain.validate();
    recursive.validate();
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    std::size_t e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "on" || value == "true" || value == "1") return true;
    if (value == "off" || value == "false" || value == "0") return false;
    throw ConfigError(key + ": expected on/off, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_int(key, item));
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& raw_key,
                   const std::string& raw_value) {
    const std::string key = trim(raw_key);
    const std::string value = trim(raw_value);
    if (key == "block_sizes") cfg.block_sizes = parse_int_list(key, value);
    else if (key == "ref_lines") cfg.ref_lines = parse_int(key, value);
    else if (key == "pu_size") cfg.pu_size = parse_int(key, value);
    else if (key == "tiling") cfg.tiling = value;
    else if (key == "stride") cfg.stride = parse_int(key, value);
    else if (key == "filter") cfg.filter = parse_bool(key, value);
    else if (key == "depth") cfg.depth = parse_int(key, value);
    else if (key == "hidden.4") cfg.hidden[4] = parse_int(key, value);
    else if (key == "hidden.8") cfg.hidden[8] = parse_int(key, value);
    else if (key == "hidden.16") cfg.hidden[16] = parse_int(key, value);
    else if (key == "hidden.32") cfg.hidden[32] = parse_int(key, value);
    else if (key == "paper_init") cfg.paper_init = parse_bool(key, value);
    else if (key == "modes") cfg.modes = parse_int(key, value);
    else if (key == "kappa") cfg.kappa = parse_double(key, value);
    else if (key == "rounds") cfg.rounds = parse_int(key, value);
    else if (key == "stop_threshold") cfg.stop_threshold = parse_double(key, value);
    else if (key == "pretrain.epochs") cfg.pretrain.epochs = parse_int(key, value);
    else if (key == "pretrain.lr_start") cfg.pretrain.lr_start = parse_double(key, value);
    else if (key == "pretrain.lr_floor") cfg.pretrain.lr_floor = parse_double(key, value);
    else if (key == "pretrain.step") cfg.pretrain.step = parse_int(key, value);
    else if (key == "train.epochs") cfg.recursive.epochs = parse_int(key, value);
    else if (key == "train.lr_start") cfg.recursive.lr_start = parse_double(key, value);
    else if (key == "train.lr_floor") cfg.recursive.lr_floor = parse_double(key, value);
    else if (key == "train.step") cfg.recursive.step = parse_int(key, value);
    else if (key == "batch_small") cfg.batch_small = parse_int(key, value);
    else if (key == "batch_large") cfg.batch_large = parse_int(key, value);
    else if (key == "momentum") cfg.momentum = parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "value_scale") cfg.value_scale = parse_double(key, value);
    else if (key == "seed") {
        try {
            cfg.seed = std::stoull(value);
        } catch (...) {
            throw ConfigError("seed: expected an unsigned integer, got '" + value + "'");
        }
    }
    else if (key == "threads") cfg.threads = parse_int(key, value);
    else if (key == "qp") cfg.qp = parse_int(key, value);
    else if (key == "lambda_override") cfg.lambda_override = parse_double(key, value);
    else if (key == "flag_bits") cfg.flag_bits = parse_double(key, value);
    else if (key == "baseline_mode_bits")
        cfg.baseline_mode_bits = parse_double(key, value);
    else if (key == "eval_block") cfg.eval_block = parse_int(key, value);
    else throw ConfigError("unknown config key: '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

std::vector<std::pair<std::string, std::string>> echo_config(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string sizes;
    for (std::size_t i = 0; i < cfg.block_sizes.size(); ++i) {
        if (i) sizes += ",";
        sizes += std::to_string(cfg.block_sizes[i]);
    }
    out.emplace_back("block_sizes", sizes);
    out.emplace_back("ref_lines", std::to_string(cfg.ref_lines));
    out.emplace_back("pu_size", std::to_string(cfg.pu_size));
    out.emplace_back("tiling", cfg.tiling);
    out.emplace_back("stride", std::to_string(cfg.stride));
    out.emplace_back("filter", cfg.filter ? "on" : "off");
    out.emplace_back("depth", std::to_string(cfg.depth));
    for (int n : {4, 8, 16, 32})
        if (auto it = cfg.hidden.find(n); it != cfg.hidden.end())
            out.emplace_back("hidden." + std::to_string(n), std::to_string(it->second));
    out.emplace_back("paper_init", cfg.paper_init ? "on" : "off");
    out.emplace_back("modes", std::to_string(cfg.modes));
    out.emplace_back("kappa", format_double(cfg.kappa));
    out.emplace_back("rounds", std::to_string(cfg.rounds));
    out.emplace_back("stop_threshold", format_double(cfg.stop_threshold));
    out.emplace_back("pretrain.epochs", std::to_string(cfg.pretrain.epochs));
    out.emplace_back("pretrain.lr_start", format_double(cfg.pretrain.lr_start));
    out.emplace_back("pretrain.lr_floor", format_double(cfg.pretrain.lr_floor));
    out.emplace_back("pretrain.step", std::to_string(cfg.pretrain.step));
    out.emplace_back("train.epochs", std::to_string(cfg.recursive.epochs));
    out.emplace_back("train.lr_start", format_double(cfg.recursive.lr_start));
    out.emplace_back("train.lr_floor", format_double(cfg.recursive.lr_floor));
    out.emplace_back("train.step", std::to_string(cfg.recursive.step));
    out.emplace_back("batch_small", std::to_string(cfg.batch_small));
    out.emplace_back("batch_large", std::to_string(cfg.batch_large));
    out.emplace_back("momentum", format_double(cfg.momentum));
    out.emplace_back("weight_decay", format_double(cfg.weight_decay));
    out.emplace_back("value_scale", format_double(cfg.value_scale));
    out.emplace_back("seed", std::to_string(cfg.seed));
    out.emplace_back("threads", std::to_string(cfg.threads));
    out.emplace_back("qp", std::to_string(cfg.qp));
    out.emplace_back("lambda_override", format_double(cfg.lambda_override));
    out.emplace_back("flag_bits", format_double(cfg.flag_bits));
    out.emplace_back("baseline_mode_bits", format_double(cfg.baseline_mode_bits));
    out.emplace_back("eval_block", std::to_string(cfg.eval_block));
    return out;
}

}  // namespace dcdnn
