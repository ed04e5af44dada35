// dcdnn -- learned intra-prediction laboratory.
//
// Pipeline: extract -> pretrain -> split -> train -> evaluate -> report.
// Every stage writes a manifest.json recording the config echo, the seed,
// and input/output hashes, so each artifact is reproducible.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dcdnn/errors.hpp"
#include "dcdnn/pipeline.hpp"

namespace {

using dcdnn::RunConfig;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> settings;  // key=value overrides
    int threads = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool threads_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path,
                    "config file (key = value); defaults to $DCDNN_CONFIG");
    cmd->add_option("--set", args.settings, "override a config key, e.g. --set kappa=0.05");
    cmd->add_option("--threads", args.threads, "worker threads (1 = bit-reproducible)")
        ->each([&args](const std::string&) { args.threads_set = true; });
    cmd->add_option("--seed", args.seed, "master seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

RunConfig build_config(const CommonArgs& args) {
    RunConfig cfg;
    std::string path = args.config_path;
    if (path.empty()) {
        if (const char* env = std::getenv(dcdnn::kConfigEnvVar)) path = env;
    }
    if (!path.empty()) cfg = dcdnn::parse_config_file(path);
    for (const std::string& s : args.settings) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw dcdnn::UsageError("--set expects key=value, got '" + s + "'");
        dcdnn::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (args.threads_set) cfg.threads = args.threads;
    if (args.seed_set) cfg.seed = args.seed;
    return cfg;
}

void require(bool present, const std::string& flag) {
    if (!present) throw dcdnn::UsageError(flag + " is required");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dcdnn: data-clustering-driven intra prediction laboratory"};
    app.require_subcommand(0, 1);

    // extract
    auto* extract = app.add_subcommand("extract", "build training datasets from images");
    CommonArgs extract_common;
    add_common(extract, extract_common);
    std::vector<std::string> extract_inputs;
    std::string extract_out;
    int opt_block = 0, opt_ref_lines = 0, opt_pu = -1, opt_stride = -1;
    std::string opt_tiling, opt_filter;
    extract->add_option("--input", extract_inputs, "PGM file or manifest (one path per line)");
    extract->add_option("--out", extract_out, "output directory");
    extract->add_option("--block-size", opt_block, "TU size for uniform tiling");
    extract->add_option("--ref-lines", opt_ref_lines, "reference lines L");
    extract->add_option("--pu-size", opt_pu, "prediction unit size");
    extract->add_option("--tiling", opt_tiling, "uniform | mixed64");
    extract->add_option("--filter", opt_filter, "complexity filter: on | off");
    extract->add_option("--stride", opt_stride, "PU grid stride");

    // pretrain
    auto* pretrain = app.add_subcommand("pretrain", "train the root network bank");
    CommonArgs pretrain_common;
    add_common(pretrain, pretrain_common);
    std::vector<std::string> pretrain_datasets;
    std::string pretrain_out;
    bool pretrain_paper_init = false;
    pretrain->add_option("--dataset", pretrain_datasets, ".dcds files");
    pretrain->add_option("--out", pretrain_out, "output directory");
    pretrain->add_flag("--paper-init", pretrain_paper_init,
                       "initialize weights with unit standard deviation");

    // split
    auto* split = app.add_subcommand("split", "double a model bank by mirrored noise");
    CommonArgs split_common;
    add_common(split, split_common);
    std::string split_models, split_out;
    double split_kappa = -1.0;
    split->add_option("--models", split_models, "input bank (.dcdb)");
    split->add_option("--out", split_out, "output directory");
    split->add_option("--kappa", split_kappa, "noise scale relative to weight RMS");

    // train
    auto* train = app.add_subcommand("train", "recursive data-clustering training");
    CommonArgs train_common;
    add_common(train, train_common);
    std::string train_models, train_out;
    std::vector<std::string> train_datasets;
    int train_k = 0;
    train->add_option("--models", train_models, "starting bank (.dcdb)");
    train->add_option("--dataset", train_datasets, ".dcds files");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--k", train_k, "target number of DCDNN modes (power of two)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "mode decision and usage statistics");
    CommonArgs eval_common;
    add_common(evaluate, eval_common);
    std::string eval_models, eval_image, eval_dataset, eval_out;
    int eval_qp = -1;
    double eval_lambda = -2.0;
    evaluate->add_option("--models", eval_models, "bank (.dcdb)");
    evaluate->add_option("--image", eval_image, "PGM image to evaluate");
    evaluate->add_option("--dataset", eval_dataset, ".dcds file to evaluate");
    evaluate->add_option("--out-dir", eval_out, "output directory");
    evaluate->add_option("--qp", eval_qp, "quantization parameter for lambda");
    evaluate->add_option("--lambda-override", eval_lambda, "fixed lambda");

    // report
    auto* report = app.add_subcommand("report", "regenerate report files from CSVs");
    CommonArgs report_common;
    add_common(report, report_common);
    std::string report_history, report_decisions, report_out;
    report->add_option("--history", report_history, "history.csv from train");
    report->add_option("--decisions", report_decisions, "decisions.csv from evaluate");
    report->add_option("--out-dir", report_out, "output directory");

    // selftest
    auto* selftest = app.add_subcommand("selftest", "run built-in numerical checks");
    CommonArgs selftest_common;
    add_common(selftest, selftest_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (extract->parsed()) {
            RunConfig cfg = build_config(extract_common);
            require(!extract_inputs.empty(), "--input");
            require(!extract_out.empty(), "--out");
            if (opt_block > 0) cfg.block_sizes = {opt_block};
            if (opt_ref_lines > 0) cfg.ref_lines = opt_ref_lines;
            if (opt_pu >= 0) cfg.pu_size = opt_pu;
            if (opt_stride >= 0) cfg.stride = opt_stride;
            if (!opt_tiling.empty()) cfg.tiling = opt_tiling == "uniform" ? "" : opt_tiling;
            if (!opt_filter.empty()) cfg.filter = opt_filter == "on";
            const auto out = dcdnn::run_extract(cfg, extract_inputs, extract_out);
            std::cout << "extracted " << out.dataset_paths.size() << " dataset file(s) to "
                      << extract_out << "\n";
        } else if (pretrain->parsed()) {
            RunConfig cfg = build_config(pretrain_common);
            require(!pretrain_datasets.empty(), "--dataset");
            require(!pretrain_out.empty(), "--out");
            if (pretrain_paper_init) cfg.paper_init = true;
            const auto out = dcdnn::run_pretrain(cfg, pretrain_datasets, pretrain_out);
            std::cout << "pretrained bank written to " << out.banks_path << "\n";
        } else if (split->parsed()) {
            RunConfig cfg = build_config(split_common);
            require(!split_models.empty(), "--models");
            require(!split_out.empty(), "--out");
            if (split_kappa >= 0.0) cfg.kappa = split_kappa;
            const auto out = dcdnn::run_split(cfg, split_models, split_out);
            std::cout << "doubled bank written to " << out.banks_path << "\n";
        } else if (train->parsed()) {
            RunConfig cfg = build_config(train_common);
            require(!train_models.empty(), "--models");
            require(!train_datasets.empty(), "--dataset");
            require(!train_out.empty(), "--out");
            if (train_k > 0) cfg.modes = train_k;
            const auto out = dcdnn::run_train(cfg, train_models, train_datasets, train_out);
            std::cout << "trained banks written to " << out.banks_path << "\n";
        } else if (evaluate->parsed()) {
            RunConfig cfg = build_config(eval_common);
            require(!eval_models.empty(), "--models");
            require(!eval_image.empty() || !eval_dataset.empty(), "--image or --dataset");
            require(!eval_out.empty(), "--out-dir");
            if (eval_qp >= 0) cfg.qp = eval_qp;
            if (eval_lambda >= -1.0) cfg.lambda_override = eval_lambda;
            if (!eval_image.empty()) {
                const auto out = dcdnn::run_evaluate(cfg, eval_models, eval_image, eval_out);
                std::cout << "usage rate " << out.usage << "; report in "
                          << out.report_dir << "\n";
            } else {
                const auto out =
                    dcdnn::run_evaluate_dataset(cfg, eval_models, eval_dataset, eval_out);
                std::cout << "decisions written to " << out.decisions_csv << "\n";
            }
        } else if (report->parsed()) {
            RunConfig cfg = build_config(report_common);
            require(!report_history.empty() || !report_decisions.empty(),
                    "--history or --decisions");
            require(!report_out.empty(), "--out-dir");
            const auto out =
                dcdnn::run_report(cfg, report_history, report_decisions, report_out);
            std::cout << "report written to " << out.report_dir << "\n";
        } else if (selftest->parsed()) {
            (void)build_config(selftest_common);  // validate config plumbing too
            if (!dcdnn::run_selftest(std::cout)) {
                std::cerr << "selftest failed\n";
                return 1;
            }
            std::cout << "selftest passed\n";
        } else {
            std::cout << app.help();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
