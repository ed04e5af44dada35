#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcdnn/config.hpp"
#include "dcdnn/dataset.hpp"
#include "dcdnn/evaluator.hpp"

namespace dcdnn {

// Stage drivers shared by the CLI and the test harness. Every stage writes
// a manifest.json (config echo, seed, input/output hashes) next to its
// outputs so each artifact is reproducible from its recorded settings.

// FNV-1a over the file bytes.
std::uint64_t hash_file(const std::string& path);

// Expands inputs: a .pgm path stays as is, anything else is read as a text
// manifest with one path per line (relative entries resolve against the
// manifest's directory).
std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs);

// Loads planes with image ids assigned by position.
std::vector<Plane> load_planes(const std::vector<std::string>& paths);

// Corpus with per-sample baseline complexity filtering applied; planes are
// needed to score the baseline predictor. Groups lose dropped members and
// emptied groups disappear.
Corpus filter_corpus(const Corpus& corpus, const std::vector<Plane>& planes);

struct ExtractOutputs {
    std::vector<std::string> dataset_paths;  // one .dcds per block size
    std::string manifest_path;
};
ExtractOutputs run_extract(const RunConfig& cfg, const std::vector<std::string>& inputs,
                           const std::string& out_dir);

struct PretrainOutputs {
    std::string banks_path;
    std::string epochs_csv;
    std::string manifest_path;
};
PretrainOutputs run_pretrain(const RunConfig& cfg,
                             const std::vector<std::string>& dataset_paths,
                             const std::string& out_dir);

struct SplitOutputs {
    std::string banks_path;
    std::string manifest_path;
};
SplitOutputs run_split(const RunConfig& cfg, const std::string& banks_in,
                       const std::string& out_dir);

struct TrainOutputs {
    std::string banks_path;
    std::string history_csv;
    std::string epochs_csv;
    std::string assignment_csv;
    std::string manifest_path;
};
TrainOutputs run_train(const RunConfig& cfg, const std::string& banks_in,
                       const std::vector<std::string>& dataset_paths,
                       const std::string& out_dir);

struct EvaluateOutputs {
    std::string decisions_csv;
    std::string report_dir;  // emit_report bundle
    std::string manifest_path;
    double usage = 0.0;
};
EvaluateOutputs run_evaluate(const RunConfig& cfg, const std::string& banks_path,
                             const std::string& image_path,
                             const std::string& out_dir);

// Same decision sweep over a stored .dcds file; no frame context, so the
// usage figure covers the decided area only.
EvaluateOutputs run_evaluate_dataset(const RunConfig& cfg, const std::string& banks_path,
                                     const std::string& dataset_path,
                                     const std::string& out_dir);

struct ReportOutputs {
    std::string report_dir;
    std::string manifest_path;
};
ReportOutputs run_report(const RunConfig& cfg, const std::string& history_csv,
                         const std::string& decisions_csv, const std::string& out_dir);

struct PipelineOutputs {
    ExtractOutputs extract;
    PretrainOutputs pretrain;
    TrainOutputs train;
    EvaluateOutputs evaluate;
};
// extract -> pretrain -> train -> evaluate (first input image).
PipelineOutputs run_full_pipeline(const RunConfig& cfg,
                                  const std::vector<std::string>& inputs,
                                  const std::string& work_dir);

// Built-in health checks: analytic gradients vs central finite differences
// on small random nets, split mirror symmetry, forward determinism, and
// partition optimality on a random fixture. Prints one line per check;
// returns false if any fails.
bool run_selftest(std::ostream& out);

}  // namespace dcdnn
