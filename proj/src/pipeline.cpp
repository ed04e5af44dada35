#include "dcdnn/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "binio.hpp"
#include "dcdnn/baseline.hpp"
#include "dcdnn/errors.hpp"
#include "dcdnn/rng.hpp"
#include "dcdnn/split.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace dcdnn {

std::uint64_t hash_file(const std::string& path) {
    const auto bytes = binio::read_file(path);
    std::uint64_t h = 14695981039346656037ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::exists(dir)) throw IoError("cannot create directory: " + dir);
}

// Manifest with config echo and artifact hashes; output paths are stored as
// basenames so identical runs into different directories byte-match.
std::string write_manifest(const RunConfig& cfg, const std::string& stage,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs,
                           const std::string& out_dir) {
    nlohmann::ordered_json m;
    m["schema_version"] = 1;
    m["stage"] = stage;
    m["seed"] = cfg.seed;
    nlohmann::ordered_json conf;
    for (const auto& [k, v] : echo_config(cfg)) conf[k] = v;
    m["config"] = conf;
    nlohmann::ordered_json ins = nlohmann::ordered_json::array();
    for (const std::string& p : inputs)
        ins.push_back({{"path", fs::path(p).filename().string()},
                       {"fnv1a64", hex64(hash_file(p))}});
    m["inputs"] = ins;
    nlohmann::ordered_json outs = nlohmann::ordered_json::array();
    for (const std::string& p : outputs)
        outs.push_back({{"path", fs::path(p).filename().string()},
                        {"fnv1a64", hex64(hash_file(p))}});
    m["outputs"] = outs;

    const std::string path = out_dir + "/manifest.json";
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << m.dump(2) << "\n";
    return path;
}

}  // namespace

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<std::string> out;
    for (const std::string& in : inputs) {
        if (in.size() >= 4 && in.substr(in.size() - 4) == ".pgm") {
            out.push_back(in);
            continue;
        }
        std::ifstream f(in);
        if (!f) throw IoError("cannot open input manifest: " + in);
        const fs::path base = fs::path(in).parent_path();
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line[0] == '#') continue;
            fs::path p(line);
            out.push_back(p.is_absolute() ? p.string() : (base / p).string());
        }
    }
    if (out.empty()) throw UsageError("no input images");
    return out;
}

std::vector<Plane> load_planes(const std::vector<std::string>& paths) {
    std::vector<Plane> planes;
    planes.reserve(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) {
        Plane p = load_plane(paths[i]);
        p.image_id = static_cast<int>(i);
        planes.push_back(std::move(p));
    }
    return planes;
}

Corpus filter_corpus(const Corpus& corpus, const std::vector<Plane>& planes) {
    // flatten (size-major) so the per-image rule pools every block size
    std::vector<TrainSample> flat;
    std::vector<double> mse;
    std::vector<std::pair<int, std::uint32_t>> where;  // (block_size, index)
    for (const SizeDataset& d : corpus.by_size)
        for (std::uint32_t i = 0; i < d.samples.size(); ++i) {
            const TrainSample& s = d.samples[i];
            if (s.origin.image_id >= planes.size())
                throw DataError("filter_corpus: sample references a missing image");
            const Plane& plane = planes[s.origin.image_id];
            const auto [mode, sse] = best_baseline_for_block(
                plane, static_cast<int>(s.origin.x), static_cast<int>(s.origin.y),
                d.block_size);
            (void)mode;
            flat.push_back(s);
            mse.push_back(sse / (static_cast<double>(d.block_size) * d.block_size));
            where.emplace_back(d.block_size, i);
        }

    const auto kept = complexity_filter_indices(flat, mse);

    // old (size, index) -> new index, for surviving samples
    std::map<std::pair<int, std::uint32_t>, std::uint32_t> remap;
    Corpus out;
    for (const SizeDataset& d : corpus.by_size)
        out.by_size.push_back(SizeDataset{d.block_size, d.ref_lines, {}});
    for (std::size_t k : kept) {
        SizeDataset* d = out.find(where[k].first);
        remap[where[k]] = static_cast<std::uint32_t>(d->samples.size());
        d->samples.push_back(flat[k]);
    }
    for (const PredictionGroup& g : corpus.groups) {
        PredictionGroup copy = g;
        copy.members.clear();
        for (const SampleRef& m : g.members) {
            auto it = remap.find({m.block_size, m.index});
            if (it != remap.end()) copy.members.push_back({m.block_size, it->second});
        }
        if (!copy.members.empty()) out.groups.push_back(std::move(copy));
    }
    return out;
}

ExtractOutputs run_extract(const RunConfig& cfg, const std::vector<std::string>& inputs,
                           const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    const auto paths = expand_inputs(inputs);
    const auto planes = load_planes(paths);

    Corpus corpus;
    for (const Plane& plane : planes) {
        Corpus per_plane;
        if (cfg.tiling == "mixed64") {
            const int pu = cfg.pu_size > 0 ? cfg.pu_size : 64;
            per_plane = extract_corpus(plane, pu, "mixed64", cfg.ref_lines, cfg.stride);
        } else if (cfg.tiling.empty() || cfg.tiling == "uniform") {
            for (int n : cfg.block_sizes) {
                const int pu = cfg.pu_size > 0 ? cfg.pu_size : n;
                const Corpus c = extract_corpus(plane, pu, "uniform:" + std::to_string(n),
                                                cfg.ref_lines, cfg.stride);
                append_corpus(per_plane, c);
            }
        } else {
            throw ConfigError("unknown tiling: " + cfg.tiling);
        }
        append_corpus(corpus, per_plane);
    }

    if (cfg.filter) corpus = filter_corpus(corpus, planes);
    if (corpus.total_samples() == 0)
        throw DataError("extraction produced no samples (images too small?)");

    ExtractOutputs out;
    for (const SizeDataset& d : corpus.by_size) {
        if (d.samples.empty()) continue;
        const std::string path =
            out_dir + "/dataset_n" + std::to_string(d.block_size) + ".dcds";
        write_dataset(d.samples, corpus.groups, d.block_size, d.ref_lines, path);
        out.dataset_paths.push_back(path);
    }
    out.manifest_path = write_manifest(cfg, "extract", paths, out.dataset_paths, out_dir);
    return out;
}

namespace {

Corpus load_corpus(const std::vector<std::string>& dataset_paths) {
    if (dataset_paths.empty()) throw UsageError("no dataset files given");
    std::vector<DatasetFile> files;
    for (const std::string& p : dataset_paths) files.push_back(read_dataset(p));
    return merge_corpus(files);
}

}  // namespace

PretrainOutputs run_pretrain(const RunConfig& cfg,
                             const std::vector<std::string>& dataset_paths,
                             const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    const Corpus corpus = load_corpus(dataset_paths);
    const RecursiveConfig rc = cfg.recursive_config();
    TrainHistory history;
    NetBank root = pretrain_bank(corpus, rc, &history);

    PretrainOutputs out;
    out.banks_path = out_dir + "/banks.dcdb";
    save_banks_file({root}, out.banks_path);
    out.epochs_csv = out_dir + "/epochs.csv";
    write_epoch_csv(history, out.epochs_csv);
    out.manifest_path = write_manifest(cfg, "pretrain", dataset_paths,
                                       {out.banks_path, out.epochs_csv}, out_dir);
    return out;
}

SplitOutputs run_split(const RunConfig& cfg, const std::string& banks_in,
                       const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    const ClusterBanks banks = load_banks_file(banks_in);
    const ClusterBanks doubled =
        split_clusters(banks, cfg.kappa, mix_seed(cfg.seed, 0x5B17, banks.size()));
    SplitOutputs out;
    out.banks_path = out_dir + "/banks.dcdb";
    save_banks_file(doubled, out.banks_path);
    out.manifest_path =
        write_manifest(cfg, "split", {banks_in}, {out.banks_path}, out_dir);
    return out;
}

TrainOutputs run_train(const RunConfig& cfg, const std::string& banks_in,
                       const std::vector<std::string>& dataset_paths,
                       const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    const Corpus corpus = load_corpus(dataset_paths);
    ClusterBanks banks = load_banks_file(banks_in);
    const RecursiveResult res =
        recursive_train(corpus, std::move(banks), cfg.recursive_config());

    TrainOutputs out;
    out.banks_path = out_dir + "/banks.dcdb";
    save_banks_file(res.banks, out.banks_path);
    out.history_csv = out_dir + "/history.csv";
    write_history_csv(res.history, out.history_csv);
    out.epochs_csv = out_dir + "/epochs.csv";
    write_epoch_csv(res.history, out.epochs_csv);
    out.assignment_csv = out_dir + "/assignments.csv";
    write_assignment_csv(res.final_assignment, corpus, out.assignment_csv);

    std::vector<std::string> inputs = {banks_in};
    inputs.insert(inputs.end(), dataset_paths.begin(), dataset_paths.end());
    out.manifest_path = write_manifest(
        cfg, "train", inputs,
        {out.banks_path, out.history_csv, out.epochs_csv, out.assignment_csv}, out_dir);
    return out;
}

EvaluateOutputs run_evaluate(const RunConfig& cfg, const std::string& banks_path,
                             const std::string& image_path, const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    const ClusterBanks banks = load_banks_file(banks_path);
    Plane plane = load_plane(image_path);
    plane.image_id = 0;

    int block = cfg.eval_block;
    if (block == 0) {
        block = banks[0].nets.front().block_size;
        for (const Network& n : banks[0].nets) block = std::min(block, n.block_size);
    }

    CostModel cost;
    cost.lambda = cfg.lambda();
    cost.flag_bits = cfg.flag_bits;
    cost.baseline_mode_bits = cfg.baseline_mode_bits;
    cost.dcdnn_modes = static_cast<int>(banks.size());

    const auto decisions =
        evaluate_plane(plane, banks, cost, block, cfg.value_scale, cfg.threads);

    EvaluateOutputs out;
    out.decisions_csv = out_dir + "/decisions.csv";
    write_decisions_csv(decisions, out.decisions_csv);
    out.report_dir = out_dir + "/report";
    emit_report(TrainHistory{}, decisions, cost.dcdnn_modes, plane.width, plane.height,
                out.report_dir);
    out.usage = usage_rate(decisions, plane.width, plane.height);
    out.manifest_path = write_manifest(
        cfg, "evaluate", {banks_path, image_path},
        {out.decisions_csv, out.report_dir + "/summary.json",
         out.report_dir + "/usage.csv", out.report_dir + "/mode_histogram.csv"},
        out_dir);
    return out;
}

EvaluateOutputs run_evaluate_dataset(const RunConfig& cfg, const std::string& banks_path,
                                     const std::string& dataset_path,
                                     const std::string& out_dir) {
    cfg.validate();
    ensure_dir(out_dir);
    const ClusterBanks banks = load_banks_file(banks_path);
    const DatasetFile file = read_dataset(dataset_path);

    CostModel cost;
    cost.lambda = cfg.lambda();
    cost.flag_bits = cfg.flag_bits;
    cost.baseline_mode_bits = cfg.baseline_mode_bits;
    cost.dcdnn_modes = static_cast<int>(banks.size());

    std::vector<ModeDecision> decisions;
    decisions.reserve(file.data.samples.size());
    for (const TrainSample& s : file.data.samples)
        decisions.push_back(decide_sample(s, file.data.block_size, file.data.ref_lines,
                                          banks, cost, cfg.value_scale));

    EvaluateOutputs out;
    out.decisions_csv = out_dir + "/decisions.csv";
    write_decisions_csv(decisions, out.decisions_csv);
    out.report_dir = out_dir + "/report";
    emit_report(TrainHistory{}, decisions, cost.dcdnn_modes, 0, 0, out.report_dir);
    double total = 0.0, chosen = 0.0;
    for (const ModeDecision& d : decisions) {
        const double area = static_cast<double>(d.origin.n) * d.origin.n;
        total += area;
        if (d.kind == ModeDecision::Kind::kDcdnn) chosen += area;
    }
    out.usage = total > 0.0 ? chosen / total : 0.0;
    out.manifest_path = write_manifest(
        cfg, "evaluate", {banks_path, dataset_path},
        {out.decisions_csv, out.report_dir + "/summary.json"}, out_dir);
    return out;
}

ReportOutputs run_report(const RunConfig& cfg, const std::string& history_csv,
                         const std::string& decisions_csv, const std::string& out_dir) {
    ensure_dir(out_dir);
    TrainHistory history;
    std::vector<ModeDecision> decisions;
    std::vector<std::string> inputs;
    if (!history_csv.empty()) {
        history = read_history_csv(history_csv);
        inputs.push_back(history_csv);
    }
    if (!decisions_csv.empty()) {
        decisions = read_decisions_csv(decisions_csv);
        inputs.push_back(decisions_csv);
    }
    int k = cfg.modes;
    for (const ModeDecision& d : decisions)
        if (d.kind == ModeDecision::Kind::kDcdnn) k = std::max(k, d.index + 1);

    ReportOutputs out;
    out.report_dir = out_dir;
    emit_report(history, decisions, k, 0, 0, out_dir);
    out.manifest_path = write_manifest(cfg, "report", inputs,
                                       {out_dir + "/summary.json"}, out_dir);
    return out;
}

PipelineOutputs run_full_pipeline(const RunConfig& cfg,
                                  const std::vector<std::string>& inputs,
                                  const std::string& work_dir) {
    ensure_dir(work_dir);
    PipelineOutputs out;
    out.extract = run_extract(cfg, inputs, work_dir + "/datasets");
    out.pretrain = run_pretrain(cfg, out.extract.dataset_paths, work_dir + "/pretrain");
    out.train = run_train(cfg, out.pretrain.banks_path, out.extract.dataset_paths,
                          work_dir + "/train");
    const auto images = expand_inputs(inputs);
    out.evaluate = run_evaluate(cfg, out.train.banks_path, images.front(),
                                work_dir + "/eval");
    return out;
}

namespace {

double selftest_gradient_error(const Network& net_in, const Vec& input,
                               const Vec& target) {
    Network net = net_in;
    ForwardCache cache;
    forward(net, input, &cache);
    const Gradients grads = backward(net, cache, target, 1e-3);

    auto loss = [&]() {
        TrainSample s;
        s.ref_vector = input;
        s.target = target;
        return batch_loss(net, std::span<const TrainSample>(&s, 1), 1e-3);
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto probe = [&](double* value, double analytic) {
            const double saved = *value;
            *value = saved + h;
            const double up = loss();
            *value = saved - h;
            const double dn = loss();
            *value = saved;
            const double fd = (up - dn) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
            worst = std::max(worst, std::abs(fd - analytic) / denom);
        };
        auto& lp = net.layers[l];
        for (std::size_t i = 0; i < lp.weights.size(); ++i)
            probe(&lp.weights.data[i], grads.layers[l].weights.data[i]);
        for (std::size_t i = 0; i < lp.bias.size(); ++i)
            probe(&lp.bias[i], grads.layers[l].bias[i]);
        for (std::size_t i = 0; i < lp.prelu_slopes.size(); ++i)
            probe(&lp.prelu_slopes[i], grads.layers[l].prelu_slopes[i]);
    }
    return worst;
}

}  // namespace

bool run_selftest(std::ostream& out) {
    bool ok = true;
    auto report = [&](const std::string& name, bool pass, const std::string& detail) {
        out << (pass ? "ok" : "FAIL") << ": " << name;
        if (!detail.empty()) out << " (" << detail << ")";
        out << "\n";
        if (!pass) ok = false;
    };

    {
        Rng rng(41);
        double worst = 0.0;
        int done = 0;
        std::uint64_t seed = 9000;
        while (done < 5) {
            const Network net = make_network({9, 8, 6}, seed++);
            Vec input(9), target(6);
            for (double& v : input) v = rng.gaussian();
            for (double& v : target) v = rng.gaussian();
            ForwardCache cache;
            forward(net, input, &cache);
            bool near_kink = false;
            for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
                for (double p : cache.pre[l])
                    if (std::abs(p) < 1e-3) near_kink = true;
            if (near_kink) continue;
            worst = std::max(worst, selftest_gradient_error(net, input, target));
            ++done;
        }
        report("gradient check vs finite differences", worst <= 1e-4,
               "max rel err " + std::to_string(worst));
    }

    {
        double worst = 0.0;
        bool zero_exact = true;
        for (int t = 0; t < 10; ++t) {
            const Network parent = init_network(4, 8, 16, 3, 500 + t);
            SplitConfig sc;
            sc.kappa = 0.01 + 0.01 * t;
            sc.seed = 700 + t;
            auto [a, b] = split_network(parent, sc);
            for (std::size_t l = 0; l < parent.layers.size(); ++l)
                for (std::size_t i = 0; i < parent.layers[l].weights.size(); ++i) {
                    const double p = parent.layers[l].weights.data[i];
                    const double mid =
                        0.5 * (a.layers[l].weights.data[i] + b.layers[l].weights.data[i]);
                    worst = std::max(worst,
                                     std::abs(mid - p) / std::max(1.0, std::abs(p)));
                }
            SplitConfig zc;
            zc.kappa = 0.0;
            zc.seed = 900 + t;
            auto [za, zb] = split_network(parent, zc);
            if (!(za == zb)) zero_exact = false;
            for (std::size_t l = 0; l < parent.layers.size(); ++l)
                if (za.layers[l].weights.data != parent.layers[l].weights.data ||
                    za.layers[l].bias != parent.layers[l].bias ||
                    za.layers[l].prelu_slopes != parent.layers[l].prelu_slopes)
                    zero_exact = false;
        }
        report("split mirror symmetry", worst <= 1e-12,
               "max rel err " + std::to_string(worst));
        report("split with kappa 0 is bit-exact", zero_exact, "");
    }

    {
        const Network net = make_network({12, 10, 8}, 77);
        Rng rng(7);
        Vec input(12);
        for (double& v : input) v = rng.gaussian();
        report("forward determinism", forward(net, input) == forward(net, input), "");
    }

    {
        Corpus corpus;
        SizeDataset d;
        d.block_size = 4;
        d.ref_lines = 2;
        Rng rng(11);
        for (int i = 0; i < 50; ++i) {
            TrainSample s;
            s.ref_vector.resize(reference_vector_length(4, 2));
            s.target.resize(16);
            for (double& v : s.ref_vector) v = 30.0 * rng.gaussian();
            for (double& v : s.target) v = 30.0 * rng.gaussian();
            PredictionGroup g;
            g.group_id = static_cast<std::uint32_t>(i);
            g.members.push_back({4, static_cast<std::uint32_t>(d.samples.size())});
            d.samples.push_back(std::move(s));
            corpus.groups.push_back(std::move(g));
        }
        corpus.by_size.push_back(std::move(d));
        ClusterBanks banks;
        for (int c = 0; c < 3; ++c) {
            NetBank b;
            b.nets.push_back(init_network(4, 2, 10, 2, 60 + c));
            banks.push_back(std::move(b));
        }
        const Assignment asg = partition(corpus, banks);
        bool argmin_ok = true;
        for (std::size_t g = 0; g < corpus.groups.size(); ++g) {
            for (std::uint32_t c = 0; c < banks.size(); ++c)
                if (group_loss(corpus.groups[g], banks[c], corpus) <
                    group_loss(corpus.groups[g], banks[asg.cluster_of[g]], corpus))
                    argmin_ok = false;
        }
        report("partition assigns each group to its argmin cluster", argmin_ok, "");
    }

    return ok;
}

}  // namespace dcdnn
