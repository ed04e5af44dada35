#include "dcdnn/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "dcdnn/errors.hpp"

#include "json.hpp"

namespace dcdnn {

double CostModel::dcdnn_mode_bits() const { return std::log2(dcdnn_modes); }

void CostModel::validate() const {
    if (lambda < 0.0) throw ConfigError("cost model: lambda must be >= 0");
    if (flag_bits < 0.0 || baseline_mode_bits < 0.0)
        throw ConfigError("cost model: bit costs must be >= 0");
    if (dcdnn_modes < 1) throw ConfigError("cost model: need at least one DCDNN mode");
}

double lambda_for_qp(int qp) {
    return 0.85 * std::pow(2.0, (qp - 12) / 3.0);
}

Vec dcdnn_predict_block(const Network& net, const TrainSample& sample,
                        double value_scale) {
    Vec in(sample.ref_vector.size());
    for (std::size_t i = 0; i < in.size(); ++i)
        in[i] = sample.ref_vector[i] * value_scale;
    Vec out = forward(net, in);
    for (double& v : out)
        v = std::clamp(v / value_scale + sample.ref_mean, 0.0, 255.0);
    return out;
}

namespace {

double block_sse(const Vec& a, const Vec& b) {
    double sse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = a[i] - b[i];
        sse += r * r;
    }
    return sse;
}

Vec plane_block(const Plane& plane, int x, int y, int n) {
    Vec block(static_cast<std::size_t>(n) * n);
    for (int by = 0; by < n; ++by)
        for (int bx = 0; bx < n; ++bx)
            block[static_cast<std::size_t>(by) * n + bx] =
                static_cast<double>(plane.at(x + bx, y + by));
    return block;
}

}  // namespace

ModeDecision decide(const Plane& plane, int x, int y, int block_size,
                    const ClusterBanks& banks, const CostModel& cost,
                    double value_scale) {
    cost.validate();
    if (banks.empty()) throw UsageError("decide: no cluster banks");
    if (static_cast<int>(banks.size()) != cost.dcdnn_modes)
        throw UsageError("decide: cost model K does not match the bank count");

    const Vec block = plane_block(plane, x, y, block_size);
    const RefLine refs = make_ref_line(plane, x, y, block_size);

    ModeDecision best;
    best.origin = BlockOrigin{static_cast<std::uint32_t>(plane.image_id),
                              static_cast<std::uint32_t>(x),
                              static_cast<std::uint32_t>(y),
                              static_cast<std::uint32_t>(block_size)};
    bool have = false;
    auto consider = [&](ModeDecision::Kind kind, int index, double sse, double bits) {
        const double c = sse + cost.lambda * bits;
        if (!have || c < best.cost) {
            best.kind = kind;
            best.index = index;
            best.sse = sse;
            best.bits = bits;
            best.cost = c;
            have = true;
        }
    };

    const double baseline_bits = cost.flag_bits + cost.baseline_mode_bits;
    for (int mode = 0; mode < kBaselineModes; ++mode)
        consider(ModeDecision::Kind::kBaseline, mode,
                 block_sse(block, predict_mode(mode, refs, block_size)), baseline_bits);

    const TrainSample sample = extract_sample(plane, x, y, block_size,
                                              banks[0].net_for(block_size).ref_lines);
    const double dcdnn_bits = cost.flag_bits + cost.dcdnn_mode_bits();
    for (std::size_t k = 0; k < banks.size(); ++k) {
        const Vec pred =
            dcdnn_predict_block(banks[k].net_for(block_size), sample, value_scale);
        consider(ModeDecision::Kind::kDcdnn, static_cast<int>(k),
                 block_sse(block, pred), dcdnn_bits);
    }
    return best;
}

RefLine ref_line_from_sample(const TrainSample& sample, int block_size, int ref_lines) {
    const int n = block_size;
    const int l = ref_lines;
    if (sample.ref_vector.size() != reference_vector_length(n, l))
        throw ShapeError("ref_line_from_sample: layout length mismatch");
    // region offsets in the canonical layout: corner block, above rows,
    // left columns (row-major each)
    auto corner_at = [&](int dx, int dy) {  // dx, dy in [-l, -1]
        return static_cast<std::size_t>((dy + l) * l + (dx + l));
    };
    auto above_at = [&](int dx, int dy) {  // dx in [0, 2n), dy in [-l, -1]
        return static_cast<std::size_t>(l * l + (dy + l) * 2 * n + dx);
    };
    auto left_at = [&](int dx, int dy) {  // dx in [-l, -1], dy in [0, 2n)
        return static_cast<std::size_t>(l * l + 2 * n * l + dy * l + (dx + l));
    };
    RefLine refs;
    refs.above.resize(2 * n + 1);
    refs.left.resize(2 * n + 1);
    refs.above[0] = sample.ref_vector[corner_at(-1, -1)] + sample.ref_mean;
    refs.left[0] = refs.above[0];
    for (int i = 0; i < 2 * n; ++i)
        refs.above[1 + i] = sample.ref_vector[above_at(i, -1)] + sample.ref_mean;
    for (int j = 0; j < 2 * n; ++j)
        refs.left[1 + j] = sample.ref_vector[left_at(-1, j)] + sample.ref_mean;
    return refs;
}

ModeDecision decide_sample(const TrainSample& sample, int block_size, int ref_lines,
                           const ClusterBanks& banks, const CostModel& cost,
                           double value_scale) {
    cost.validate();
    if (banks.empty()) throw UsageError("decide_sample: no cluster banks");
    if (static_cast<int>(banks.size()) != cost.dcdnn_modes)
        throw UsageError("decide_sample: cost model K does not match the bank count");

    Vec block(sample.target.size());
    for (std::size_t i = 0; i < block.size(); ++i)
        block[i] = sample.target[i] + sample.ref_mean;
    const RefLine refs = ref_line_from_sample(sample, block_size, ref_lines);

    ModeDecision best;
    best.origin = sample.origin;
    bool have = false;
    auto consider = [&](ModeDecision::Kind kind, int index, double sse, double bits) {
        const double c = sse + cost.lambda * bits;
        if (!have || c < best.cost) {
            best.kind = kind;
            best.index = index;
            best.sse = sse;
            best.bits = bits;
            best.cost = c;
            have = true;
        }
    };
    const double baseline_bits = cost.flag_bits + cost.baseline_mode_bits;
    for (int mode = 0; mode < kBaselineModes; ++mode)
        consider(ModeDecision::Kind::kBaseline, mode,
                 block_sse(block, predict_mode(mode, refs, block_size)), baseline_bits);
    const double dcdnn_bits = cost.flag_bits + cost.dcdnn_mode_bits();
    for (std::size_t k = 0; k < banks.size(); ++k)
        consider(ModeDecision::Kind::kDcdnn, static_cast<int>(k),
                 block_sse(block, dcdnn_predict_block(banks[k].net_for(block_size),
                                                      sample, value_scale)),
                 dcdnn_bits);
    return best;
}

std::vector<ModeDecision> evaluate_plane(const Plane& plane, const ClusterBanks& banks,
                                         const CostModel& cost, int block_size,
                                         double value_scale, int threads) {
    std::vector<std::pair<int, int>> origins;
    for (int y = 0; y + block_size <= plane.height; y += block_size)
        for (int x = 0; x + block_size <= plane.width; x += block_size)
            origins.emplace_back(x, y);

    std::vector<ModeDecision> decisions(origins.size());
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            decisions[i] = decide(plane, origins[i].first, origins[i].second,
                                  block_size, banks, cost, value_scale);
    };
    if (threads <= 1 || origins.size() < 16) {
        work(0, origins.size());
    } else {
        const std::size_t workers =
            std::min<std::size_t>(threads, origins.size());
        const std::size_t chunk = (origins.size() + workers - 1) / workers;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(begin + chunk, origins.size());
            if (begin >= end) break;
            pool.emplace_back(work, begin, end);
        }
        for (auto& t : pool) t.join();
    }
    return decisions;
}

double usage_rate(std::span<const ModeDecision> decisions, int width, int height) {
    if (width < 1 || height < 1) throw UsageError("usage_rate: empty frame");
    const double frame = static_cast<double>(width) * height;
    double total = 0.0;
    double dcdnn = 0.0;
    for (const ModeDecision& d : decisions) {
        const double area = static_cast<double>(d.origin.n) * d.origin.n;
        total += area;
        if (d.kind == ModeDecision::Kind::kDcdnn) dcdnn += area;
    }
    if (total > frame)
        throw DataError("usage_rate: decisions cover more area than the frame");
    return dcdnn / frame;
}

std::uint64_t ModeHistogram::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : baseline) t += c;
    for (std::uint64_t c : dcdnn) t += c;
    return t;
}

ModeHistogram mode_histogram(std::span<const ModeDecision> decisions, int dcdnn_modes) {
    if (dcdnn_modes < 0) throw UsageError("mode_histogram: negative mode count");
    ModeHistogram h;
    h.dcdnn.assign(static_cast<std::size_t>(dcdnn_modes), 0);
    for (const ModeDecision& d : decisions) {
        if (d.kind == ModeDecision::Kind::kBaseline) {
            if (d.index < 0 || d.index >= kBaselineModes)
                throw DataError("mode_histogram: baseline mode out of range");
            h.baseline[static_cast<std::size_t>(d.index)]++;
        } else {
            if (d.index < 0 || d.index >= dcdnn_modes)
                throw DataError("mode_histogram: DCDNN index out of range");
            h.dcdnn[static_cast<std::size_t>(d.index)]++;
        }
    }
    return h;
}

std::pair<double, double> mse_improvement(const Plane& plane, int x, int y,
                                          int block_size, const ClusterBanks& banks,
                                          double value_scale) {
    if (banks.empty()) throw UsageError("mse_improvement: no cluster banks");
    const auto [mode, baseline_sse] = best_baseline_for_block(plane, x, y, block_size);
    (void)mode;
    const Vec block = plane_block(plane, x, y, block_size);
    const TrainSample sample = extract_sample(plane, x, y, block_size,
                                              banks[0].net_for(block_size).ref_lines);
    double best = 0.0;
    for (std::size_t k = 0; k < banks.size(); ++k) {
        const double sse = block_sse(
            block, dcdnn_predict_block(banks[k].net_for(block_size), sample,
                                       value_scale));
        if (k == 0 || sse < best) best = sse;
    }
    return {baseline_sse, best};
}

// --- reports -------------------------------------------------------------------

namespace {

std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

const char* kind_name(ModeDecision::Kind k) {
    return k == ModeDecision::Kind::kBaseline ? "baseline" : "dcdnn";
}

}  // namespace

void write_decisions_csv(std::span<const ModeDecision> decisions,
                         const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "image_id,x,y,n,kind,index,sse,bits,cost\n";
    for (const ModeDecision& d : decisions)
        f << d.origin.image_id << "," << d.origin.x << "," << d.origin.y << ","
          << d.origin.n << "," << kind_name(d.kind) << "," << d.index << ","
          << format_g6(d.sse) << "," << format_g6(d.bits) << "," << format_g6(d.cost)
          << "\n";
    if (!f) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

std::vector<ModeDecision> read_decisions_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "image_id,x,y,n,kind,index,sse,bits,cost")
        throw FormatError("bad decisions CSV header: " + path);
    std::vector<ModeDecision> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 9) throw FormatError("bad decisions CSV row: " + path);
        ModeDecision d;
        d.origin.image_id = static_cast<std::uint32_t>(std::stoul(fields[0]));
        d.origin.x = static_cast<std::uint32_t>(std::stoul(fields[1]));
        d.origin.y = static_cast<std::uint32_t>(std::stoul(fields[2]));
        d.origin.n = static_cast<std::uint32_t>(std::stoul(fields[3]));
        if (fields[4] == "baseline")
            d.kind = ModeDecision::Kind::kBaseline;
        else if (fields[4] == "dcdnn")
            d.kind = ModeDecision::Kind::kDcdnn;
        else
            throw FormatError("bad decision kind '" + fields[4] + "': " + path);
        d.index = std::stoi(fields[5]);
        d.sse = std::stod(fields[6]);
        d.bits = std::stod(fields[7]);
        d.cost = std::stod(fields[8]);
        out.push_back(d);
    }
    return out;
}

TrainHistory read_history_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "round,cluster,mean_loss,retention")
        throw FormatError("bad history CSV header: " + path);
    TrainHistory h;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4) throw FormatError("bad history CSV row: " + path);
        const int round = std::stoi(fields[0]);
        const std::size_t cluster = std::stoul(fields[1]);
        if (h.rounds.empty() || h.rounds.back().round != round) {
            TrainHistory::RoundStat stat;
            stat.round = round;
            h.rounds.push_back(stat);
        }
        auto& stat = h.rounds.back();
        if (stat.mean_loss.size() <= cluster) {
            stat.mean_loss.resize(cluster + 1);
            stat.retention.resize(cluster + 1);
        }
        stat.bank_count = static_cast<int>(stat.mean_loss.size());
        if (!fields[2].empty()) stat.mean_loss[cluster] = std::stod(fields[2]);
        if (!fields[3].empty()) stat.retention[cluster] = std::stod(fields[3]);
    }
    return h;
}

void emit_report(const TrainHistory& history, std::span<const ModeDecision> decisions,
                 int dcdnn_modes, int frame_width, int frame_height,
                 const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    auto open = [&](const std::string& name) {
        std::ofstream f(out_dir + "/" + name);
        if (!f) throw IoError("cannot open for writing: " + out_dir + "/" + name);
        return f;
    };

    {
        auto f = open("loss_per_round.csv");
        f << "round,cluster,mean_loss\n";
        for (const auto& r : history.rounds)
            for (std::size_t c = 0; c < r.mean_loss.size(); ++c) {
                f << r.round << "," << c << ",";
                if (r.mean_loss[c]) f << format_g6(*r.mean_loss[c]);
                f << "\n";
            }
    }
    {
        auto f = open("retention.csv");
        f << "round,cluster,retention\n";
        for (const auto& r : history.rounds)
            for (std::size_t c = 0; c < r.retention.size(); ++c) {
                f << r.round << "," << c << ",";
                if (r.retention[c]) f << format_g6(*r.retention[c]);
                f << "\n";
            }
    }

    std::uint64_t dcdnn_pixels = 0;
    std::uint64_t total_pixels = 0;
    {
        auto f = open("usage.csv");
        f << "block_size,dcdnn_blocks,total_blocks,dcdnn_pixels,total_pixels\n";
        for (int n : {4, 8, 16, 32}) {
            std::uint64_t blocks = 0, chosen = 0;
            for (const ModeDecision& d : decisions) {
                if (static_cast<int>(d.origin.n) != n) continue;
                ++blocks;
                if (d.kind == ModeDecision::Kind::kDcdnn) ++chosen;
            }
            const std::uint64_t area = static_cast<std::uint64_t>(n) * n;
            dcdnn_pixels += chosen * area;
            total_pixels += blocks * area;
            if (blocks > 0)
                f << n << "," << chosen << "," << blocks << "," << chosen * area << ","
                  << blocks * area << "\n";
        }
    }

    const ModeHistogram hist = mode_histogram(decisions, dcdnn_modes);
    {
        auto f = open("mode_histogram.csv");
        f << "kind,index,count\n";
        if (!decisions.empty()) {
            for (int m = 0; m < kBaselineModes; ++m)
                f << "baseline," << m << "," << hist.baseline[m] << "\n";
            for (std::size_t k = 0; k < hist.dcdnn.size(); ++k)
                f << "dcdnn," << k << "," << hist.dcdnn[k] << "\n";
        }
    }

    nlohmann::ordered_json summary;
    summary["schema_version"] = kReportSchemaVersion;
    summary["rounds"] = history.rounds.size();
    summary["decisions"] = decisions.size();
    std::uint64_t dcdnn_count = 0;
    for (const ModeDecision& d : decisions)
        if (d.kind == ModeDecision::Kind::kDcdnn) ++dcdnn_count;
    summary["dcdnn_decisions"] = dcdnn_count;
    summary["baseline_decisions"] = decisions.size() - dcdnn_count;
    summary["histogram_total"] = hist.total();
    summary["dcdnn_pixels"] = dcdnn_pixels;
    summary["total_pixels"] = total_pixels;
    if (frame_width > 0 && frame_height > 0) {
        summary["frame_width"] = frame_width;
        summary["frame_height"] = frame_height;
        summary["usage_rate"] = usage_rate(decisions, frame_width, frame_height);
    } else {
        summary["usage_rate"] = nullptr;
    }
    if (!history.rounds.empty()) {
        nlohmann::ordered_json final_loss = nlohmann::ordered_json::array();
        for (const auto& ml : history.rounds.back().mean_loss) {
            if (ml)
                final_loss.push_back(*ml);
            else
                final_loss.push_back(nullptr);
        }
        summary["final_mean_loss"] = final_loss;
    }
    auto f = open("summary.json");
    f << summary.dump(2) << "\n";
}

}  // namespace dcdnn
