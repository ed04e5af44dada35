#include "dcdnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "binio.hpp"
#include "dcdnn/errors.hpp"
#include "dcdnn/split.hpp"

namespace dcdnn {

// --- schedule ----------------------------------------------------------------

void Schedule::validate() const {
    if (epochs < 0) throw ConfigError("schedule: epochs must be >= 0");
    if (step < 1) throw ConfigError("schedule: step must be >= 1");
    if (!(lr_floor > 0.0) || !(lr_start >= lr_floor))
        throw ConfigError("schedule: need lr_start >= lr_floor > 0");
}

double lr_at(const Schedule& schedule, int epoch) {
    schedule.validate();
    if (epoch < 0 || epoch >= schedule.epochs)
        throw UsageError("lr_at: epoch " + std::to_string(epoch) +
                         " outside [0, " + std::to_string(schedule.epochs) + ")");
    const int stages = (schedule.epochs + schedule.step - 1) / schedule.step;
    if (stages <= 1) return schedule.lr_start;
    const double ratio = std::pow(schedule.lr_floor / schedule.lr_start,
                                  1.0 / static_cast<double>(stages - 1));
    const int stage = epoch / schedule.step;
    return schedule.lr_start * std::pow(ratio, stage);
}

// --- banks ---------------------------------------------------------------------

const Network& NetBank::net_for(int block_size) const {
    if (const Network* n = try_net_for(block_size)) return *n;
    throw ConfigError("no network for block size " + std::to_string(block_size));
}

Network& NetBank::net_for(int block_size) {
    for (Network& n : nets)
        if (n.block_size == block_size) return n;
    throw ConfigError("no network for block size " + std::to_string(block_size));
}

const Network* NetBank::try_net_for(int block_size) const {
    for (const Network& n : nets)
        if (n.block_size == block_size) return &n;
    return nullptr;
}

// --- losses and partition --------------------------------------------------------

namespace {

Vec scaled(const Vec& v, double s) {
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * s;
    return out;
}

double sample_sse(const Network& net, const TrainSample& s, double value_scale) {
    const Vec out = forward(net, scaled(s.ref_vector, value_scale));
    double sse = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = out[i] - s.target[i] * value_scale;
        sse += r * r;
    }
    return sse;
}

}  // namespace

double group_loss(const PredictionGroup& group, const NetBank& bank,
                  const Corpus& corpus, double value_scale) {
    double total = 0.0;
    for (const SampleRef& m : group.members)
        total += sample_sse(bank.net_for(m.block_size), corpus.sample(m), value_scale);
    return total;
}

Assignment partition(const Corpus& corpus, const ClusterBanks& banks,
                     const Assignment* prev, double value_scale, int threads) {
    if (banks.empty()) throw UsageError("partition: no cluster banks");
    if (corpus.groups.empty()) throw UsageError("partition: empty dataset");

    Assignment out;
    out.round = prev ? prev->round + 1 : 1;
    out.cluster_of.assign(corpus.groups.size(), 0);

    auto assign_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t g = begin; g < end; ++g) {
            std::uint32_t best = 0;
            double best_loss = group_loss(corpus.groups[g], banks[0], corpus, value_scale);
            for (std::uint32_t c = 1; c < banks.size(); ++c) {
                const double loss =
                    group_loss(corpus.groups[g], banks[c], corpus, value_scale);
                if (loss < best_loss) {
                    best = c;
                    best_loss = loss;
                }
            }
            out.cluster_of[g] = best;
        }
    };

    const std::size_t count = corpus.groups.size();
    if (threads <= 1 || count < 64) {
        assign_range(0, count);
    } else {
        const std::size_t workers = std::min<std::size_t>(threads, count);
        std::vector<std::thread> pool;
        const std::size_t chunk = (count + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(begin + chunk, count);
            if (begin >= end) break;
            pool.emplace_back(assign_range, begin, end);
        }
        for (auto& t : pool) t.join();
    }
    return out;
}

std::vector<std::optional<double>> retention(const Assignment& prev,
                                             const Assignment& next) {
    if (prev.cluster_of.size() != next.cluster_of.size())
        throw UsageError("retention: assignments cover different groups");
    std::uint32_t k = 0;
    for (std::uint32_t c : prev.cluster_of) k = std::max(k, c + 1);
    for (std::uint32_t c : next.cluster_of) k = std::max(k, c + 1);

    std::vector<std::size_t> prev_count(k, 0);
    std::vector<std::size_t> stay_count(k, 0);
    for (std::size_t g = 0; g < prev.cluster_of.size(); ++g) {
        prev_count[prev.cluster_of[g]]++;
        if (prev.cluster_of[g] == next.cluster_of[g]) stay_count[prev.cluster_of[g]]++;
    }
    std::vector<std::optional<double>> rates(k);
    for (std::uint32_t c = 0; c < k; ++c)
        if (prev_count[c] > 0)
            rates[c] = static_cast<double>(stay_count[c]) /
                       static_cast<double>(prev_count[c]);
    return rates;
}

double total_assigned_loss(const Corpus& corpus, const ClusterBanks& banks,
                           const Assignment& assignment, double value_scale) {
    if (assignment.cluster_of.size() != corpus.groups.size())
        throw UsageError("total_assigned_loss: assignment does not match corpus");
    double total = 0.0;
    for (std::size_t g = 0; g < corpus.groups.size(); ++g)
        total += group_loss(corpus.groups[g], banks[assignment.cluster_of[g]], corpus,
                            value_scale);
    return total;
}

// --- training ----------------------------------------------------------------------

void train_cluster(NetBank& bank, const std::vector<SampleRef>& members,
                   const Corpus& corpus, const TrainOptions& opts,
                   TrainHistory* history, int round, int cluster) {
    opts.schedule.validate();
    if (opts.schedule.epochs == 0) return;
    if (members.empty()) throw UsageError("train_cluster: no member samples");

    for (Network& net : bank.nets) {
        // gather and pre-scale this size's members once
        std::vector<TrainSample> data;
        for (const SampleRef& m : members) {
            if (m.block_size != net.block_size) continue;
            const TrainSample& src = corpus.sample(m);
            TrainSample s;
            s.ref_vector = scaled(src.ref_vector, opts.value_scale);
            s.target = scaled(src.target, opts.value_scale);
            data.push_back(std::move(s));
        }
        if (data.empty()) continue;

        const int batch_size = net.block_size >= 16 ? opts.batch_large : opts.batch_small;
        OptimizerState state = make_optimizer(net, opts.momentum, opts.weight_decay);
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        std::vector<TrainSample> batch;

        for (int epoch = 0; epoch < opts.schedule.epochs; ++epoch) {
            const double lr = lr_at(opts.schedule, epoch);
            Rng rng(mix_seed(opts.shuffle_seed,
                             (static_cast<std::uint64_t>(round) << 20) ^
                                 (static_cast<std::uint64_t>(cluster) << 10) ^
                                 static_cast<std::uint64_t>(net.block_size),
                             static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.below(static_cast<std::uint32_t>(i))]);

            double loss_sum = 0.0;
            std::size_t seen = 0;
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(batch_size)) {
                const std::size_t end =
                    std::min(order.size(), start + static_cast<std::size_t>(batch_size));
                batch.clear();
                for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
                loss_sum += batch_loss(net, batch, opts.weight_decay) *
                            static_cast<double>(batch.size());
                seen += batch.size();
                const Gradients g = batch_gradient(net, batch, opts.weight_decay);
                sgd_step(net, g, state, lr);
            }
            if (history)
                history->epochs.push_back({round, cluster, net.block_size, epoch, lr,
                                           loss_sum / static_cast<double>(seen)});
        }
    }
}

// --- recursive loop -----------------------------------------------------------------

namespace {

std::vector<std::vector<SampleRef>> members_by_cluster(const Corpus& corpus,
                                                       const Assignment& asg,
                                                       std::size_t k) {
    std::vector<std::vector<SampleRef>> out(k);
    for (std::size_t g = 0; g < corpus.groups.size(); ++g)
        for (const SampleRef& m : corpus.groups[g].members)
            out[asg.cluster_of[g]].push_back(m);
    return out;
}

std::vector<std::optional<double>> cluster_mean_losses(const Corpus& corpus,
                                                       const ClusterBanks& banks,
                                                       const Assignment& asg,
                                                       double value_scale) {
    std::vector<double> sum(banks.size(), 0.0);
    std::vector<std::size_t> count(banks.size(), 0);
    for (std::size_t g = 0; g < corpus.groups.size(); ++g) {
        const std::uint32_t c = asg.cluster_of[g];
        sum[c] += group_loss(corpus.groups[g], banks[c], corpus, value_scale);
        count[c] += 1;
    }
    std::vector<std::optional<double>> out(banks.size());
    for (std::size_t c = 0; c < banks.size(); ++c)
        if (count[c] > 0) out[c] = sum[c] / static_cast<double>(count[c]);
    return out;
}

// LBG-style empty-cell repair: give the empty cluster a freshly perturbed
// copy of the currently best cluster's bank, then re-partition.
bool respawn_empty_clusters(const Corpus& corpus, ClusterBanks& banks, Assignment& asg,
                            const RecursiveConfig& cfg, int round,
                            TrainHistory& history) {
    bool changed = false;
    for (int attempt = 0; attempt < 3; ++attempt) {
        std::vector<std::size_t> count(banks.size(), 0);
        for (std::uint32_t c : asg.cluster_of) count[c]++;
        std::vector<std::size_t> empty;
        for (std::size_t c = 0; c < banks.size(); ++c)
            if (count[c] == 0) empty.push_back(c);
        if (empty.empty()) return changed;

        const auto losses = cluster_mean_losses(corpus, banks, asg, cfg.value_scale);
        std::size_t best = banks.size();
        for (std::size_t c = 0; c < banks.size(); ++c) {
            if (!losses[c]) continue;
            if (best == banks.size() || *losses[c] < *losses[best]) best = c;
        }
        if (best == banks.size()) return changed;  // nothing to respawn from

        for (std::size_t e : empty) {
            NetBank fresh;
            for (const Network& net : banks[best].nets) {
                SplitConfig sc;
                sc.kappa = cfg.kappa;
                sc.seed = mix_seed(cfg.seed, 0xE5E5, static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(e) * 64 +
                                       static_cast<std::uint64_t>(net.block_size));
                fresh.nets.push_back(split_network(net, sc).first);
            }
            banks[e] = std::move(fresh);
            history.events.push_back("round " + std::to_string(round) +
                                     ": respawned empty cluster " + std::to_string(e) +
                                     " from cluster " + std::to_string(best));
            changed = true;
        }
        asg = partition(corpus, banks, nullptr, cfg.value_scale, cfg.threads);
        asg.round = round;
    }
    return changed;
}

}  // namespace

NetBank pretrain_bank(const Corpus& corpus, const RecursiveConfig& cfg,
                      TrainHistory* history) {
    if (corpus.by_size.empty()) throw UsageError("pretrain: empty corpus");
    NetBank bank;
    std::vector<SampleRef> everything;
    for (const SizeDataset& d : corpus.by_size) {
        auto it = cfg.hidden_dims.find(d.block_size);
        if (it == cfg.hidden_dims.end())
            throw ConfigError("no hidden dim configured for block size " +
                              std::to_string(d.block_size));
        bank.nets.push_back(init_network(d.block_size, d.ref_lines, it->second,
                                         cfg.depth,
                                         mix_seed(cfg.seed, 0x1417,
                                                  static_cast<std::uint64_t>(d.block_size)),
                                         cfg.init));
        for (std::uint32_t i = 0; i < d.samples.size(); ++i)
            everything.push_back({d.block_size, i});
    }
    TrainOptions opts;
    opts.schedule = cfg.pretrain_schedule;
    opts.batch_small = cfg.batch_small;
    opts.batch_large = cfg.batch_large;
    opts.momentum = cfg.momentum;
    opts.weight_decay = cfg.weight_decay;
    opts.value_scale = cfg.value_scale;
    opts.shuffle_seed = mix_seed(cfg.seed, 0x5175, 0);
    train_cluster(bank, everything, corpus, opts, history, /*round=*/0, /*cluster=*/0);
    return bank;
}

ClusterBanks split_clusters(const ClusterBanks& banks, double kappa,
                            std::uint64_t seed) {
    if (banks.empty()) throw UsageError("split_clusters: no banks");
    ClusterBanks out;
    out.resize(banks.size() * 2);
    for (std::size_t i = 0; i < banks.size(); ++i) {
        for (const Network& net : banks[i].nets) {
            SplitConfig sc;
            sc.kappa = kappa;
            sc.seed = mix_seed(seed, i, static_cast<std::uint64_t>(net.block_size));
            auto [a, b] = split_network(net, sc);
            out[2 * i].nets.push_back(std::move(a));
            out[2 * i + 1].nets.push_back(std::move(b));
        }
    }
    return out;
}

RecursiveResult recursive_train(const Corpus& corpus, ClusterBanks banks,
                                const RecursiveConfig& cfg, TrainHistory history) {
    if (banks.empty()) throw UsageError("recursive_train: no initial banks");
    const int k = cfg.target_modes;
    if (k < 1 || (k & (k - 1)) != 0)
        throw ConfigError("target mode count must be a power of two");
    if (static_cast<int>(banks.size()) > k)
        throw ConfigError("already more banks than target modes");
    if (k % static_cast<int>(banks.size()) != 0)
        throw ConfigError("target modes must be a multiple of the current bank count");

    TrainOptions opts;
    opts.schedule = cfg.recursive_schedule;
    opts.batch_small = cfg.batch_small;
    opts.batch_large = cfg.batch_large;
    opts.momentum = cfg.momentum;
    opts.weight_decay = cfg.weight_decay;
    opts.value_scale = cfg.value_scale;

    int round = 0;
    for (const auto& r : history.rounds) round = std::max(round, r.round);

    Assignment prev;
    bool have_prev = false;

    auto run_stage = [&]() {
        have_prev = false;  // cluster identities changed across the split
        for (int r = 0; r < cfg.rounds_per_stage; ++r) {
            ++round;
            Assignment asg = partition(corpus, banks, have_prev ? &prev : nullptr,
                                       cfg.value_scale, cfg.threads);
            asg.round = round;
            respawn_empty_clusters(corpus, banks, asg, cfg, round, history);

            const auto members = members_by_cluster(corpus, asg, banks.size());
            for (std::size_t c = 0; c < banks.size(); ++c) {
                if (members[c].empty()) continue;
                opts.shuffle_seed = mix_seed(cfg.seed, 0x7121, banks.size());
                train_cluster(banks[c], members[c], corpus, opts, &history, round,
                              static_cast<int>(c));
            }

            TrainHistory::RoundStat stat;
            stat.round = round;
            stat.bank_count = static_cast<int>(banks.size());
            stat.mean_loss = cluster_mean_losses(corpus, banks, asg, cfg.value_scale);
            if (have_prev) stat.retention = retention(prev, asg);
            history.rounds.push_back(stat);

            prev = asg;
            have_prev = true;

            if (!stat.retention.empty()) {
                double min_rate = 1.0;
                bool any = false;
                for (const auto& rate : stat.retention)
                    if (rate) {
                        min_rate = std::min(min_rate, *rate);
                        any = true;
                    }
                if (any && min_rate >= cfg.stop_threshold) {
                    history.events.push_back(
                        "round " + std::to_string(round) +
                        ": retention reached " + std::to_string(min_rate) +
                        ", stage stopped early");
                    break;
                }
            }
        }
    };

    bool split_any = false;
    while (static_cast<int>(banks.size()) < k) {
        banks = split_clusters(banks, cfg.kappa,
                               mix_seed(cfg.seed, 0x5B17, banks.size()));
        split_any = true;
        run_stage();
    }
    // a bank handed over already split (CLI split + train) still gets its
    // clustering rounds
    if (!split_any && k > 1) run_stage();

    RecursiveResult result;
    result.final_assignment =
        partition(corpus, banks, have_prev ? &prev : nullptr, cfg.value_scale,
                  cfg.threads);
    result.banks = std::move(banks);
    result.history = std::move(history);
    return result;
}

RecursiveResult run_recursive(const Corpus& corpus, const RecursiveConfig& cfg) {
    const int k = cfg.target_modes;
    if (k < 1 || (k & (k - 1)) != 0)
        throw ConfigError("target mode count must be a power of two");
    TrainHistory history;
    NetBank root = pretrain_bank(corpus, cfg, &history);
    ClusterBanks banks;
    banks.push_back(std::move(root));
    if (k == 1) {
        RecursiveResult result;
        result.final_assignment = partition(corpus, banks, nullptr, cfg.value_scale,
                                            cfg.threads);
        result.banks = std::move(banks);
        result.history = std::move(history);
        return result;
    }
    return recursive_train(corpus, std::move(banks), cfg, std::move(history));
}

// --- CSV and bank files ------------------------------------------------------------

namespace {

std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "round,cluster,mean_loss,retention\n";
    for (const auto& r : history.rounds)
        for (std::size_t c = 0; c < r.mean_loss.size(); ++c) {
            f << r.round << "," << c << ",";
            if (r.mean_loss[c]) f << format_g6(*r.mean_loss[c]);
            f << ",";
            if (c < r.retention.size() && r.retention[c])
                f << format_g6(*r.retention[c]);
            f << "\n";
        }
    if (!f) throw IoError("write failed: " + path);
}

void write_epoch_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "round,cluster,block_size,epoch,lr,mean_loss\n";
    for (const auto& e : history.epochs)
        f << e.round << "," << e.cluster << "," << e.block_size << "," << e.epoch << ","
          << format_g6(e.lr) << "," << format_g6(e.mean_loss) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

void write_assignment_csv(const Assignment& assignment, const Corpus& corpus,
                          const std::string& path) {
    if (assignment.cluster_of.size() != corpus.groups.size())
        throw UsageError("write_assignment_csv: assignment does not match corpus");
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "group_id,cluster\n";
    for (std::size_t g = 0; g < corpus.groups.size(); ++g)
        f << corpus.groups[g].group_id << "," << assignment.cluster_of[g] << "\n";
    if (!f) throw IoError("write failed: " + path);
}

namespace {
constexpr char kBankMagic[4] = {'D', 'C', 'D', 'B'};
}

void save_banks_file(const ClusterBanks& banks, const std::string& path) {
    if (banks.empty()) throw UsageError("save_banks_file: no banks");
    const std::size_t per = banks.front().nets.size();
    for (const NetBank& b : banks)
        if (b.nets.size() != per)
            throw UsageError("save_banks_file: ragged cluster banks");

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kBankMagic, kBankMagic + 4);
    binio::put_u32(out, kBankVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(banks.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(per));
    for (const NetBank& b : banks)
        for (const Network& net : b.nets) {
            const auto model = save_model(net);
            binio::put_u64(out, model.size());
            out.insert(out.end(), model.begin(), model.end());
        }
    binio::write_file(path, out);
}

ClusterBanks load_banks_file(const std::string& path) {
    const auto buf = binio::read_file(path);
    binio::Reader rd{buf, 0, path};
    rd.need(4);
    if (std::memcmp(buf.data(), kBankMagic, 4) != 0)
        throw FormatError("not a bank file (bad magic): " + path);
    rd.pos = 4;
    const std::uint32_t version = rd.u32();
    if (version != kBankVersion)
        throw FormatError("unsupported bank version " + std::to_string(version) + ": " +
                          path);
    const std::uint32_t clusters = rd.u32();
    const std::uint32_t per = rd.u32();
    if (clusters == 0 || per == 0) throw FormatError("empty bank file: " + path);
    ClusterBanks banks(clusters);
    for (std::uint32_t c = 0; c < clusters; ++c)
        for (std::uint32_t i = 0; i < per; ++i) {
            const std::uint64_t len = rd.u64();
            rd.need(len);
            banks[c].nets.push_back(
                load_model(std::span<const std::uint8_t>(buf.data() + rd.pos, len)));
            rd.pos += len;
        }
    if (rd.pos != buf.size())
        throw FormatError("trailing bytes after bank payload: " + path);
    return banks;
}

}  // namespace dcdnn
