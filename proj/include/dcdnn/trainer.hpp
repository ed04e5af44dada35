#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcdnn/dataset.hpp"
#include "dcdnn/fcnet.hpp"

namespace dcdnn {

// Networks operate on 1/256-scaled zero-centered samples; training,
// partitioning, and inference all apply the same factor so the stored
// datasets stay in pixel units.
inline constexpr double kDefaultValueScale = 1.0 / 256.0;

// Piecewise-constant learning-rate schedule: ceil(epochs/step) stages, the
// first at lr_start, decaying by a fixed ratio so the last stage sits at
// lr_floor.
struct Schedule {
    int epochs = 0;
    double lr_start = 0.1;
    double lr_floor = 1e-4;
    int step = 10;

    void validate() const;
};

double lr_at(const Schedule& schedule, int epoch);

// One cluster's predictors: one network per block size, ascending.
struct NetBank {
    std::vector<Network> nets;

    const Network& net_for(int block_size) const;
    Network& net_for(int block_size);
    const Network* try_net_for(int block_size) const;
};

using ClusterBanks = std::vector<NetBank>;

// group id (by position in corpus.groups) -> cluster index.
struct Assignment {
    std::vector<std::uint32_t> cluster_of;
    int round = 0;
};

struct TrainHistory {
    struct RoundStat {
        int round = 0;       // contiguous from 1 across stages
        int bank_count = 0;  // clusters active in this round
        std::vector<std::optional<double>> mean_loss;  // per cluster
        std::vector<std::optional<double>> retention;  // vs previous round
    };
    struct EpochStat {
        int round = 0;  // 0 marks pretraining
        int cluster = 0;
        int block_size = 0;
        int epoch = 0;
        double lr = 0.0;
        double mean_loss = 0.0;
    };
    std::vector<RoundStat> rounds;
    std::vector<EpochStat> epochs;
    std::vector<std::string> events;  // cluster respawns, early stops
};

// Summed squared error of the group's member TUs under the bank's nets,
// in the scaled zero-centered domain.
double group_loss(const PredictionGroup& group, const NetBank& bank,
                  const Corpus& corpus, double value_scale = kDefaultValueScale);

// Assigns every group to the cluster with the lowest group loss; ties go
// to the lowest cluster index. prev only advances the round counter.
Assignment partition(const Corpus& corpus, const ClusterBanks& banks,
                     const Assignment* prev = nullptr,
                     double value_scale = kDefaultValueScale, int threads = 1);

// Per-cluster fraction of groups that stayed put; clusters empty in prev
// report no value.
std::vector<std::optional<double>> retention(const Assignment& prev,
                                             const Assignment& next);

// Sum of group losses under the assigned clusters.
double total_assigned_loss(const Corpus& corpus, const ClusterBanks& banks,
                           const Assignment& assignment,
                           double value_scale = kDefaultValueScale);

struct TrainOptions {
    Schedule schedule;
    int batch_small = 128;  // 4x4 and 8x8
    int batch_large = 64;   // 16x16 and 32x32
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double value_scale = kDefaultValueScale;
    std::uint64_t shuffle_seed = 1;
};

// Shuffled mini-batch SGD over the member samples, one run per block size
// in the bank. Logs per-epoch mean loss into history when given.
void train_cluster(NetBank& bank, const std::vector<SampleRef>& members,
                   const Corpus& corpus, const TrainOptions& opts,
                   TrainHistory* history = nullptr, int round = 0, int cluster = 0);

struct RecursiveConfig {
    int target_modes = 2;  // K, power of two
    int rounds_per_stage = 8;
    double stop_threshold = 0.97;  // min per-cluster retention that ends a stage
    double kappa = 0.02;
    Schedule pretrain_schedule{40, 0.1, 1e-4, 10};
    Schedule recursive_schedule{30, 0.01, 1e-4, 10};
    int batch_small = 128;
    int batch_large = 64;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double value_scale = kDefaultValueScale;
    std::uint64_t seed = 1;
    int threads = 1;
    // network shape for pretraining
    int depth = 4;
    std::map<int, int> hidden_dims = {{4, 128}, {8, 256}, {16, 256}, {32, 512}};
    WeightInit init = WeightInit::kFanInScaled;
};

struct RecursiveResult {
    ClusterBanks banks;
    TrainHistory history;
    Assignment final_assignment;
};

// Fresh bank (one net per corpus block size) trained on the whole corpus.
NetBank pretrain_bank(const Corpus& corpus, const RecursiveConfig& cfg,
                      TrainHistory* history = nullptr);

// Doubles every cluster by the mirrored-noise split; children of cluster i
// land at 2i and 2i+1.
ClusterBanks split_clusters(const ClusterBanks& banks, double kappa,
                            std::uint64_t seed);

// The recursive loop starting from existing banks: split to double the
// cluster count, then alternate partition and per-cluster training until
// retention stabilizes or the round budget runs out; repeat until
// target_modes banks exist.
RecursiveResult recursive_train(const Corpus& corpus, ClusterBanks banks,
                                const RecursiveConfig& cfg,
                                TrainHistory history = {});

// Pretrain + recursive_train.
RecursiveResult run_recursive(const Corpus& corpus, const RecursiveConfig& cfg);

// CSV emitters: history as (round, cluster, mean_loss, retention), epoch
// curves as (round, cluster, block_size, epoch, lr, mean_loss), assignments
// as (group_id, cluster).
void write_history_csv(const TrainHistory& history, const std::string& path);
void write_epoch_csv(const TrainHistory& history, const std::string& path);
void write_assignment_csv(const Assignment& assignment, const Corpus& corpus,
                          const std::string& path);

// Bank container on disk: magic "DCDB", version, cluster count, nets per
// cluster, then embedded model records cluster-major.
inline constexpr std::uint32_t kBankVersion = 1;
void save_banks_file(const ClusterBanks& banks, const std::string& path);
ClusterBanks load_banks_file(const std::string& path);

}  // namespace dcdnn
