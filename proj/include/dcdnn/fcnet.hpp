#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcdnn/mat.hpp"
#include "dcdnn/rng.hpp"
#include "dcdnn/sample.hpp"

namespace dcdnn {

// One affine layer. Hidden layers carry per-channel PReLU slopes; the final
// layer has none (prelu_slopes empty marks it).
struct LayerParams {
    Mat weights;       // [out_dim x in_dim]
    Vec bias;          // [out_dim]
    Vec prelu_slopes;  // [out_dim], empty on the final layer

    std::size_t in_dim() const { return weights.cols; }
    std::size_t out_dim() const { return weights.rows; }
    bool has_activation() const { return !prelu_slopes.empty(); }
};

struct SeedInfo {
    std::uint32_t generator_id = kGeneratorId;
    std::uint64_t seed = 0;
};

enum class WeightInit {
    kFanInScaled,  // sigma = 1/sqrt(fan_in); default, keeps deep stacks trainable
    kUnitStd,      // sigma = 1; the configuration reachable via --paper-init
};

// A full predictor for one block size: depth()+1 affine layers, PReLU after
// each but the last. block_size == 0 marks a free-form net used in tests and
// benchmarks; those skip the 4NL+L^2 input-dimension rule.
struct Network {
    int block_size = 0;  // N
    int ref_lines = 0;   // L
    std::vector<LayerParams> layers;
    SeedInfo seed_info;

    int depth() const { return static_cast<int>(layers.size()) - 1; }
    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
    std::size_t hidden_dim() const { return layers.empty() ? 0 : layers.front().out_dim(); }
    std::size_t parameter_count() const;

    // Checks dimension chaining, slope placement, finiteness, and (for
    // block_size > 0) the 4NL+L^2 / N^2 boundary dims. Throws ConfigError.
    void validate() const;

    bool operator==(const Network& other) const;
};

struct ForwardCache {
    Vec input;
    std::vector<Vec> pre;   // pre-activation, layers 0..D
    std::vector<Vec> post;  // post-activation, layers 0..D-1
};

struct LayerGrads {
    Mat weights;
    Vec bias;
    Vec prelu_slopes;
};

struct Gradients {
    std::vector<LayerGrads> layers;

    bool finite() const;
    // acc += scale * g
    void add_scaled(const Gradients& g, double scale);
    void scale(double s);
};

struct OptimizerState {
    double momentum = 0.9;
    double weight_decay = 1e-4;
    Gradients velocity;  // shapes mirror the network parameters
};

std::size_t reference_vector_length(int block_size, int ref_lines);

// Standard constructor: weights Gaussian from the seeded stream, bias 0,
// slopes 0.25. Two calls with the same arguments are bit-identical.
Network init_network(int block_size, int ref_lines, int hidden_dim, int depth,
                     std::uint64_t seed, WeightInit init = WeightInit::kFanInScaled);

// Free-form net over explicit layer dims (dims = {in, h1, ..., out}).
Network make_network(const std::vector<std::size_t>& dims, std::uint64_t seed,
                     WeightInit init = WeightInit::kFanInScaled);

// Per-component PReLU; x >= 0 passes through, negative inputs scale by a.
Vec prelu(const Vec& x, const Vec& slopes);

// Full inference pass. cache (optional) records what backward() needs.
Vec forward(const Network& net, const Vec& input, ForwardCache* cache = nullptr);

// Sum of squares over every weight, bias, and slope.
double param_l2_squared(const Network& net);

// (1/2M) sum_j ||F(x_j) - y_j||^2 + (weight_decay/2) ||Theta||^2
double batch_loss(const Network& net, std::span<const TrainSample> batch,
                  double weight_decay);

// Analytic gradient of the single-sample loss
//   (1/2) ||F(x) - y||^2 + (weight_decay/2) ||Theta||^2
// for the forward pass recorded in cache. Slope gradients flow only through
// negative pre-activations.
Gradients backward(const Network& net, const ForwardCache& cache, const Vec& target,
                   double weight_decay);

Gradients zero_gradients(const Network& net);

// Mean data-term gradient over the batch plus weight_decay * Theta once.
// Accumulation order is the batch order, so results are deterministic.
Gradients batch_gradient(const Network& net, std::span<const TrainSample> batch,
                         double weight_decay);

OptimizerState make_optimizer(const Network& net, double momentum = 0.9,
                              double weight_decay = 1e-4);

// Classic momentum: v <- momentum*v + g; theta <- theta - lr*v.
// Non-finite gradients abort with a TrainingError naming the tensor.
void sgd_step(Network& net, const Gradients& grads, OptimizerState& state, double lr);

// --- model serialization -------------------------------------------------
// Little-endian container: magic "DCDN", version, N, L, D, hidden_dim,
// element tag (f64 or f32), PRNG id + seed, then per layer the row-major
// weight matrix, bias, and (hidden layers only) slopes.

enum class ElemType : std::uint32_t { kF64 = 0, kF32 = 1 };

inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> save_model(const Network& net, ElemType elem = ElemType::kF64);
Network load_model(std::span<const std::uint8_t> bytes);
void save_model_file(const Network& net, const std::string& path,
                     ElemType elem = ElemType::kF64);
Network load_model_file(const std::string& path);

}  // namespace dcdnn
