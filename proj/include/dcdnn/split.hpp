#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dcdnn/fcnet.hpp"

namespace dcdnn {

// Controls the mirrored-noise split. The noise sigma for each layer is
// kappa times that layer's weight RMS, so the perturbation stays small
// relative to the mapping it displaces.
struct SplitConfig {
    double kappa = 0.02;
    std::uint64_t seed = 0;
    bool perturb_bias = false;
    bool perturb_slopes = false;
};

// sigma = kappa * RMS over all weight entries of the layer.
double noise_sigma(const LayerParams& layer, double kappa);

// Samples one noise tensor per layer and returns (parent + n, parent - n).
// Children keep the parent's structure; biases and slopes are copied unless
// the config flags say otherwise. Deterministic for a fixed seed.
std::pair<Network, Network> split_network(const Network& parent, const SplitConfig& cfg);

// Doubles a bank of same-size networks; children of bank[i] land at
// indices 2i and 2i+1. Per-network seeds derive from cfg.seed and i.
std::vector<Network> split_bank(const std::vector<Network>& bank, const SplitConfig& cfg);

}  // namespace dcdnn
