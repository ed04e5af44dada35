#include "dcdnn/split.hpp"

#include <cmath>

#include "dcdnn/errors.hpp"
#include "dcdnn/rng.hpp"

namespace dcdnn {

double noise_sigma(const LayerParams& layer, double kappa) {
    if (layer.weights.size() == 0) throw UsageError("noise_sigma: layer has no weights");
    if (!(kappa >= 0.0) || !std::isfinite(kappa))
        throw UsageError("noise_sigma: kappa must be finite and >= 0");
    double acc = 0.0;
    for (double w : layer.weights.data) acc += w * w;
    return kappa * std::sqrt(acc / static_cast<double>(layer.weights.size()));
}

std::pair<Network, Network> split_network(const Network& parent, const SplitConfig& cfg) {
    try {
        parent.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("split_network: invalid parent: ") + e.what());
    }

    Network a = parent;
    Network b = parent;
    a.seed_info = SeedInfo{kGeneratorId, cfg.seed};
    b.seed_info = SeedInfo{kGeneratorId, cfg.seed};

    Rng rng(cfg.seed);
    for (std::size_t l = 0; l < parent.layers.size(); ++l) {
        const LayerParams& pl = parent.layers[l];
        const double sigma = noise_sigma(pl, cfg.kappa);
        for (std::size_t i = 0; i < pl.weights.size(); ++i) {
            const double n = rng.gaussian(0.0, sigma);
            a.layers[l].weights.data[i] = pl.weights.data[i] + n;
            b.layers[l].weights.data[i] = pl.weights.data[i] - n;
        }
        if (cfg.perturb_bias) {
            for (std::size_t i = 0; i < pl.bias.size(); ++i) {
                const double n = rng.gaussian(0.0, sigma);
                a.layers[l].bias[i] = pl.bias[i] + n;
                b.layers[l].bias[i] = pl.bias[i] - n;
            }
        }
        if (cfg.perturb_slopes) {
            for (std::size_t i = 0; i < pl.prelu_slopes.size(); ++i) {
                const double n = rng.gaussian(0.0, sigma);
                a.layers[l].prelu_slopes[i] = pl.prelu_slopes[i] + n;
                b.layers[l].prelu_slopes[i] = pl.prelu_slopes[i] - n;
            }
        }
    }
    return {std::move(a), std::move(b)};
}

std::vector<Network> split_bank(const std::vector<Network>& bank, const SplitConfig& cfg) {
    if (bank.empty()) throw UsageError("split_bank: empty bank");
    for (const Network& net : bank)
        if (net.block_size != bank.front().block_size)
            throw UsageError("split_bank: mixed block sizes in one bank");

    std::vector<Network> out;
    out.reserve(bank.size() * 2);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        SplitConfig per = cfg;
        per.seed = mix_seed(cfg.seed, i);
        auto [a, b] = split_network(bank[i], per);
        out.push_back(std::move(a));
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace dcdnn
