#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dcdnn/errors.hpp"
#include "dcdnn/rng.hpp"
#include "dcdnn/split.hpp"

using namespace dcdnn;

namespace {

Vec random_vec(Rng& rng, std::size_t n) {
    Vec v(n);
    for (double& x : v) x = rng.gaussian();
    return v;
}

double weight_rms_oracle(const LayerParams& l) {
    double acc = 0.0;
    std::size_t n = 0;
    for (double w : l.weights.data) {
        acc += w * w;
        ++n;
    }
    return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace

TEST_CASE("noise_sigma basics") {
    LayerParams l;
    l.weights = Mat(2, 3, 2.0);
    l.bias.assign(2, 0.0);
    CHECK(noise_sigma(l, 0.0) == 0.0);
    CHECK(noise_sigma(l, 0.5) == doctest::Approx(1.0));

    LayerParams empty;
    CHECK_THROWS_AS(noise_sigma(empty, 0.1), UsageError);
}

TEST_CASE("noise_sigma matches the summed RMS oracle") {
    for (int trial = 0; trial < 10; ++trial) {
        const Network net = make_network({6, 5, 4}, 900 + trial);
        for (const auto& l : net.layers)
            CHECK(noise_sigma(l, 0.37) == doctest::Approx(0.37 * weight_rms_oracle(l)));
    }
}

TEST_CASE("split with kappa 0 copies the parent bit-exactly") {
    const Network parent = init_network(4, 8, 16, 2, 42);
    auto [a, b] = split_network(parent, SplitConfig{0.0, 7, false, false});
    for (std::size_t l = 0; l < parent.layers.size(); ++l) {
        CHECK(a.layers[l].weights.data == parent.layers[l].weights.data);
        CHECK(b.layers[l].weights.data == parent.layers[l].weights.data);
        CHECK(a.layers[l].bias == parent.layers[l].bias);
        CHECK(b.layers[l].prelu_slopes == parent.layers[l].prelu_slopes);
    }
}

TEST_CASE("children average back to the parent") {
    const Network parent = init_network(4, 8, 16, 3, 42);
    auto [a, b] = split_network(parent, SplitConfig{0.05, 13, false, false});
    for (std::size_t l = 0; l < parent.layers.size(); ++l)
        for (std::size_t i = 0; i < parent.layers[l].weights.size(); ++i) {
            const double p = parent.layers[l].weights.data[i];
            const double mid = 0.5 * (a.layers[l].weights.data[i] +
                                      b.layers[l].weights.data[i]);
            CHECK(std::abs(mid - p) <= 1e-12 * std::max(1.0, std::abs(p)));
        }
}

TEST_CASE("both children carry the same noise tensor") {
    const Network parent = init_network(4, 8, 16, 2, 3);
    auto [a, b] = split_network(parent, SplitConfig{0.03, 5, false, false});
    for (std::size_t l = 0; l < parent.layers.size(); ++l)
        for (std::size_t i = 0; i < parent.layers[l].weights.size(); ++i) {
            const double p = parent.layers[l].weights.data[i];
            const double da = a.layers[l].weights.data[i] - p;
            const double db = p - b.layers[l].weights.data[i];
            CHECK(std::abs(da - db) <= 1e-12 * std::max(1.0, std::abs(da)));
        }
}

TEST_CASE("children differ for positive kappa") {
    const Network parent = init_network(4, 8, 16, 2, 3);
    auto [a, b] = split_network(parent, SplitConfig{0.01, 5, false, false});
    bool any_differ = false;
    for (std::size_t l = 0; l < parent.layers.size(); ++l)
        if (a.layers[l].weights.data != b.layers[l].weights.data) any_differ = true;
    CHECK(any_differ);
}

TEST_CASE("biases and slopes are copied unless the flags are set") {
    const Network parent = init_network(4, 8, 16, 2, 3);
    auto [a, b] = split_network(parent, SplitConfig{0.05, 5, false, false});
    for (std::size_t l = 0; l < parent.layers.size(); ++l) {
        CHECK(a.layers[l].bias == parent.layers[l].bias);
        CHECK(b.layers[l].bias == parent.layers[l].bias);
        CHECK(a.layers[l].prelu_slopes == parent.layers[l].prelu_slopes);
    }

    Network noisy = parent;
    for (auto& l : noisy.layers)
        for (double& bv : l.bias) bv = 0.5;  // nonzero so noise is visible
    auto [c, d] = split_network(noisy, SplitConfig{0.05, 5, true, true});
    bool bias_differs = false;
    bool slope_differs = false;
    for (std::size_t l = 0; l < noisy.layers.size(); ++l) {
        if (c.layers[l].bias != noisy.layers[l].bias) bias_differs = true;
        if (!noisy.layers[l].prelu_slopes.empty() &&
            c.layers[l].prelu_slopes != noisy.layers[l].prelu_slopes)
            slope_differs = true;
    }
    CHECK(bias_differs);
    CHECK(slope_differs);
    // the mirror property must still hold for the perturbed tensors
    for (std::size_t l = 0; l < noisy.layers.size(); ++l)
        for (std::size_t i = 0; i < noisy.layers[l].bias.size(); ++i)
            CHECK(0.5 * (c.layers[l].bias[i] + d.layers[l].bias[i]) ==
                  doctest::Approx(noisy.layers[l].bias[i]).epsilon(1e-12));
}

TEST_CASE("split is deterministic for a fixed seed") {
    const Network parent = init_network(8, 8, 16, 2, 10);
    auto [a1, b1] = split_network(parent, SplitConfig{0.02, 99, false, false});
    auto [a2, b2] = split_network(parent, SplitConfig{0.02, 99, false, false});
    CHECK(a1 == a2);
    CHECK(b1 == b2);
}

TEST_CASE("split rejects non-finite parents") {
    Network parent = init_network(4, 8, 16, 2, 3);
    parent.layers[1].weights.data[0] = std::nan("");
    CHECK_THROWS_AS(split_network(parent, SplitConfig{0.02, 1, false, false}), DataError);
}

TEST_CASE("children stay close to the parent mapping for small kappa") {
    // Soft envelope: mean output displacement relative to mean output
    // magnitude stays under 5 * kappa * D on random inputs.
    const double kappa = 0.05;
    const Network parent = make_network({12, 10, 10, 6}, 77);
    const int depth = parent.depth();
    auto [child, ignored] = split_network(parent, SplitConfig{kappa, 31, false, false});
    (void)ignored;
    Rng rng(5);
    double disp = 0.0;
    double mag = 0.0;
    for (int t = 0; t < 100; ++t) {
        const Vec x = random_vec(rng, 12);
        const Vec yp = forward(parent, x);
        const Vec yc = forward(child, x);
        double d2 = 0.0;
        double m2 = 0.0;
        for (std::size_t i = 0; i < yp.size(); ++i) {
            d2 += (yc[i] - yp[i]) * (yc[i] - yp[i]);
            m2 += yp[i] * yp[i];
        }
        disp += std::sqrt(d2);
        mag += std::sqrt(m2);
    }
    CHECK(disp / mag <= 5.0 * kappa * depth);
}

TEST_CASE("split_bank doubles and keeps the ordering contract") {
    std::vector<Network> bank;
    bank.push_back(init_network(4, 8, 16, 2, 1));
    const SplitConfig cfg{0.02, 55, false, false};

    auto doubled = split_bank(bank, cfg);
    REQUIRE(doubled.size() == 2);

    bank.push_back(init_network(4, 8, 16, 2, 2));
    auto four = split_bank(bank, cfg);
    REQUIRE(four.size() == 4);
    // children of bank[i] occupy 2i and 2i+1
    auto [a0, b0] = split_network(bank[0], SplitConfig{0.02, mix_seed(55, 0), false, false});
    auto [a1, b1] = split_network(bank[1], SplitConfig{0.02, mix_seed(55, 1), false, false});
    CHECK(four[0] == a0);
    CHECK(four[1] == b0);
    CHECK(four[2] == a1);
    CHECK(four[3] == b1);

    auto again = split_bank(bank, cfg);
    for (std::size_t i = 0; i < four.size(); ++i) CHECK(four[i] == again[i]);
}

TEST_CASE("split_bank rejects empty and mixed-size banks") {
    CHECK_THROWS_AS(split_bank({}, SplitConfig{}), UsageError);
    std::vector<Network> mixed;
    mixed.push_back(init_network(4, 8, 16, 2, 1));
    mixed.push_back(init_network(8, 8, 16, 2, 1));
    CHECK_THROWS_AS(split_bank(mixed, SplitConfig{}), UsageError);
}
