#include "dcdnn/fcnet.hpp"

#include <cmath>
#include <cstring>

#include "binio.hpp"

#include "dcdnn/errors.hpp"

namespace dcdnn {

namespace {

bool all_finite(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

void check_same_shape(const Network& net, const Gradients& g, const char* what) {
    if (g.layers.size() != net.layers.size())
        throw ShapeError(std::string(what) + ": layer count mismatch");
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
        const auto& gl = g.layers[l];
        const auto& nl = net.layers[l];
        if (!gl.weights.same_shape(nl.weights) || gl.bias.size() != nl.bias.size() ||
            gl.prelu_slopes.size() != nl.prelu_slopes.size())
            throw ShapeError(std::string(what) + ": shape mismatch at layer " +
                             std::to_string(l));
    }
}

}  // namespace

std::size_t reference_vector_length(int block_size, int ref_lines) {
    return static_cast<std::size_t>(4 * block_size * ref_lines + ref_lines * ref_lines);
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
        n += l.weights.size() + l.bias.size() + l.prelu_slopes.size();
    return n;
}

void Network::validate() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& lp = layers[l];
        if (lp.weights.rows == 0 || lp.weights.cols == 0)
            throw ConfigError("layer " + std::to_string(l) + " has empty weights");
        if (lp.bias.size() != lp.out_dim())
            throw ConfigError("layer " + std::to_string(l) + " bias length mismatch");
        const bool last = (l + 1 == layers.size());
        if (last && lp.has_activation())
            throw ConfigError("final layer must not carry PReLU slopes");
        if (!last && lp.prelu_slopes.size() != lp.out_dim())
            throw ConfigError("hidden layer " + std::to_string(l) +
                              " slope length mismatch");
        if (l > 0 && lp.in_dim() != layers[l - 1].out_dim())
            throw ConfigError("dimension chain broken between layers " +
                              std::to_string(l - 1) + " and " + std::to_string(l));
        if (!all_finite(lp.weights.data.data(), lp.weights.size()) ||
            !all_finite(lp.bias.data(), lp.bias.size()) ||
            !all_finite(lp.prelu_slopes.data(), lp.prelu_slopes.size()))
            throw ConfigError("layer " + std::to_string(l) + " has non-finite entries");
    }
    if (block_size > 0) {
        if (block_size != 4 && block_size != 8 && block_size != 16 && block_size != 32)
            throw ConfigError("block size must be one of {4,8,16,32}");
        if (ref_lines < 1) throw ConfigError("ref_lines must be >= 1");
        if (input_dim() != reference_vector_length(block_size, ref_lines))
            throw ConfigError("first layer input dim must equal 4NL+L^2");
        const auto n2 = static_cast<std::size_t>(block_size) * block_size;
        if (output_dim() != n2)
            throw ConfigError("last layer output dim must equal N^2");
        for (std::size_t l = 0; l + 1 < layers.size(); ++l)
            if (layers[l].out_dim() != hidden_dim())
                throw ConfigError("hidden layers must share one output dimension");
    }
}

bool Network::operator==(const Network& other) const {
    if (block_size != other.block_size || ref_lines != other.ref_lines ||
        seed_info.generator_id != other.seed_info.generator_id ||
        seed_info.seed != other.seed_info.seed ||
        layers.size() != other.layers.size())
        return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& a = layers[l];
        const auto& b = other.layers[l];
        if (a.weights.rows != b.weights.rows || a.weights.cols != b.weights.cols ||
            a.weights.data != b.weights.data || a.bias != b.bias ||
            a.prelu_slopes != b.prelu_slopes)
            return false;
    }
    return true;
}

namespace {

Network build_network(int block_size, int ref_lines,
                      const std::vector<std::size_t>& dims, std::uint64_t seed,
                      WeightInit init) {
    Network net;
    net.block_size = block_size;
    net.ref_lines = ref_lines;
    net.seed_info = SeedInfo{kGeneratorId, seed};
    Rng rng(seed);
    net.layers.resize(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        LayerParams& lp = net.layers[l];
        const std::size_t in = dims[l];
        const std::size_t out = dims[l + 1];
        lp.weights = Mat(out, in);
        const double sigma =
            init == WeightInit::kUnitStd ? 1.0 : 1.0 / std::sqrt(static_cast<double>(in));
        for (double& w : lp.weights.data) w = rng.gaussian(0.0, sigma);
        lp.bias.assign(out, 0.0);
        const bool last = (l + 2 == dims.size());
        if (!last) lp.prelu_slopes.assign(out, 0.25);
    }
    net.validate();
    return net;
}

}  // namespace

Network init_network(int block_size, int ref_lines, int hidden_dim, int depth,
                     std::uint64_t seed, WeightInit init) {
    if (block_size != 4 && block_size != 8 && block_size != 16 && block_size != 32)
        throw ConfigError("init_network: block size must be one of {4,8,16,32}");
    if (ref_lines < 1) throw ConfigError("init_network: ref_lines must be >= 1");
    if (hidden_dim < 1) throw ConfigError("init_network: hidden_dim must be >= 1");
    if (depth < 1) throw ConfigError("init_network: depth must be >= 1");

    std::vector<std::size_t> dims;
    dims.push_back(reference_vector_length(block_size, ref_lines));
    for (int l = 0; l < depth; ++l) dims.push_back(static_cast<std::size_t>(hidden_dim));
    dims.push_back(static_cast<std::size_t>(block_size) * block_size);
    return build_network(block_size, ref_lines, dims, seed, init);
}

Network make_network(const std::vector<std::size_t>& dims, std::uint64_t seed,
                     WeightInit init) {
    if (dims.size() < 2) throw ConfigError("make_network: need at least in and out dims");
    for (std::size_t d : dims)
        if (d == 0) throw ConfigError("make_network: zero dimension");
    return build_network(0, 0, dims, seed, init);
}

Vec prelu(const Vec& x, const Vec& slopes) {
    if (x.size() != slopes.size())
        throw ShapeError("prelu: input length " + std::to_string(x.size()) +
                         " != slope length " + std::to_string(slopes.size()));
    Vec out(x.size());
    for (std::size_t k = 0; k < x.size(); ++k)
        out[k] = x[k] >= 0.0 ? x[k] : slopes[k] * x[k];
    return out;
}

Vec forward(const Network& net, const Vec& input, ForwardCache* cache) {
    if (input.size() != net.input_dim())
        throw ShapeError("forward: input length " + std::to_string(input.size()) +
                         " != expected " + std::to_string(net.input_dim()));
    if (!all_finite(input.data(), input.size()))
        throw DataError("forward: non-finite input");

    if (cache) {
        cache->input = input;
        cache->pre.assign(net.layers.size(), {});
        cache->post.assign(net.layers.size() - 1, {});
    }

    Vec cur = input;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerParams& lp = net.layers[l];
        Vec z(lp.out_dim());
        for (std::size_t r = 0; r < lp.out_dim(); ++r) {
            const double* wr = lp.weights.row(r);
            double acc = lp.bias[r];
            for (std::size_t c = 0; c < lp.in_dim(); ++c) acc += wr[c] * cur[c];
            z[r] = acc;
        }
        if (cache) cache->pre[l] = z;
        if (lp.has_activation()) {
            cur = prelu(z, lp.prelu_slopes);
            if (cache) cache->post[l] = cur;
        } else {
            cur = std::move(z);
        }
    }
    return cur;
}

double param_l2_squared(const Network& net) {
    double acc = 0.0;
    for (const auto& l : net.layers) {
        for (double w : l.weights.data) acc += w * w;
        for (double b : l.bias) acc += b * b;
        for (double a : l.prelu_slopes) acc += a * a;
    }
    return acc;
}

double batch_loss(const Network& net, std::span<const TrainSample> batch,
                  double weight_decay) {
    if (batch.empty()) throw UsageError("batch_loss: empty batch");
    double data = 0.0;
    for (const TrainSample& s : batch) {
        if (s.target.size() != net.output_dim())
            throw ShapeError("batch_loss: target length mismatch");
        const Vec out = forward(net, s.ref_vector);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double r = out[i] - s.target[i];
            data += r * r;
        }
    }
    data /= 2.0 * static_cast<double>(batch.size());
    return data + 0.5 * weight_decay * param_l2_squared(net);
}

Gradients zero_gradients(const Network& net) {
    Gradients g;
    g.layers.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& lp = net.layers[l];
        g.layers[l].weights = Mat(lp.out_dim(), lp.in_dim());
        g.layers[l].bias.assign(lp.out_dim(), 0.0);
        g.layers[l].prelu_slopes.assign(lp.prelu_slopes.size(), 0.0);
    }
    return g;
}

bool Gradients::finite() const {
    for (const auto& l : layers) {
        if (!all_finite(l.weights.data.data(), l.weights.size())) return false;
        if (!all_finite(l.bias.data(), l.bias.size())) return false;
        if (!all_finite(l.prelu_slopes.data(), l.prelu_slopes.size())) return false;
    }
    return true;
}

void Gradients::add_scaled(const Gradients& g, double scale) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& dst = layers[l];
        const auto& src = g.layers[l];
        for (std::size_t i = 0; i < dst.weights.size(); ++i)
            dst.weights.data[i] += scale * src.weights.data[i];
        for (std::size_t i = 0; i < dst.bias.size(); ++i)
            dst.bias[i] += scale * src.bias[i];
        for (std::size_t i = 0; i < dst.prelu_slopes.size(); ++i)
            dst.prelu_slopes[i] += scale * src.prelu_slopes[i];
    }
}

void Gradients::scale(double s) {
    for (auto& l : layers) {
        for (double& v : l.weights.data) v *= s;
        for (double& v : l.bias) v *= s;
        for (double& v : l.prelu_slopes) v *= s;
    }
}

Gradients backward(const Network& net, const ForwardCache& cache, const Vec& target,
                   double weight_decay) {
    const std::size_t nl = net.layers.size();
    if (cache.pre.size() != nl || cache.post.size() != nl - 1 ||
        cache.input.size() != net.input_dim())
        throw UsageError("backward: cache does not match this network");
    for (std::size_t l = 0; l < nl; ++l)
        if (cache.pre[l].size() != net.layers[l].out_dim())
            throw UsageError("backward: stale cache (layer " + std::to_string(l) + ")");
    if (target.size() != net.output_dim())
        throw ShapeError("backward: target length mismatch");

    Gradients g = zero_gradients(net);

    // d(1/2 ||out - y||^2) / d out
    Vec grad_pre(net.output_dim());
    for (std::size_t i = 0; i < grad_pre.size(); ++i)
        grad_pre[i] = cache.pre[nl - 1][i] - target[i];

    for (std::size_t l = nl; l-- > 0;) {
        const LayerParams& lp = net.layers[l];
        LayerGrads& gl = g.layers[l];
        const Vec& layer_in = (l == 0) ? cache.input : cache.post[l - 1];

        for (std::size_t r = 0; r < lp.out_dim(); ++r) {
            const double gr = grad_pre[r];
            gl.bias[r] = gr;
            double* wr = gl.weights.row(r);
            for (std::size_t c = 0; c < lp.in_dim(); ++c) wr[c] = gr * layer_in[c];
        }

        if (l == 0) break;

        // Propagate through the previous layer's PReLU.
        const LayerParams& prev = net.layers[l - 1];
        const Vec& pre_prev = cache.pre[l - 1];
        Vec grad_post(lp.in_dim(), 0.0);
        for (std::size_t r = 0; r < lp.out_dim(); ++r) {
            const double gr = grad_pre[r];
            const double* wr = lp.weights.row(r);
            for (std::size_t c = 0; c < lp.in_dim(); ++c) grad_post[c] += gr * wr[c];
        }
        Vec next(lp.in_dim());
        LayerGrads& gprev = g.layers[l - 1];
        for (std::size_t k = 0; k < lp.in_dim(); ++k) {
            if (pre_prev[k] >= 0.0) {
                gprev.prelu_slopes[k] = 0.0;
                next[k] = grad_post[k];
            } else {
                gprev.prelu_slopes[k] = grad_post[k] * pre_prev[k];
                next[k] = grad_post[k] * prev.prelu_slopes[k];
            }
        }
        grad_pre = std::move(next);
    }

    if (weight_decay != 0.0) {
        for (std::size_t l = 0; l < nl; ++l) {
            const auto& lp = net.layers[l];
            auto& gl = g.layers[l];
            for (std::size_t i = 0; i < lp.weights.size(); ++i)
                gl.weights.data[i] += weight_decay * lp.weights.data[i];
            for (std::size_t i = 0; i < lp.bias.size(); ++i)
                gl.bias[i] += weight_decay * lp.bias[i];
            for (std::size_t i = 0; i < lp.prelu_slopes.size(); ++i)
                gl.prelu_slopes[i] += weight_decay * lp.prelu_slopes[i];
        }
    }
    return g;
}

Gradients batch_gradient(const Network& net, std::span<const TrainSample> batch,
                         double weight_decay) {
    if (batch.empty()) throw UsageError("batch_gradient: empty batch");
    Gradients acc = zero_gradients(net);
    ForwardCache cache;
    const double inv_m = 1.0 / static_cast<double>(batch.size());
    for (const TrainSample& s : batch) {
        forward(net, s.ref_vector, &cache);
        acc.add_scaled(backward(net, cache, s.target, 0.0), inv_m);
    }
    if (weight_decay != 0.0) {
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            const auto& lp = net.layers[l];
            auto& gl = acc.layers[l];
            for (std::size_t i = 0; i < lp.weights.size(); ++i)
                gl.weights.data[i] += weight_decay * lp.weights.data[i];
            for (std::size_t i = 0; i < lp.bias.size(); ++i)
                gl.bias[i] += weight_decay * lp.bias[i];
            for (std::size_t i = 0; i < lp.prelu_slopes.size(); ++i)
                gl.prelu_slopes[i] += weight_decay * lp.prelu_slopes[i];
        }
    }
    return acc;
}

OptimizerState make_optimizer(const Network& net, double momentum, double weight_decay) {
    if (momentum < 0.0 || momentum >= 1.0)
        throw ConfigError("make_optimizer: momentum must be in [0,1)");
    OptimizerState st;
    st.momentum = momentum;
    st.weight_decay = weight_decay;
    st.velocity = zero_gradients(net);
    return st;
}

void sgd_step(Network& net, const Gradients& grads, OptimizerState& state, double lr) {
    if (lr < 0.0) throw UsageError("sgd_step: lr must be >= 0");
    check_same_shape(net, grads, "sgd_step(grads)");
    check_same_shape(net, state.velocity, "sgd_step(velocity)");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const auto& gl = grads.layers[l];
        if (!all_finite(gl.weights.data.data(), gl.weights.size()) ||
            !all_finite(gl.bias.data(), gl.bias.size()) ||
            !all_finite(gl.prelu_slopes.data(), gl.prelu_slopes.size()))
            throw TrainingError("sgd_step: non-finite gradient at layer " +
                                std::to_string(l) + "; training aborted");
    }
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& lp = net.layers[l];
        auto& v = state.velocity.layers[l];
        const auto& gl = grads.layers[l];
        for (std::size_t i = 0; i < lp.weights.size(); ++i) {
            v.weights.data[i] = state.momentum * v.weights.data[i] + gl.weights.data[i];
            lp.weights.data[i] -= lr * v.weights.data[i];
        }
        for (std::size_t i = 0; i < lp.bias.size(); ++i) {
            v.bias[i] = state.momentum * v.bias[i] + gl.bias[i];
            lp.bias[i] -= lr * v.bias[i];
        }
        for (std::size_t i = 0; i < lp.prelu_slopes.size(); ++i) {
            v.prelu_slopes[i] = state.momentum * v.prelu_slopes[i] + gl.prelu_slopes[i];
            lp.prelu_slopes[i] -= lr * v.prelu_slopes[i];
        }
    }
}

// --- serialization ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'C', 'D', 'N'};

void put_array(std::vector<std::uint8_t>& out, const double* p, std::size_t n,
               ElemType elem) {
    if (elem == ElemType::kF64)
        for (std::size_t i = 0; i < n; ++i) binio::put_f64(out, p[i]);
    else
        for (std::size_t i = 0; i < n; ++i) binio::put_f32(out, p[i]);
}

void read_array(binio::Reader& rd, double* p, std::size_t n, ElemType elem) {
    if (elem == ElemType::kF64)
        for (std::size_t i = 0; i < n; ++i) p[i] = rd.f64();
    else
        for (std::size_t i = 0; i < n; ++i) p[i] = rd.f32();
}

}  // namespace

std::vector<std::uint8_t> save_model(const Network& net, ElemType elem) {
    net.validate();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    binio::put_u32(out, kModelVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(net.block_size));
    binio::put_u32(out, static_cast<std::uint32_t>(net.ref_lines));
    binio::put_u32(out, static_cast<std::uint32_t>(net.depth()));
    binio::put_u32(out, static_cast<std::uint32_t>(net.hidden_dim()));
    binio::put_u32(out, static_cast<std::uint32_t>(elem));
    binio::put_u32(out, net.seed_info.generator_id);
    binio::put_u64(out, net.seed_info.seed);
    for (const auto& lp : net.layers) {
        binio::put_u32(out, static_cast<std::uint32_t>(lp.out_dim()));
        binio::put_u32(out, static_cast<std::uint32_t>(lp.in_dim()));
        put_array(out, lp.weights.data.data(), lp.weights.size(), elem);
        put_array(out, lp.bias.data(), lp.bias.size(), elem);
        if (lp.has_activation())
            put_array(out, lp.prelu_slopes.data(), lp.prelu_slopes.size(), elem);
    }
    return out;
}

Network load_model(std::span<const std::uint8_t> bytes) {
    binio::Reader rd{bytes, 0, "model"};
    rd.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a model file (bad magic)");
    rd.pos = 4;
    const std::uint32_t version = rd.u32();
    if (version != kModelVersion)
        throw FormatError("unsupported model format version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kModelVersion) +
                          ")");
    Network net;
    net.block_size = static_cast<int>(rd.u32());
    net.ref_lines = static_cast<int>(rd.u32());
    const std::uint32_t depth = rd.u32();
    const std::uint32_t hidden = rd.u32();
    const std::uint32_t elem_tag = rd.u32();
    if (elem_tag > 1) throw FormatError("unknown element type tag");
    const ElemType elem = static_cast<ElemType>(elem_tag);
    net.seed_info.generator_id = rd.u32();
    net.seed_info.seed = rd.u64();

    net.layers.resize(depth + 1);
    for (std::size_t l = 0; l <= depth; ++l) {
        LayerParams& lp = net.layers[l];
        const std::uint32_t out_dim = rd.u32();
        const std::uint32_t in_dim = rd.u32();
        if (out_dim == 0 || in_dim == 0) throw FormatError("zero layer dimension");
        lp.weights = Mat(out_dim, in_dim);
        read_array(rd, lp.weights.data.data(), lp.weights.size(), elem);
        lp.bias.assign(out_dim, 0.0);
        read_array(rd, lp.bias.data(), lp.bias.size(), elem);
        if (l < depth) {
            lp.prelu_slopes.assign(out_dim, 0.0);
            read_array(rd, lp.prelu_slopes.data(), lp.prelu_slopes.size(), elem);
        }
    }
    if (rd.pos != bytes.size()) throw FormatError("trailing bytes after model payload");
    if (net.block_size > 0 && net.hidden_dim() != hidden)
        throw FormatError("header hidden_dim disagrees with layer dims");
    net.validate();
    return net;
}

void save_model_file(const Network& net, const std::string& path, ElemType elem) {
    binio::write_file(path, save_model(net, elem));
}

Network load_model_file(const std::string& path) {
    return load_model(binio::read_file(path));
}

}  // namespace dcdnn
