#include "dcdnn/baseline.hpp"

#include <array>
#include <cmath>

#include "dcdnn/errors.hpp"

namespace dcdnn {

namespace {

// Displacement per row in 1/32 samples, modes 2..34.
constexpr std::array<int, 33> kAngleTable = {
    32,  26,  21,  17,  13,  9,  5,  2,  0,  -2, -5, -9, -13, -17, -21, -26, -32,
    -26, -21, -17, -13, -9,  -5, -2, 0,  2,  5,  9,  13, 17,  21,  26,  32};

// round(8192 / |angle|) for the negative displacements.
int inverse_angle(int angle) {
    switch (angle) {
        case -2: return 4096;
        case -5: return 1638;
        case -9: return 910;
        case -13: return 630;
        case -17: return 482;
        case -21: return 390;
        case -26: return 315;
        case -32: return 256;
        default:
            throw UsageError("inverse_angle: no entry for displacement " +
                             std::to_string(angle));
    }
}

void check_refs(const RefLine& refs, int n) {
    const std::size_t want = 2 * static_cast<std::size_t>(n) + 1;
    if (refs.above.size() != want || refs.left.size() != want)
        throw ShapeError("reference line length must be 2N+1");
}

// Core directional loop on the main reference array; used by the vertical
// modes directly and by the horizontal ones through a transpose.
Vec angular_core(const Vec& main_ref, const Vec& side_ref, int n, int angle) {
    // indices -n..2n, offset by n
    Vec ref(static_cast<std::size_t>(3 * n + 1), 0.0);
    const int off = n;
    for (int x = 0; x <= 2 * n; ++x) ref[off + x] = main_ref[x];
    if (angle < 0) {
        // extend only down to the deepest index the loop below can touch
        const int inv = inverse_angle(angle);
        const int lowest = (n * angle) >> 5;
        int inv_sum = 128;
        for (int k = -1; k > lowest; --k) {
            inv_sum += inv;
            ref[off + k] = side_ref[inv_sum >> 8];
        }
    }

    Vec pred(static_cast<std::size_t>(n) * n, 0.0);
    for (int y = 0; y < n; ++y) {
        const int pos = (y + 1) * angle;
        const int idx = pos >> 5;
        const int fact = pos & 31;
        for (int x = 0; x < n; ++x) {
            const int i = off + x + idx + 1;
            if (fact == 0) {
                pred[static_cast<std::size_t>(y) * n + x] = ref[i];
            } else {
                pred[static_cast<std::size_t>(y) * n + x] = std::floor(
                    ((32.0 - fact) * ref[i] + fact * ref[i + 1] + 16.0) / 32.0);
            }
        }
    }
    return pred;
}

}  // namespace

RefLine make_ref_line(const Plane& plane, int x, int y, int block_size) {
    const int n = block_size;
    // perimeter scan order: bottom-left upward, corner, then across the top
    const int count = 4 * n + 1;
    Vec values(count, 0.0);
    std::vector<std::uint8_t> avail(count, 0);
    auto probe = [&](int idx, int px, int py) {
        if (plane.contains(px, py)) {
            values[idx] = static_cast<double>(plane.at(px, py));
            avail[idx] = 1;
        }
    };
    for (int j = 0; j < 2 * n; ++j) probe(j, x - 1, y + 2 * n - 1 - j);
    probe(2 * n, x - 1, y - 1);
    for (int i = 0; i < 2 * n; ++i) probe(2 * n + 1 + i, x + i, y - 1);

    const Vec filled = substitute_unavailable(values, avail);
    RefLine refs;
    refs.above.resize(2 * n + 1);
    refs.left.resize(2 * n + 1);
    refs.above[0] = filled[2 * n];
    refs.left[0] = filled[2 * n];
    for (int i = 0; i < 2 * n; ++i) refs.above[1 + i] = filled[2 * n + 1 + i];
    for (int j = 0; j < 2 * n; ++j) refs.left[1 + j] = filled[2 * n - 1 - j];
    return refs;
}

Vec predict_dc(const RefLine& refs, int block_size) {
    const int n = block_size;
    check_refs(refs, n);
    double sum = 0.0;
    for (int i = 1; i <= n; ++i) sum += refs.above[i] + refs.left[i];
    const double dc = std::floor(sum / (2.0 * n) + 0.5);
    return Vec(static_cast<std::size_t>(n) * n, dc);
}

Vec predict_planar(const RefLine& refs, int block_size) {
    const int n = block_size;
    check_refs(refs, n);
    const double top_right = refs.above[n + 1];
    const double bottom_left = refs.left[n + 1];
    Vec pred(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double horz = (n - 1 - x) * refs.left[1 + y] + (x + 1) * top_right;
            const double vert = (n - 1 - y) * refs.above[1 + x] + (y + 1) * bottom_left;
            pred[static_cast<std::size_t>(y) * n + x] =
                std::floor((horz + vert + n) / (2.0 * n));
        }
    return pred;
}

Vec predict_angular(int mode, const RefLine& refs, int block_size) {
    if (mode < 2 || mode > 34)
        throw UsageError("predict_angular: mode " + std::to_string(mode) +
                         " is not angular");
    const int n = block_size;
    check_refs(refs, n);
    const int angle = kAngleTable[mode - 2];
    if (mode >= 18) return angular_core(refs.above, refs.left, n, angle);
    // horizontal family: predict in the transposed domain and swap back
    const Vec t = angular_core(refs.left, refs.above, n, angle);
    Vec pred(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            pred[static_cast<std::size_t>(y) * n + x] =
                t[static_cast<std::size_t>(x) * n + y];
    return pred;
}

Vec predict_mode(int mode, const RefLine& refs, int block_size) {
    if (mode == 0) return predict_planar(refs, block_size);
    if (mode == 1) return predict_dc(refs, block_size);
    return predict_angular(mode, refs, block_size);
}

std::pair<int, double> best_baseline_mode(const Vec& block, const RefLine& refs,
                                          int block_size) {
    const std::size_t n2 = static_cast<std::size_t>(block_size) * block_size;
    if (block.size() != n2) throw ShapeError("best_baseline_mode: block length != N^2");
    int best_mode = 0;
    double best_sse = 0.0;
    for (int mode = 0; mode < kBaselineModes; ++mode) {
        const Vec pred = predict_mode(mode, refs, block_size);
        double sse = 0.0;
        for (std::size_t i = 0; i < n2; ++i) {
            const double r = block[i] - pred[i];
            sse += r * r;
        }
        if (mode == 0 || sse < best_sse) {
            best_mode = mode;
            best_sse = sse;
        }
    }
    return {best_mode, best_sse};
}

std::pair<int, double> best_baseline_for_block(const Plane& plane, int x, int y,
                                               int block_size) {
    const RefLine refs = make_ref_line(plane, x, y, block_size);
    Vec block(static_cast<std::size_t>(block_size) * block_size);
    for (int by = 0; by < block_size; ++by)
        for (int bx = 0; bx < block_size; ++bx)
            block[static_cast<std::size_t>(by) * block_size + bx] =
                static_cast<double>(plane.at(x + bx, y + by));
    return best_baseline_mode(block, refs, block_size);
}

}  // namespace dcdnn
