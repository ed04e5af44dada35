#pragma once

#include <utility>

#include "dcdnn/dataset.hpp"
#include "dcdnn/mat.hpp"

namespace dcdnn {

// Single reference line around an N x N block. Both arrays have length
// 2N+1 and share the top-left corner sample at index 0: above[1+i] sits at
// (i, -1) relative to the block, left[1+j] at (-1, j). Values are
// substitution-filled, so everything is usable.
struct RefLine {
    Vec above;
    Vec left;
};

inline constexpr int kBaselineModes = 35;  // 0 planar, 1 DC, 2..34 angular

// Builds the reference line from a plane, filling out-of-bounds positions
// the way the reference-sample scan does: bottom-left upward, corner, then
// across the top.
RefLine make_ref_line(const Plane& plane, int x, int y, int block_size);

// DC: every pixel is the rounded mean of the N above and N left samples.
Vec predict_dc(const RefLine& refs, int block_size);

// Planar: average of the horizontal and vertical linear interpolations
// toward the top-right and bottom-left references.
Vec predict_planar(const RefLine& refs, int block_size);

// Angular modes 2..34, 1/32-sample accuracy with the inverse-angle
// extension for negative displacements.
Vec predict_angular(int mode, const RefLine& refs, int block_size);

// Any of the 35 modes.
Vec predict_mode(int mode, const RefLine& refs, int block_size);

// Exhaustive SSE search over all 35 modes; ties resolve to the lowest
// mode index. block is the N*N pixel-domain target, row-major.
std::pair<int, double> best_baseline_mode(const Vec& block, const RefLine& refs,
                                          int block_size);

// Convenience: reference line + exhaustive search for a block in a plane.
std::pair<int, double> best_baseline_for_block(const Plane& plane, int x, int y,
                                               int block_size);

}  // namespace dcdnn
