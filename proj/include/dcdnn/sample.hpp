#pragma once

#include <cstdint>
#include <vector>

#include "dcdnn/mat.hpp"

namespace dcdnn {

// Where a block came from. n is the block edge length in pixels.
struct BlockOrigin {
    std::uint32_t image_id = 0;
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::uint32_t n = 0;
};

// One training pair: the zero-centered reference region (length 4NL+L^2)
// and the zero-centered target block (length N^2). ref_mean is the mean of
// the reference region before centering; adding it back recovers pixels.
struct TrainSample {
    Vec ref_vector;
    Vec target;
    double ref_mean = 0.0;
    BlockOrigin origin;
    std::uint32_t group_id = 0;
};

}  // namespace dcdnn
