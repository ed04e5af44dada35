#pragma once

#include <cstddef>
#include <vector>

namespace dcdnn {

using Vec = std::vector<double>;

// Row-major dense matrix. Just enough linear algebra for this project;
// everything hot is written as explicit loops at the call sites.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    std::size_t size() const { return data.size(); }
};

}  // namespace dcdnn
