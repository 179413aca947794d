#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace finsent {

/// Dense row-major tensor of 32-bit floats. Value-semantic: copies copy the
/// data. The data length always equals the product of the extents. Extents
/// are non-negative; zero extents denote empty results (e.g. logits for an
/// empty position list).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_in, std::vector<float> data_in);

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, float value);

    size_t numel() const { return data.size(); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // 2-D accessors; contract-checked on rank only (release builds skip
    // per-element bounds checks).
    int rows() const;
    int cols() const;
    float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    void fill(float value);
    bool all_finite() const;
};

size_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

}  // namespace finsent
