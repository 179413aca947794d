#include "finsent/tensor.hpp"

#include <cmath>
#include <sstream>

#include "finsent/errors.hpp"

namespace finsent {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int e : shape) {
        if (e < 0) throw ContractError("tensor extent must be non-negative, got " + shape_to_string(shape));
        n *= static_cast<size_t>(e);
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_in, std::vector<float> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (shape_numel(shape) != data.size()) {
        throw ContractError("tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_to_string(shape));
    }
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    Tensor t;
    t.shape = shape;
    t.data.assign(shape_numel(shape), 0.0f);
    return t;
}

Tensor Tensor::full(const std::vector<int>& shape, float value) {
    Tensor t;
    t.shape = shape;
    t.data.assign(shape_numel(shape), value);
    return t;
}

int Tensor::rows() const {
    if (shape.size() != 2) throw ContractError("rows(): tensor is not 2-D, shape " + shape_to_string(shape));
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw ContractError("cols(): tensor is not 2-D, shape " + shape_to_string(shape));
    return shape[1];
}

void Tensor::fill(float value) {
    for (auto& x : data) x = value;
}

bool Tensor::all_finite() const {
    for (float x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace finsent
