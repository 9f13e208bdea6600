#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sidlab::nn {

// Dense row-major tensor. Float for training, double for the 64-bit shadow
// copies used by gradient verification.
template <class S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> shp)
        : shape(std::move(shp)), data(static_cast<size_t>(numel(shape)), S(0)) {}
    TensorT(std::vector<int> shp, std::vector<S> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data does not match shape");
    }

    static int64_t numel(const std::vector<int>& shp) {
        int64_t n = 1;
        for (int d : shp) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    template <class T2>
    TensorT<T2> cast() const {
        TensorT<T2> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T2>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace sidlab::nn
