#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace edib {

// Error taxonomy used across the library:
//   shape_error   - incompatible tensor dimensions or invalid configuration
//   data_error    - malformed external input (files, headers, kernels)
//   numeric_error - non-finite values produced by a numeric routine
struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    bool operator==(const Shape&) const = default;

    long long numel() const { return 1LL * n * c * h * w; }

    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

// Dense rank-4 float tensor in NCHW layout, w fastest. Copies share the
// underlying buffer; mutation goes through mutable_data() which unshares
// first, so tensors behave as immutable values to everyone else.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape s)
        : shape_(s), data_(std::make_shared<std::vector<float>>(check_numel(s), 0.0f)) {}

    Tensor(Shape s, std::vector<float> v) : shape_(s) {
        if ((long long)v.size() != check_numel(s))
            throw shape_error("tensor data size " + std::to_string(v.size()) +
                              " does not match shape " + s.str());
        data_ = std::make_shared<std::vector<float>>(std::move(v));
    }

    static Tensor zeros(Shape s) { return Tensor(s); }

    static Tensor full(Shape s, float value) {
        Tensor t(s);
        std::fill(t.data_->begin(), t.data_->end(), value);
        return t;
    }

    static Tensor scalar(float value) { return full({1, 1, 1, 1}, value); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    long long numel() const { return shape_.numel(); }

    const float* data() const { return data_->data(); }

    float* mutable_data() {
        if (data_.use_count() > 1)
            data_ = std::make_shared<std::vector<float>>(*data_);
        return data_->data();
    }

    const std::vector<float>& vec() const { return *data_; }

    long long index(int n, int c, int y, int x) const {
        return ((1LL * n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    float at(int n, int c, int y, int x) const { return (*data_)[index(n, c, y, x)]; }

    float item() const {
        if (numel() != 1)
            throw shape_error("item() requires a single-element tensor, got " + shape_.str());
        return (*data_)[0];
    }

  private:
    static long long check_numel(Shape s) {
        if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
            throw shape_error("tensor dimensions must be positive, got " + s.str());
        return s.numel();
    }

    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
};

inline bool all_finite(const Tensor& t) {
    const float* p = t.data();
    long long n = t.numel();
    for (long long i = 0; i < n; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

inline void require_finite(const Tensor& t, const char* where) {
    if (!all_finite(t))
        throw numeric_error(std::string("non-finite value produced by ") + where);
}

}  // namespace edib
