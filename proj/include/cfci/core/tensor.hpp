#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfci {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
    os << ']';
    return os.str();
}

/// Dense row-major double tensor. Storage is shared on copy; ops never
/// mutate inputs, so sharing is safe.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(numel_of(shape_), 0.0)) {}

    Tensor(Shape shape, double fill)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(numel_of(shape_), fill)) {}

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(std::move(values))) {
        if (static_cast<std::int64_t>(data_->size()) != numel_of(shape_))
            throw std::invalid_argument("Tensor: value count does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& x : *t.data_) x = dist(rng);
        return t;
    }

    static Tensor rand_uniform(Shape shape, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& x : *t.data_) x = dist(rng);
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }

    double& operator[](std::int64_t i) { return (*data_)[i]; }
    double operator[](std::int64_t i) const { return (*data_)[i]; }

    double item() const {
        if (numel() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_str(shape_));
        return (*data_)[0];
    }

    /// Deep copy.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    /// Same storage, new shape (numel must match).
    Tensor reshaped(Shape shape) const {
        if (numel_of(shape) != numel())
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(double v) { std::fill(data_->begin(), data_->end(), v); }

    /// Row-major strides.
    std::vector<std::int64_t> strides() const {
        std::vector<std::int64_t> st(shape_.size(), 1);
        for (int i = static_cast<int>(shape_.size()) - 2; i >= 0; --i)
            st[i] = st[i + 1] * shape_[i + 1];
        return st;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

} // namespace cfci
