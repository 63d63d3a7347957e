#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace alignkt::nc {

using Shape = std::vector<std::size_t>;

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

// Dense row-major f64 storage. Rank 0 is a scalar; most of the model is rank 2.
class Array {
public:
    Array() = default;
    explicit Array(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_))
            throw std::invalid_argument("Array: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    static Array matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Array({rows, cols}, fill);
    }
    static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Array({rows, cols}, std::move(data));
    }
    static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
    static Array row(std::vector<double> v) {
        const auto n = v.size();
        return Array({1, n}, std::move(v));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    // Rank <= 2 views: scalars are 1x1, vectors are 1xN.
    std::size_t rows() const {
        if (shape_.size() < 2) return 1;
        return shape_[0];
    }
    std::size_t cols() const {
        if (shape_.empty()) return 1;
        return shape_.back();
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Array& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace alignkt::nc
