#include "procver/tensor.hpp"

#include <cmath>
#include <sstream>

namespace procver {

std::size_t shape_product(const std::vector<std::size_t>& s) {
    std::size_t p = 1;
    for (std::size_t d : s) {
        p *= d;
    }
    return p;
}

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_product(shape), 0.0) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw ShapeError("tensor extents must be positive");
        }
    }
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) {
        x = v;
    }
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
}

Tensor Tensor::vector(std::vector<double> values) {
    Tensor t;
    t.shape = {values.size()};
    t.data = std::move(values);
    return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
        throw ShapeError("matrix: values do not fill rows*cols");
    }
    Tensor t;
    t.shape = {rows, cols};
    t.data = std::move(values);
    return t;
}

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw ShapeError("rows(): tensor is not rank-2, shape " + shape_str());
    }
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw ShapeError("cols(): tensor is not rank-2, shape " + shape_str());
    }
    return shape[1];
}

double Tensor::scalar_value() const {
    if (!is_scalar() || data.size() != 1) {
        throw ShapeError("scalar_value(): tensor is not a scalar, shape " + shape_str());
    }
    return data[0];
}

double& Tensor::operator()(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            out << 'x';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor Tensor::row(std::size_t i) const {
    const std::size_t c = cols();
    Tensor out({c});
    for (std::size_t j = 0; j < c; ++j) {
        out[j] = (*this)(i, j);
    }
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: size mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a.data[i] * b.data[i];
    }
    return s;
}

double l2_norm(const Tensor& a) {
    return std::sqrt(dot(a, a));
}

double squared_distance(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw ShapeError("squared_distance: size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s;
}

} // namespace procver
