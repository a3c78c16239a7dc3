#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "procver/errors.hpp"

namespace procver {

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar) through rank N,
// though everything in this project is rank 0/1/2.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, double v);
    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool is_scalar() const { return shape.empty(); }
    double scalar_value() const;

    double& operator()(std::size_t i, std::size_t j);
    double operator()(std::size_t i, std::size_t j) const;
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    std::string shape_str() const;

    Tensor row(std::size_t i) const; // rank-2 -> rank-1 copy
};

std::size_t shape_product(const std::vector<std::size_t>& s);

double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);
double squared_distance(const Tensor& a, const Tensor& b);

} // namespace procver
