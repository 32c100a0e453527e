#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace aptlab {

// Row-major 2D array of doubles. Everything in the library is a matrix:
// a batch of flattened samples is (B x dim), a token stream is (B*N x width).
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    Tensor(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != static_cast<size_t>(r) * c)
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
    void zero() { fill(0.0); }

    static Tensor scalar(double x) {
        Tensor t(1, 1);
        t.v[0] = x;
        return t;
    }
    static Tensor row(std::initializer_list<double> xs) {
        Tensor t(1, static_cast<int>(xs.size()));
        int i = 0;
        for (double x : xs) t.v[i++] = x;
        return t;
    }
};

bool all_finite(const Tensor& t);

}  // namespace aptlab
