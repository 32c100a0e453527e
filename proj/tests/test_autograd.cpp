#include <doctest.h>

#include <cmath>

#include "aptlab/autograd.hpp"
#include "aptlab/rng.hpp"

using namespace aptlab;
using ag::Var;

namespace {

// central finite differences of a scalar graph wrt one leaf
double fd_grad(const std::function<Var()>& build, Var leaf, size_t k, double h = 1e-6) {
    double orig = leaf->val.v[k];
    leaf->val.v[k] = orig + h;
    double up = build()->item();
    leaf->val.v[k] = orig - h;
    double dn = build()->item();
    leaf->val.v[k] = orig;
    return (up - dn) / (2 * h);
}

void check_grads(const std::function<Var()>& build, std::vector<Var> leaves, double tol = 1e-6) {
    for (auto& l : leaves) l->zero_grad();
    Var out = build();
    ag::backward(out);
    for (auto& l : leaves) {
        REQUIRE(l->grad.size() == l->val.size());
        for (size_t k = 0; k < l->val.size(); ++k) {
            double fd = fd_grad(build, l, k);
            double an = l->grad.v[k];
            double denom = std::max({std::abs(fd), std::abs(an), 1.0});
            CHECK(std::abs(fd - an) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(7);
    Var a = ag::leaf(rng.normal_tensor(3, 4));
    Var b = ag::leaf(rng.normal_tensor(3, 4));
    check_grads([&] { return ag::mean_all(ag::hadamard(ag::add(a, b), ag::sub(a, b))); }, {a, b});
    check_grads([&] { return ag::mean_all(ag::silu(ag::scale(a, 1.7))); }, {a});
    check_grads([&] { return ag::mean_all(ag::square(ag::sigmoid(a))); }, {a});
    check_grads([&] { return ag::mean_all(ag::softplus(ag::tanh_op(a))); }, {a});
    check_grads([&] { return ag::sum_all(ag::add_scalar(ag::neg(a), 0.3)); }, {a});
}

TEST_CASE("matmul and linear gradients") {
    Rng rng(11);
    Var x = ag::leaf(rng.normal_tensor(5, 3));
    Var w = ag::leaf(rng.normal_tensor(3, 4));
    Var b = ag::leaf(rng.normal_tensor(1, 4));
    check_grads([&] { return ag::mean_all(ag::square(ag::matmul(x, w))); }, {x, w});
    check_grads([&] { return ag::mean_all(ag::square(ag::linear(x, w, b))); }, {x, w, b});
}

TEST_CASE("structural op gradients") {
    Rng rng(13);
    Var c = ag::leaf(rng.normal_tensor(2, 5));
    check_grads([&] { return ag::mean_all(ag::square(ag::row_repeat(c, 3))); }, {c});
    check_grads([&] { return ag::mean_all(ag::square(ag::cols(c, 1, 3))); }, {c});
    Var d = ag::leaf(rng.normal_tensor(2, 3));
    check_grads([&] { return ag::mean_all(ag::square(ag::concat_cols({c, d}))); }, {c, d});
    Var table = ag::leaf(rng.normal_tensor(4, 3));
    check_grads([&] { return ag::mean_all(ag::square(ag::gather_rows(table, {0, 2, 2, 3}))); }, {table});
    auto map = std::make_shared<const std::vector<size_t>>(std::vector<size_t>{9, 0, 3, 3, 7, 1});
    check_grads([&] { return ag::mean_all(ag::square(ag::gather_elements(c, 2, 3, map))); }, {c});
    check_grads([&] { return ag::mean_all(ag::square(ag::mean_rows(c))); }, {c});
}

TEST_CASE("layernorm gradient") {
    Rng rng(17);
    Var x = ag::leaf(rng.normal_tensor(4, 6));
    Var w = ag::leaf(rng.normal_tensor(6, 2));
    check_grads([&] { return ag::mean_all(ag::square(ag::matmul(ag::layernorm(x), w))); }, {x, w}, 1e-5);
}

TEST_CASE("attention gradient, self and cross") {
    Rng rng(19);
    int B = 2, N = 3, W = 8, H = 2;
    Var q = ag::leaf(rng.normal_tensor(B * N, W));
    Var k = ag::leaf(rng.normal_tensor(B * N, W));
    Var v = ag::leaf(rng.normal_tensor(B * N, W));
    check_grads([&] { return ag::mean_all(ag::square(ag::attention(q, k, v, B, N, N, H))); }, {q, k, v}, 1e-5);
    Var q1 = ag::leaf(rng.normal_tensor(B, W));  // one query token per item
    check_grads([&] { return ag::mean_all(ag::square(ag::attention(q1, k, v, B, 1, N, 1))); }, {q1, k, v}, 1e-5);
}

TEST_CASE("attention softmax is invariant to duplicated key/value pairs") {
    Rng rng(23);
    int B = 1, N = 4, W = 6;
    ag::NoGradGuard ng;
    Var q = ag::constant(rng.normal_tensor(B, W));
    Tensor k = rng.normal_tensor(N, W), v = rng.normal_tensor(N, W);
    Var out1 = ag::attention(q, ag::constant(k), ag::constant(v), B, 1, N, 1);
    Tensor k2(2 * N, W), v2(2 * N, W);
    for (int i = 0; i < 2 * N; ++i)
        for (int j = 0; j < W; ++j) {
            k2(i, j) = k(i % N, j);
            v2(i, j) = v(i % N, j);
        }
    Var out2 = ag::attention(q, ag::constant(k2), ag::constant(v2), B, 1, 2 * N, 1);
    for (size_t i = 0; i < out1->val.size(); ++i)
        CHECK(out1->val.v[i] == doctest::Approx(out2->val.v[i]).epsilon(1e-12));
}

TEST_CASE("no-grad mode records no graph") {
    Rng rng(29);
    Var a = ag::leaf(rng.normal_tensor(2, 2));
    ag::NoGradGuard ng;
    Var out = ag::mean_all(ag::square(a));
    CHECK_FALSE(out->requires_grad);
    CHECK(out->parents.empty());
}

TEST_CASE("shared subexpressions accumulate once per path") {
    Var x = ag::leaf(Tensor::scalar(3.0));
    Var y = ag::hadamard(x, x);  // x^2, d/dx = 2x = 6
    ag::backward(ag::sum_all(y));
    CHECK(x->grad.v[0] == doctest::Approx(6.0));
}
