#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "aptlab/tensor.hpp"

namespace aptlab::ag {

struct Node;
using Var = std::shared_ptr<Node>;

// Dynamic-graph reverse-mode autodiff over Tensor values. Graphs are built
// per training step and discarded; parameter leaves persist and accumulate
// gradients across backward calls until zero_grad.
struct Node {
    Tensor val;
    Tensor grad;  // allocated on demand, same shape as val
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void()> backfn;

    Node() = default;
    explicit Node(Tensor v, bool rg = false) : val(std::move(v)), requires_grad(rg) {}

    Tensor& ensure_grad() {
        if (grad.rows != val.rows || grad.cols != val.cols) grad = Tensor(val.rows, val.cols);
        return grad;
    }
    void zero_grad() {
        if (grad.size()) grad.zero();
    }
    double item() const {
        if (val.size() != 1) throw std::logic_error("item() on non-scalar");
        return val.v[0];
    }
};

// When grad mode is off, ops compute values but record no graph.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

Var constant(Tensor v);
Var leaf(Tensor v);  // requires_grad = true (parameters, probed inputs)

void backward(const Var& root);

// --- elementwise / structural ops ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var square(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var softplus(const Var& a);  // numerically stable, elementwise

// y = x W + 1 b^T (b is 1 x out; pass nullptr-free overload without bias via matmul)
Var matmul(const Var& a, const Var& b);
Var linear(const Var& x, const Var& w, const Var& b);

// Repeat each row of c (B x n) reps times -> (B*reps x n); backward sums groups.
Var row_repeat(const Var& c, int reps);
// Column slice [start, start+len).
Var cols(const Var& a, int start, int len);
Var concat_cols(const std::vector<Var>& xs);
// Row gather from a table (used for class embeddings); backward scatter-adds.
Var gather_rows(const Var& table, const std::vector<int>& idx);
// Arbitrary element permutation/reshape: out element k = in.v[map[k]].
Var gather_elements(const Var& a, int out_rows, int out_cols, std::shared_ptr<const std::vector<size_t>> map);

// Per-row layernorm without affine parameters (affine comes from modulation).
Var layernorm(const Var& x, double eps = 1e-6);

// Batched multi-head softmax attention.
// q: (B*Nq x W), k,v: (B*Nk x W); W split into H heads of dim W/H.
Var attention(const Var& q, const Var& k, const Var& v, int batch, int nq, int nk, int heads);

Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mse(const Var& a, const Var& b);
// Per-row mean of squared difference: (B x d), (B x d) -> (B x 1).
Var rowwise_sq_diff(const Var& a, const Var& b);
Var mean_rows(const Var& a);  // (B x d) -> (B x 1) row means

}  // namespace aptlab::ag
