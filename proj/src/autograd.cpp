#include "aptlab/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace aptlab {

bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace aptlab

namespace aptlab::ag {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

static CMap emap(const Tensor& t) { return CMap(t.v.data(), t.rows, t.cols); }
static Map emap(Tensor& t) { return Map(t.v.data(), t.rows, t.cols); }

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var constant(Tensor v) { return std::make_shared<Node>(std::move(v), false); }
Var leaf(Tensor v) { return std::make_shared<Node>(std::move(v), true); }

static Var make(Tensor v, std::vector<Var> parents, std::function<void()> backfn) {
    bool rg = false;
    if (g_grad_enabled)
        for (auto& p : parents)
            if (p->requires_grad) rg = true;
    auto n = std::make_shared<Node>(std::move(v), rg);
    if (rg) {
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}

void backward(const Var& root) {
    // iterative topo sort over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    if (root->val.size() != 1) throw std::logic_error("backward: root must be scalar");
    root->grad.v[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && n->grad.size()) n->backfn();
    }
}

static void check_same(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Var add(const Var& a, const Var& b) {
    check_same(a, b, "add");
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
    auto n = make(std::move(out), {a, b}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, b]() {
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i];
            }
        };
    }
    return n;
}

Var sub(const Var& a, const Var& b) {
    check_same(a, b, "sub");
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
    auto n = make(std::move(out), {a, b}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, b]() {
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] -= self->grad.v[i];
            }
        };
    }
    return n;
}

Var hadamard(const Var& a, const Var& b) {
    check_same(a, b, "hadamard");
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= b->val.v[i];
    auto n = make(std::move(out), {a, b}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, b]() {
            if (a->requires_grad) {
                auto& g = a->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i] * b->val.v[i];
            }
            if (b->requires_grad) {
                auto& g = b->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i] * a->val.v[i];
            }
        };
    }
    return n;
}

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (auto& x : out.v) x *= s;
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, s]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i] * s;
        };
    }
    return n;
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->val;
    for (auto& x : out.v) x += s;
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i];
        };
    }
    return n;
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x *= x;
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i] * 2.0 * a->val.v[i];
        };
    }
    return n;
}

static double sigm(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Var silu(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = x * sigm(x);
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                double x = a->val.v[i];
                double s = sigm(x);
                g.v[i] += self->grad.v[i] * (s * (1.0 + x * (1.0 - s)));
            }
        };
    }
    return n;
}

Var sigmoid(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = sigm(x);
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                double s = sigm(a->val.v[i]);
                g.v[i] += self->grad.v[i] * s * (1.0 - s);
            }
        };
    }
    return n;
}

Var tanh_op(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = std::tanh(x);
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) {
                double t = std::tanh(a->val.v[i]);
                g.v[i] += self->grad.v[i] * (1.0 - t * t);
            }
        };
    }
    return n;
}

static double softplus_val(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Var softplus(const Var& a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = softplus_val(x);
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g.v[i] += self->grad.v[i] * sigm(a->val.v[i]);
        };
    }
    return n;
}

Var matmul(const Var& a, const Var& b) {
    if (a->val.cols != b->val.rows) throw std::invalid_argument("matmul: inner dims differ");
    Tensor out(a->val.rows, b->val.cols);
    emap(out) = emap(a->val) * emap(b->val);
    auto n = make(std::move(out), {a, b}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, b]() {
            if (a->requires_grad) emap(a->ensure_grad()) += emap(self->grad) * emap(b->val).transpose();
            if (b->requires_grad) emap(b->ensure_grad()) += emap(a->val).transpose() * emap(self->grad);
        };
    }
    return n;
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x->val.cols != w->val.rows) throw std::invalid_argument("linear: inner dims differ");
    if (b->val.rows != 1 || b->val.cols != w->val.cols) throw std::invalid_argument("linear: bad bias shape");
    Tensor out(x->val.rows, w->val.cols);
    emap(out) = emap(x->val) * emap(w->val);
    emap(out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->val.v.data(), b->val.cols);
    auto n = make(std::move(out), {x, w, b}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, x, w, b]() {
            if (x->requires_grad) emap(x->ensure_grad()) += emap(self->grad) * emap(w->val).transpose();
            if (w->requires_grad) emap(w->ensure_grad()) += emap(x->val).transpose() * emap(self->grad);
            if (b->requires_grad)
                Eigen::Map<Eigen::RowVectorXd>(b->ensure_grad().v.data(), b->val.cols) +=
                    emap(self->grad).colwise().sum();
        };
    }
    return n;
}

Var row_repeat(const Var& c, int reps) {
    int B = c->val.rows, W = c->val.cols;
    Tensor out(B * reps, W);
    for (int i = 0; i < B; ++i)
        for (int r = 0; r < reps; ++r)
            std::copy_n(&c->val.v[static_cast<size_t>(i) * W], W, &out.v[(static_cast<size_t>(i) * reps + r) * W]);
    auto n = make(std::move(out), {c}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, c, reps]() {
            int B = c->val.rows, W = c->val.cols;
            auto& g = c->ensure_grad();
            for (int i = 0; i < B; ++i)
                for (int r = 0; r < reps; ++r)
                    for (int j = 0; j < W; ++j)
                        g.v[static_cast<size_t>(i) * W + j] +=
                            self->grad.v[(static_cast<size_t>(i) * reps + r) * W + j];
        };
    }
    return n;
}

Var cols(const Var& a, int start, int len) {
    if (start < 0 || start + len > a->val.cols) throw std::invalid_argument("cols: out of range");
    Tensor out(a->val.rows, len);
    emap(out) = emap(a->val).middleCols(start, len);
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, start, len]() {
            emap(a->ensure_grad()).middleCols(start, len) += emap(self->grad);
        };
    }
    return n;
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
    int rows = xs[0]->val.rows, total = 0;
    for (auto& x : xs) {
        if (x->val.rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        total += x->val.cols;
    }
    Tensor out(rows, total);
    int off = 0;
    for (auto& x : xs) {
        emap(out).middleCols(off, x->val.cols) = emap(x->val);
        off += x->val.cols;
    }
    auto n = make(std::move(out), xs, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        auto parts = xs;
        n->backfn = [self, parts]() {
            int off = 0;
            for (auto& x : parts) {
                if (x->requires_grad)
                    emap(x->ensure_grad()) += emap(self->grad).middleCols(off, x->val.cols);
                off += x->val.cols;
            }
        };
    }
    return n;
}

Var gather_rows(const Var& table, const std::vector<int>& idx) {
    int W = table->val.cols;
    Tensor out(static_cast<int>(idx.size()), W);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= table->val.rows) throw std::invalid_argument("gather_rows: index out of range");
        std::copy_n(&table->val.v[static_cast<size_t>(idx[i]) * W], W, &out.v[i * W]);
    }
    auto n = make(std::move(out), {table}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, table, idx]() {
            int W = table->val.cols;
            auto& g = table->ensure_grad();
            for (size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < W; ++j)
                    g.v[static_cast<size_t>(idx[i]) * W + j] += self->grad.v[i * W + j];
        };
    }
    return n;
}

Var gather_elements(const Var& a, int out_rows, int out_cols,
                    std::shared_ptr<const std::vector<size_t>> map) {
    if (map->size() != static_cast<size_t>(out_rows) * out_cols)
        throw std::invalid_argument("gather_elements: map size mismatch");
    Tensor out(out_rows, out_cols);
    for (size_t k = 0; k < map->size(); ++k) out.v[k] = a->val.v[(*map)[k]];
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a, map]() {
            auto& g = a->ensure_grad();
            for (size_t k = 0; k < map->size(); ++k) g.v[(*map)[k]] += self->grad.v[k];
        };
    }
    return n;
}

Var layernorm(const Var& x, double eps) {
    int R = x->val.rows, C = x->val.cols;
    Tensor out(R, C);
    // cache per-row (mu, inv_std, xhat) implicitly via recomputation in backward
    std::vector<double> inv_std(R), mu(R);
    for (int i = 0; i < R; ++i) {
        const double* row = &x->val.v[static_cast<size_t>(i) * C];
        double m = 0;
        for (int j = 0; j < C; ++j) m += row[j];
        m /= C;
        double var = 0;
        for (int j = 0; j < C; ++j) var += (row[j] - m) * (row[j] - m);
        var /= C;
        double is = 1.0 / std::sqrt(var + eps);
        mu[i] = m;
        inv_std[i] = is;
        double* orow = &out.v[static_cast<size_t>(i) * C];
        for (int j = 0; j < C; ++j) orow[j] = (row[j] - m) * is;
    }
    auto n = make(std::move(out), {x}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, x, mu = std::move(mu), inv_std = std::move(inv_std)]() {
            int R = x->val.rows, C = x->val.cols;
            auto& g = x->ensure_grad();
            for (int i = 0; i < R; ++i) {
                const double* dy = &self->grad.v[static_cast<size_t>(i) * C];
                const double* xh = &self->val.v[static_cast<size_t>(i) * C];
                double mdy = 0, mdyxh = 0;
                for (int j = 0; j < C; ++j) {
                    mdy += dy[j];
                    mdyxh += dy[j] * xh[j];
                }
                mdy /= C;
                mdyxh /= C;
                double* gx = &g.v[static_cast<size_t>(i) * C];
                for (int j = 0; j < C; ++j) gx[j] += inv_std[i] * (dy[j] - mdy - xh[j] * mdyxh);
            }
        };
    }
    return n;
}

Var attention(const Var& q, const Var& k, const Var& v, int batch, int nq, int nk, int heads) {
    int W = q->val.cols;
    if (W % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    if (q->val.rows != batch * nq || k->val.rows != batch * nk || v->val.rows != batch * nk ||
        k->val.cols != W || v->val.cols != W)
        throw std::invalid_argument("attention: bad shapes");
    if (nk == 0) throw std::invalid_argument("attention: empty key sequence");
    int d = W / heads;
    double sc = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out(batch * nq, W);
    // cache softmax probabilities per (batch, head): nq x nk each
    auto probs = std::make_shared<std::vector<EMat>>();
    probs->reserve(static_cast<size_t>(batch) * heads);
    for (int b = 0; b < batch; ++b) {
        CMap Q(&q->val.v[static_cast<size_t>(b) * nq * W], nq, W);
        CMap K(&k->val.v[static_cast<size_t>(b) * nk * W], nk, W);
        CMap V(&v->val.v[static_cast<size_t>(b) * nk * W], nk, W);
        Map O(&out.v[static_cast<size_t>(b) * nq * W], nq, W);
        for (int h = 0; h < heads; ++h) {
            EMat S = Q.middleCols(h * d, d) * K.middleCols(h * d, d).transpose() * sc;
            for (int i = 0; i < nq; ++i) {
                double mx = S.row(i).maxCoeff();
                S.row(i) = (S.row(i).array() - mx).exp();
                S.row(i) /= S.row(i).sum();
            }
            O.middleCols(h * d, d) = S * V.middleCols(h * d, d);
            probs->push_back(std::move(S));
        }
    }
    auto n = make(std::move(out), {q, k, v}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, q, k, v, batch, nq, nk, heads, d, sc, probs]() {
            int W = q->val.cols;
            if (q->requires_grad) q->ensure_grad();
            if (k->requires_grad) k->ensure_grad();
            if (v->requires_grad) v->ensure_grad();
            for (int b = 0; b < batch; ++b) {
                CMap Q(&q->val.v[static_cast<size_t>(b) * nq * W], nq, W);
                CMap K(&k->val.v[static_cast<size_t>(b) * nk * W], nk, W);
                CMap V(&v->val.v[static_cast<size_t>(b) * nk * W], nk, W);
                CMap dO(&self->grad.v[static_cast<size_t>(b) * nq * W], nq, W);
                for (int h = 0; h < heads; ++h) {
                    const EMat& P = (*probs)[static_cast<size_t>(b) * heads + h];
                    EMat dOh = dO.middleCols(h * d, d);
                    EMat dP = dOh * V.middleCols(h * d, d).transpose();  // nq x nk
                    EMat dS(nq, nk);
                    for (int i = 0; i < nq; ++i) {
                        double dot = (dP.row(i).array() * P.row(i).array()).sum();
                        dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
                    }
                    if (v->requires_grad) {
                        Map gV(&v->grad.v[static_cast<size_t>(b) * nk * W], nk, W);
                        gV.middleCols(h * d, d) += P.transpose() * dOh;
                    }
                    if (q->requires_grad) {
                        Map gQ(&q->grad.v[static_cast<size_t>(b) * nq * W], nq, W);
                        gQ.middleCols(h * d, d) += dS * K.middleCols(h * d, d) * sc;
                    }
                    if (k->requires_grad) {
                        Map gK(&k->grad.v[static_cast<size_t>(b) * nk * W], nk, W);
                        gK.middleCols(h * d, d) += dS.transpose() * Q.middleCols(h * d, d) * sc;
                    }
                }
            }
        };
    }
    return n;
}

Var sum_all(const Var& a) {
    double s = 0;
    for (double x : a->val.v) s += x;
    auto n = make(Tensor::scalar(s), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            auto& g = a->ensure_grad();
            for (auto& x : g.v) x += self->grad.v[0];
        };
    }
    return n;
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->val.size())); }

Var mse(const Var& a, const Var& b) { return mean_all(square(sub(a, b))); }

Var rowwise_sq_diff(const Var& a, const Var& b) { return mean_rows(square(sub(a, b))); }

Var mean_rows(const Var& a) {
    int R = a->val.rows, C = a->val.cols;
    Tensor out(R, 1);
    for (int i = 0; i < R; ++i) {
        double s = 0;
        for (int j = 0; j < C; ++j) s += a->val(i, j);
        out.v[i] = s / C;
    }
    auto n = make(std::move(out), {a}, nullptr);
    if (n->requires_grad) {
        Node* self = n.get();
        n->backfn = [self, a]() {
            int R = a->val.rows, C = a->val.cols;
            auto& g = a->ensure_grad();
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < C; ++j) g(i, j) += self->grad.v[i] / C;
        };
    }
    return n;
}

}  // namespace aptlab::ag
