#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "aptlab/discriminator.hpp"
#include "aptlab/losses.hpp"

using namespace aptlab;
using ag::Var;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig m;
    m.depth = 3;
    m.width = 8;
    m.heads = 2;
    m.num_classes = 4;
    return m;
}

Discriminator make_nontrivial_disc(uint64_t seed) {
    Rng rng(seed);
    ModelConfig cfg = tiny_cfg();
    Discriminator d(cfg, HeadConfig::defaults_for_depth(cfg.depth), rng);
    // break the zero-init so logits depend on everything
    for (auto& [n, p] : d.params()) init_normal(p->val, rng, 0.2);
    return d;
}

}  // namespace

TEST_CASE("head layer defaults: proportional placement, last = depth") {
    CHECK(HeadConfig::defaults_for_depth(36).layer_indices == std::vector<int>{16, 26, 36});
    CHECK(HeadConfig::defaults_for_depth(12).layer_indices == std::vector<int>{5, 9, 12});
    CHECK(HeadConfig::defaults_for_depth(3).layer_indices == std::vector<int>{1, 2, 3});
    for (int depth : {3, 4, 6, 8, 12, 24, 36, 48}) {
        auto hc = HeadConfig::defaults_for_depth(depth);
        REQUIRE(hc.layer_indices.size() == 3);
        CHECK(hc.layer_indices[0] < hc.layer_indices[1]);
        CHECK(hc.layer_indices[1] < hc.layer_indices[2]);
        CHECK(hc.layer_indices[2] == depth);
    }
    CHECK_THROWS_AS((HeadConfig{{2, 1, 3}}.validate(3)), ConfigError);
    CHECK_THROWS_AS((HeadConfig{{1, 2}}.validate(3)), ConfigError);
    CHECK_THROWS_AS((HeadConfig{}.validate(3)), ConfigError);
    // single-head and deep-stack variants are expressible (ablation surface)
    CHECK_NOTHROW((HeadConfig{{3}}.validate(3)));
    CHECK_NOTHROW((HeadConfig{{1, 2, 3, 4, 5, 6}}.validate(6)));
}

TEST_CASE("build_discriminator copies the backbone bitwise and checks provenance") {
    Rng rng(1);
    ModelConfig cfg = tiny_cfg();
    Backbone teacher(cfg, rng);
    for (auto& [n, p] : teacher.params()) init_normal(p->val, rng, 0.3);
    Checkpoint ck = Checkpoint::from_params(teacher.params(), cfg, "pretrain", 1000, 7);
    Rng rng2(2);
    Discriminator d = build_discriminator(ck, HeadConfig::defaults_for_depth(cfg.depth), rng2);
    CHECK(d.backbone_origin_stage == "pretrain");
    auto& tp = teacher.params();
    auto& dp = d.backbone().params();
    REQUIRE(tp.size() == dp.size());
    for (size_t i = 0; i < tp.size(); ++i) {
        REQUIRE(tp[i].first == dp[i].first);
        for (size_t k = 0; k < tp[i].second->val.size(); ++k)
            CHECK(static_cast<float>(tp[i].second->val.v[k]) == static_cast<float>(dp[i].second->val.v[k]));
    }

    Checkpoint bad = ck;
    bad.stage = "distill";
    Rng rng3(3);
    CHECK_THROWS_AS(build_discriminator(bad, HeadConfig::defaults_for_depth(cfg.depth), rng3), ConfigError);
    Discriminator d2 = build_discriminator(bad, HeadConfig::defaults_for_depth(cfg.depth), rng3, true);
    CHECK(d2.backbone_origin_stage == "distill");
}

TEST_CASE("head init is seed-deterministic") {
    Rng a(42), b(42), c(43);
    ModelConfig cfg = tiny_cfg();
    auto hc = HeadConfig::defaults_for_depth(cfg.depth);
    Discriminator d1(cfg, hc, a), d2(cfg, hc, b), d3(cfg, hc, c);
    bool all_eq = true, any_diff = false;
    for (size_t i = 0; i < d1.params().size(); ++i) {
        for (size_t k = 0; k < d1.params()[i].second->val.size(); ++k) {
            if (d1.params()[i].second->val.v[k] != d2.params()[i].second->val.v[k]) all_eq = false;
            if (d1.params()[i].second->val.v[k] != d3.params()[i].second->val.v[k]) any_diff = true;
        }
    }
    CHECK(all_eq);
    CHECK(any_diff);
}

TEST_CASE("zero-init fuse projection gives logit 0 everywhere") {
    Rng rng(5);
    ModelConfig cfg = tiny_cfg();
    Discriminator d(cfg, HeadConfig::defaults_for_depth(cfg.depth), rng);
    Rng data(6);
    for (int i = 0; i < 4; ++i) {
        auto [l, t] = d.logit(data.normal_tensor(1, 2), {i % 4}, 3.0, data);
        CHECK(l == 0.0);
        CHECK(t >= 0.0);
        CHECK(t <= 1.0);
    }
}

TEST_CASE("logits shape, determinism, and dependence on t and class") {
    Discriminator d = make_nontrivial_disc(7);
    Rng data(8);
    ag::NoGradGuard ng;
    Tensor x = data.normal_tensor(3, 2);
    Var l1 = d.logits(ag::constant(x), {0.2, 0.5, 0.9}, {0, 1, 2});
    CHECK(l1->val.rows == 3);
    CHECK(l1->val.cols == 1);
    Var l2 = d.logits(ag::constant(x), {0.2, 0.5, 0.9}, {0, 1, 2});
    for (int i = 0; i < 3; ++i) CHECK(l1->val(i, 0) == l2->val(i, 0));
    Var l3 = d.logits(ag::constant(x), {0.9, 0.5, 0.2}, {0, 1, 2});
    CHECK(l3->val(0, 0) != l1->val(0, 0));
    Var l4 = d.logits(ag::constant(x), {0.2, 0.5, 0.9}, {3, 1, 2});
    CHECK(l4->val(0, 0) != l1->val(0, 0));
}

TEST_CASE("per-row logits match single-row evaluation") {
    Discriminator d = make_nontrivial_disc(9);
    Rng data(10);
    ag::NoGradGuard ng;
    Tensor x = data.normal_tensor(4, 2);
    std::vector<double> t = {0.1, 0.4, 0.7, 1.0};
    std::vector<int> ids = {0, 1, 2, 3};
    Var batched = d.logits(ag::constant(x), t, ids);
    for (int i = 0; i < 4; ++i) {
        Tensor row(1, 2, {x(i, 0), x(i, 1)});
        Var one = d.logits(ag::constant(std::move(row)), {t[static_cast<size_t>(i)]}, {ids[static_cast<size_t>(i)]});
        CHECK(batched->val(i, 0) == doctest::Approx(one->val(0, 0)).epsilon(1e-12));
    }
}

TEST_CASE("ensembled logit draws uniform shifted timesteps") {
    Discriminator d = make_nontrivial_disc(11);
    Rng rng(12);
    Tensor sample = Tensor::row({0.3, -0.4});
    const int n = 20000;
    std::vector<double> ts(n);
    for (auto& t : ts) t = d.logit(sample, {1}, 1.0, rng).second;
    std::sort(ts.begin(), ts.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) ks = std::max(ks, std::abs(ts[i] - (i + 0.5) / n));
    CHECK(ks < 0.02);  // s = 1: t is plain U(0,1)
}

TEST_CASE("Monte-Carlo ensemble mean converges to the quadrature expectation") {
    Discriminator d = make_nontrivial_disc(13);
    Tensor sample = Tensor::row({0.5, 0.2});
    const double s = 3.0;
    double ref = d.logit_expected(sample, {2}, s, 512);
    // quadrature refinement is self-consistent
    CHECK(d.logit_expected(sample, {2}, s, 256) == doctest::Approx(ref).epsilon(1e-4));
    Rng rng(14);
    const int n = 40000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += d.logit(sample, {2}, s, rng).first;
    acc /= n;
    CHECK(acc == doctest::Approx(ref).epsilon(0.02));
    CHECK_THROWS_AS(d.logit_expected(sample, {2}, s, 1), std::invalid_argument);
}

TEST_CASE("head_forward is single-query cross attention with the right shape") {
    Discriminator d = make_nontrivial_disc(15);
    Rng data(16);
    ag::NoGradGuard ng;
    int W = d.config().width;
    Var hidden = ag::constant(data.normal_tensor(2 * 1, W));  // point task: 1 token
    Var out = d.head_forward(0, hidden, 2, 1);
    CHECK(out->val.rows == 2);
    CHECK(out->val.cols == W);
    CHECK_THROWS_AS(d.head_forward(0, hidden, 2, 0), std::invalid_argument);
}

TEST_CASE("discriminator aR1/sigma^2 approaches the exact input-gradient norm") {
    Discriminator d = make_nontrivial_disc(17);
    Tensor x = Tensor::row({0.4, -0.6});
    double t = 0.35;
    double exact = exact_r1_oracle(d, x, {1}, t);
    REQUIRE(exact > 1e-6);
    // fixed-t critic isolates the sigma limit from the timestep ensemble
    Critic crit = [&](const Var& xv) { return d.logits(xv, {t}, {1}); };
    Rng rng(18);
    const int n = 4000;
    double acc = 0.0;
    const double sigma = 1e-3;
    for (int i = 0; i < n; ++i) acc += approx_r1(crit, x, sigma, rng);
    double est = acc / n / (sigma * sigma);
    CHECK(std::abs(est - exact) / exact < 0.1);
}

TEST_CASE("discriminator-level aR1 shares one timestep draw per pair") {
    // with sigma tiny the pair difference must vanish; if clean and perturbed
    // used different t draws the squared difference would stay O(1)
    Discriminator d = make_nontrivial_disc(19);
    Tensor x = Tensor::row({0.1, 0.9});
    Rng rng(20);
    for (int i = 0; i < 50; ++i) {
        double v = approx_r1(d, x, {0}, 1e-9, 3.0, rng);
        CHECK(v < 1e-12);
    }
}
