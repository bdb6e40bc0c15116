#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/refine.hpp"
#include "support/oracles.hpp"
#include "support/util.hpp"

using namespace sfda;
using sfda::test::random_binary;
using sfda::test::random_tensor;

TEST_CASE("modulate_features: identity, annihilator, loop oracle") {
    Rng rng(1);
    Tensor feats = random_tensor({2, 4, 5, 5}, rng);

    Tensor ones = Tensor::full({2, 5, 5}, 1.0f);
    CHECK(max_abs_diff(modulate_features(feats, ones), feats) == 0.0f);

    Tensor zeros({2, 5, 5});
    Tensor z = modulate_features(feats, zeros);
    for (size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0f);

    for (int trial = 0; trial < 50; ++trial) {
        Tensor f = random_tensor({2, 3, 6, 6}, rng);
        Tensor s = random_tensor({2, 6, 6}, rng, 0.0, 1.0);
        Tensor m = modulate_features(f, s);
        for (int b = 0; b < 2; ++b)
            for (int k = 0; k < 3; ++k)
                for (int h = 0; h < 6; ++h)
                    for (int w = 0; w < 6; ++w)
                        CHECK(std::abs(m.at(b, k, h, w) - oracle::modulated_at(f, s, b, k, h, w)) <
                              1e-6);
    }

    CHECK_THROWS_AS(modulate_features(feats, Tensor({2, 4, 4})), InvalidArgument);
}

TEST_CASE("prototypes: single reliable pixel reproduces its feature") {
    Tensor e({1, 3, 2, 2});
    e.at(0, 0, 0, 0) = 0.3f;
    e.at(0, 1, 0, 0) = -1.2f;
    e.at(0, 2, 0, 0) = 2.5f;
    Tensor labels({1, 2, 2});
    labels.at(0, 0, 0) = 1.0f;
    Tensor reliable({1, 2, 2});
    reliable.at(0, 0, 0) = 1.0f;
    Tensor probs = Tensor::full({1, 2, 2}, 0.9f);

    Prototypes p = compute_prototypes(e, labels, reliable, probs, SegClass::cup);
    CHECK(p.valid_ob);
    CHECK_FALSE(p.valid_bg); // no reliable background pixels
    CHECK(p.z_ob[0] == doctest::Approx(0.3));
    CHECK(p.z_ob[1] == doctest::Approx(-1.2));
    CHECK(p.z_ob[2] == doctest::Approx(2.5));
}

TEST_CASE("prototypes: equal weights average two pixels") {
    Tensor e({1, 2, 1, 2});
    e.at(0, 0, 0, 0) = 1.0f;
    e.at(0, 1, 0, 0) = 2.0f;
    e.at(0, 0, 0, 1) = 3.0f;
    e.at(0, 1, 0, 1) = 6.0f;
    Tensor labels = Tensor::full({1, 1, 2}, 1.0f);
    Tensor reliable = Tensor::full({1, 1, 2}, 1.0f);
    Tensor probs = Tensor::full({1, 1, 2}, 0.5f);
    Prototypes p = compute_prototypes(e, labels, reliable, probs, SegClass::disc);
    CHECK(p.z_ob[0] == doctest::Approx(2.0));
    CHECK(p.z_ob[1] == doctest::Approx(4.0));
}

TEST_CASE("prototypes match the double-loop oracle on random instances") {
    Rng rng(2);
    for (int trial = 0; trial < 60; ++trial) {
        Tensor e = random_tensor({2, 5, 16, 16}, rng);
        Tensor labels = random_binary({2, 16, 16}, rng, 0.4);
        Tensor reliable = random_binary({2, 16, 16}, rng, 0.7);
        Tensor probs = random_tensor({2, 16, 16}, rng, 0.0, 1.0);
        Prototypes got = compute_prototypes(e, labels, reliable, probs, SegClass::cup);
        oracle::ProtoPair want = oracle::prototypes(e, labels, reliable, probs);
        CHECK(got.valid_ob == want.valid_ob);
        CHECK(got.valid_bg == want.valid_bg);
        for (int k = 0; k < 5; ++k) {
            if (want.valid_ob)
                CHECK(std::abs(got.z_ob[static_cast<size_t>(k)] - want.z_ob[static_cast<size_t>(k)]) < 1e-5);
            if (want.valid_bg)
                CHECK(std::abs(got.z_bg[static_cast<size_t>(k)] - want.z_bg[static_cast<size_t>(k)]) < 1e-5);
        }
    }
}

TEST_CASE("prototype convex-envelope containment") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor e = random_tensor({1, 4, 8, 8}, rng, -3.0, 3.0);
        Tensor labels = random_binary({1, 8, 8}, rng, 0.5);
        Tensor reliable = random_binary({1, 8, 8}, rng, 0.6);
        Tensor probs = random_tensor({1, 8, 8}, rng, 0.05, 0.95);
        Prototypes p = compute_prototypes(e, labels, reliable, probs, SegClass::cup);
        for (int k = 0; k < 4; ++k) {
            float lo_ob = 1e30f, hi_ob = -1e30f, lo_bg = 1e30f, hi_bg = -1e30f;
            for (int h = 0; h < 8; ++h)
                for (int w = 0; w < 8; ++w) {
                    if (reliable.at(0, h, w) < 0.5f) continue;
                    const float v = e.at(0, k, h, w);
                    if (labels.at(0, h, w) >= 0.5f) {
                        lo_ob = std::min(lo_ob, v);
                        hi_ob = std::max(hi_ob, v);
                    } else {
                        lo_bg = std::min(lo_bg, v);
                        hi_bg = std::max(hi_bg, v);
                    }
                }
            if (p.valid_ob) {
                CHECK(p.z_ob[static_cast<size_t>(k)] >= lo_ob - 1e-5f);
                CHECK(p.z_ob[static_cast<size_t>(k)] <= hi_ob + 1e-5f);
            }
            if (p.valid_bg) {
                CHECK(p.z_bg[static_cast<size_t>(k)] >= lo_bg - 1e-5f);
                CHECK(p.z_bg[static_cast<size_t>(k)] <= hi_bg + 1e-5f);
            }
        }
    }
}

TEST_CASE("feature_distances: zero at prototype, 3-4-5, loop oracle, scale covariance") {
    Prototypes p;
    p.class_id = SegClass::cup;
    p.valid_ob = p.valid_bg = true;
    p.z_ob = {3.0f, 4.0f};
    p.z_bg = {0.0f, 0.0f};
    Tensor e({1, 2, 1, 1});
    e.at(0, 0, 0, 0) = 3.0f;
    e.at(0, 1, 0, 0) = 4.0f;
    auto [d_ob, d_bg] = feature_distances(e, p);
    CHECK(d_ob.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(d_bg.at(0, 0, 0) == doctest::Approx(5.0)); // 3-4-5

    Rng rng(4);
    for (int trial = 0; trial < 60; ++trial) {
        Tensor ep = random_tensor({1, 4, 7, 7}, rng);
        Prototypes q;
        q.valid_ob = q.valid_bg = true;
        q.z_ob.resize(4);
        q.z_bg.resize(4);
        for (int k = 0; k < 4; ++k) {
            q.z_ob[static_cast<size_t>(k)] = static_cast<float>(rng.uniform(-1, 1));
            q.z_bg[static_cast<size_t>(k)] = static_cast<float>(rng.uniform(-1, 1));
        }
        auto [dob, dbg] = feature_distances(ep, q);
        std::vector<double> z_ob(q.z_ob.begin(), q.z_ob.end());
        std::vector<double> z_bg(q.z_bg.begin(), q.z_bg.end());
        for (int h = 0; h < 7; ++h)
            for (int w = 0; w < 7; ++w) {
                CHECK(std::abs(dob.at(0, h, w) - oracle::distance_at(ep, z_ob, 0, h, w)) < 1e-5);
                CHECK(std::abs(dbg.at(0, h, w) - oracle::distance_at(ep, z_bg, 0, h, w)) < 1e-5);
            }

        // scaling e' and prototypes by c > 0 scales distances by c
        const float c = static_cast<float>(rng.uniform(0.5, 4.0));
        Tensor ec(ep.shape());
        for (size_t i = 0; i < ep.numel(); ++i) ec[i] = c * ep[i];
        Prototypes qc = q;
        for (int k = 0; k < 4; ++k) {
            qc.z_ob[static_cast<size_t>(k)] *= c;
            qc.z_bg[static_cast<size_t>(k)] *= c;
        }
        auto [dob_c, dbg_c] = feature_distances(ec, qc);
        for (size_t i = 0; i < dob.numel(); ++i) {
            CHECK(dob_c[i] == doctest::Approx(c * dob[i]).epsilon(1e-3));
            CHECK(dbg_c[i] == doctest::Approx(c * dbg[i]).epsilon(1e-3));
        }
    }

    Prototypes invalid;
    invalid.valid_ob = false;
    invalid.valid_bg = true;
    CHECK_THROWS_AS(feature_distances(e, invalid), ContractViolation);
}

TEST_CASE("refined mask: exhaustive 12-case truth table") {
    // (u<eta) x (y) x sign(d_ob - d_bg): expected bit per Eq. 9 semantics
    struct Case {
        bool reliable;
        bool label;
        int sign; // -1: d_ob < d_bg, 0: tie, +1: d_ob > d_bg
        int expect;
    };
    const Case cases[] = {
        {false, false, -1, 0}, {false, false, 0, 0}, {false, false, +1, 0},
        {false, true, -1, 0},  {false, true, 0, 0},  {false, true, +1, 0},
        {true, false, -1, 0},  {true, false, 0, 0},  {true, false, +1, 1},
        {true, true, -1, 1},   {true, true, 0, 0},   {true, true, +1, 0},
    };
    const float eta = 0.05f;
    for (const auto& c : cases) {
        Tensor u = Tensor::full({1, 1, 1}, c.reliable ? 0.01f : 0.2f);
        Tensor y = Tensor::full({1, 1, 1}, c.label ? 1.0f : 0.0f);
        Tensor d_ob = Tensor::full({1, 1, 1}, 0.5f);
        Tensor d_bg = Tensor::full({1, 1, 1}, c.sign < 0 ? 0.8f : (c.sign > 0 ? 0.2f : 0.5f));
        Tensor m = refined_mask(u, eta, y, d_ob, d_bg);
        CHECK(m[0] == static_cast<float>(c.expect));
        // cross-check against the independent oracle enumeration
        CHECK(oracle::refined_mask_bit(c.reliable, c.label, 0.5,
                                       c.sign < 0 ? 0.8 : (c.sign > 0 ? 0.2 : 0.5)) == c.expect);
    }
}

TEST_CASE("refined mask is a subset of the uncertainty mask") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor u = random_tensor({1, 6, 6}, rng, 0.0, 0.1);
        Tensor y = random_binary({1, 6, 6}, rng);
        Tensor d_ob = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
        Tensor d_bg = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
        const float eta = static_cast<float>(rng.uniform(0.01, 0.09));
        Tensor m = refined_mask(u, eta, y, d_ob, d_bg);
        for (size_t i = 0; i < m.numel(); ++i) {
            const float unc = u[i] < eta ? 1.0f : 0.0f;
            CHECK(m[i] <= unc);
        }
    }
}

TEST_CASE("refine_class falls back to the uncertainty mask when prototypes degenerate") {
    Rng rng(6);
    Tensor feats = random_tensor({1, 3, 6, 6}, rng);
    Tensor sal = Tensor::full({1, 6, 6}, 1.0f);
    Tensor labels = Tensor::full({1, 6, 6}, 1.0f); // all object -> no background pixels
    Tensor u = random_tensor({1, 6, 6}, rng, 0.0, 0.1);
    Tensor probs = random_tensor({1, 6, 6}, rng, 0.1, 0.9);
    ClassRefinement ref = refine_class(feats, sal, labels, u, 0.05f, probs, SegClass::cup);
    CHECK(ref.fallback);
    for (size_t i = 0; i < ref.mask.numel(); ++i)
        CHECK(ref.mask[i] == (u[i] < 0.05f ? 1.0f : 0.0f));
}

TEST_CASE("refine_class pipeline is pure (same inputs, same mask)") {
    Rng rng(7);
    Tensor feats = random_tensor({2, 4, 8, 8}, rng);
    Tensor sal = random_tensor({2, 8, 8}, rng, 0.0, 1.0);
    Tensor labels = random_binary({2, 8, 8}, rng, 0.4);
    Tensor u = random_tensor({2, 8, 8}, rng, 0.0, 0.1);
    Tensor probs = random_tensor({2, 8, 8}, rng, 0.0, 1.0);
    ClassRefinement a = refine_class(feats, sal, labels, u, 0.05f, probs, SegClass::disc);
    ClassRefinement b = refine_class(feats, sal, labels, u, 0.05f, probs, SegClass::disc);
    CHECK(max_abs_diff(a.mask, b.mask) == 0.0f);
}

TEST_CASE("masked CE: perfect prediction, single-pixel ln2, empty mask") {
    Tensor y({1, 2, 2, 2});
    y[0] = 1.0f;
    y[3] = 1.0f;
    Tensor p(y.shape());
    for (size_t i = 0; i < p.numel(); ++i) p[i] = y[i] == 1.0f ? 1.0f - 1e-7f : 1e-7f;
    Tensor all = Tensor::full(y.shape(), 1.0f);
    CHECK(masked_ce_loss(p, y, all) < 1e-5);

    // one kept pixel, y=1, p=0.5 -> ln 2
    Tensor mask(y.shape());
    mask[0] = 1.0f;
    Tensor phalf = Tensor::full(y.shape(), 0.5f);
    CHECK(masked_ce_loss(phalf, y, mask) == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Tensor none(y.shape());
    CHECK(masked_ce_loss(phalf, y, none) == 0.0);
}

TEST_CASE("masked CE matches the loop oracle and is non-negative") {
    Rng rng(8);
    for (int trial = 0; trial < 60; ++trial) {
        Tensor p = random_tensor({2, 2, 8, 8}, rng, 0.001, 0.999);
        Tensor y = random_binary({2, 2, 8, 8}, rng);
        Tensor m = random_binary({2, 2, 8, 8}, rng, 0.6);
        const double got = masked_ce_loss(p, y, m);
        CHECK(std::abs(got - oracle::masked_ce(p, y, m)) < 1e-5);
        CHECK(got >= 0.0);
    }
}

TEST_CASE("masked CE gradient matches central finite differences (double oracle)") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor p = random_tensor({1, 2, 4, 4}, rng, 0.05, 0.95);
        Tensor y = random_binary({1, 2, 4, 4}, rng);
        Tensor m = random_binary({1, 2, 4, 4}, rng, 0.7);
        Tensor g = masked_ce_grad(p, y, m);
        for (size_t i = 0; i < p.numel(); ++i) {
            if (m[i] < 0.5f) {
                CHECK(g[i] == 0.0f);
                continue;
            }
            const float h = 1e-3f;
            Tensor pp = p, pm = p;
            pp[i] += h;
            pm[i] -= h;
            const double fd = (oracle::masked_ce(pp, y, m) - oracle::masked_ce(pm, y, m)) / (2.0 * h);
            CHECK(sfda::test::rel_err(g[i], fd) < 1e-3);
        }
    }
}
