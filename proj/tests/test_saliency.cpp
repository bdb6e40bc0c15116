#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sfda/contrastive.hpp"
#include "sfda/refine.hpp"
#include "sfda/saliency.hpp"
#include "support/oracles.hpp"
#include "support/util.hpp"

using namespace sfda;
using sfda::test::random_tensor;

TEST_CASE("class_score: hand examples and loop oracle") {
    Tensor logits({1, 2, 2, 2});
    logits.at(0, 0, 0, 0) = 1.0f;
    logits.at(0, 0, 0, 1) = 2.0f;
    logits.at(0, 0, 1, 0) = 3.0f;
    logits.at(0, 0, 1, 1) = 4.0f;
    CHECK(class_score(logits, SegClass::cup)[0] == doctest::Approx(10.0));
    CHECK(class_score(logits, SegClass::disc)[0] == doctest::Approx(0.0));

    Tensor zeros({2, 2, 4, 4});
    Tensor zscore = class_score(zeros, SegClass::cup);
    CHECK(zscore[0] == 0.0f);
    CHECK(zscore[1] == 0.0f);

    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor lg = random_tensor({2, 2, 7, 5}, rng);
        Tensor s = class_score(lg, SegClass::disc);
        for (int b = 0; b < 2; ++b)
            CHECK(std::abs(s[static_cast<size_t>(b)] - oracle::class_score(lg, b, 1)) < 1e-5);
    }
}

TEST_CASE("spatial mean: linear-map and zero cases, loop oracle") {
    // d(score)/dA = 2 everywhere for one channel -> alpha_0 = 2
    Tensor grads = Tensor::full({1, 1, 4, 4}, 2.0f);
    Tensor alpha = spatial_mean_per_channel(grads);
    CHECK(alpha.at(0, 0) == doctest::Approx(2.0));

    // score independent of a channel -> alpha 0 for it
    Tensor g2({1, 2, 3, 3});
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) g2.at(0, 0, h, w) = 1.5f;
    Tensor a2 = spatial_mean_per_channel(g2);
    CHECK(a2.at(0, 0) == doctest::Approx(1.5));
    CHECK(a2.at(0, 1) == doctest::Approx(0.0));

    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor g = random_tensor({2, 5, 6, 6}, rng);
        Tensor a = spatial_mean_per_channel(g);
        for (int b = 0; b < 2; ++b)
            for (int k = 0; k < 5; ++k)
                CHECK(std::abs(a.at(b, k) - oracle::alpha(g, b, k)) < 1e-6);
    }
}

TEST_CASE("gradcam weights on tinyunet equal the 1x1 head weights") {
    nn::ModelConfig cfg;
    cfg.base_width = 4;
    cfg.feature_channels = 4;
    cfg.dropout = 0.0f;
    cfg.init_seed = 11;
    auto model = nn::make_model(cfg);
    Rng rng(3);
    Tensor batch = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    nn::ForwardResult fr = model->forward(batch);

    Tensor head_w;
    for (auto& p : model->parameters())
        if (p.name == "head.w") head_w = *p.value; // [2, K, 1, 1]

    for (SegClass c : {SegClass::cup, SegClass::disc}) {
        Tensor alpha = gradcam_weights(*model, fr, c);
        for (int b = 0; b < 2; ++b)
            for (int k = 0; k < 4; ++k)
                CHECK(alpha.at(b, k) ==
                      doctest::Approx(head_w.at(static_cast<int>(c), k, 0, 0)).epsilon(1e-5));
    }
}

TEST_CASE("gradcam weights: finite differences through the head on tinyunet") {
    nn::ModelConfig cfg;
    cfg.base_width = 4;
    cfg.feature_channels = 4;
    cfg.dropout = 0.0f;
    cfg.init_seed = 21;
    auto model = nn::make_model(cfg);
    Rng rng(4);
    Tensor batch = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    nn::ForwardResult fr = model->forward(batch);

    for (SegClass c : {SegClass::cup, SegClass::disc}) {
        Tensor alpha = gradcam_weights(*model, fr, c);
        const int ch = static_cast<int>(c);
        for (int k = 0; k < 4; ++k) {
            // FD of the spatial-sum score w.r.t. each feature pixel, then GAP
            double fd_mean = 0.0;
            const float h = 1e-2f;
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    Tensor fp = fr.features, fm = fr.features;
                    fp.at(0, k, y, x) += h;
                    fm.at(0, k, y, x) -= h;
                    const Tensor lp = model->head_forward(fp);
                    const Tensor lm = model->head_forward(fm);
                    const double sp = oracle::class_score(lp, 0, ch);
                    const double sm = oracle::class_score(lm, 0, ch);
                    fd_mean += (sp - sm) / (2.0 * h);
                }
            fd_mean /= 64.0;
            CHECK(sfda::test::rel_err(alpha.at(0, k), fd_mean) < 1e-3);
        }
    }
}

TEST_CASE("gradcam heatmap: hand cases and loop oracle") {
    // alpha = (1), A all -1 -> ReLU clamps to 0
    Tensor alpha1 = Tensor::full({1, 1}, 1.0f);
    Tensor neg = Tensor::full({1, 1, 3, 3}, -1.0f);
    SaliencyMap m1 = gradcam_heatmap(alpha1, neg, SegClass::cup);
    for (size_t i = 0; i < m1.e_gc.numel(); ++i) CHECK(m1.e_gc[i] == 0.0f);

    // alpha = (1,1), A^0 = A^1 = 0.5 -> constant 1.0
    Tensor alpha2 = Tensor::full({1, 2}, 1.0f);
    Tensor half = Tensor::full({1, 2, 2, 2}, 0.5f);
    SaliencyMap m2 = gradcam_heatmap(alpha2, half, SegClass::disc);
    for (size_t i = 0; i < m2.e_gc.numel(); ++i) CHECK(m2.e_gc[i] == doctest::Approx(1.0));

    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        Tensor alpha = random_tensor({2, 6}, rng);
        Tensor feats = random_tensor({2, 6, 5, 5}, rng);
        SaliencyMap m = gradcam_heatmap(alpha, feats, SegClass::cup);
        for (int b = 0; b < 2; ++b)
            for (int h = 0; h < 5; ++h)
                for (int w = 0; w < 5; ++w)
                    CHECK(std::abs(m.e_gc.at(b, h, w) - oracle::heatmap_at(alpha, feats, b, h, w)) <
                          1e-5);
    }
}

TEST_CASE("heatmap non-negativity on random inputs") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor alpha = random_tensor({1, 4}, rng, -2.0, 2.0);
        Tensor feats = random_tensor({1, 4, 6, 6}, rng, -2.0, 2.0);
        SaliencyMap m = gradcam_heatmap(alpha, feats, SegClass::cup);
        for (size_t i = 0; i < m.e_gc.numel(); ++i) CHECK(m.e_gc[i] >= 0.0f);
    }
}

TEST_CASE("normalize_saliency: scaling, zero map, constant map") {
    SaliencyMap m;
    m.e_gc = Tensor({1, 2, 2});
    m.e_gc.at(0, 0, 0) = 0.0f;
    m.e_gc.at(0, 0, 1) = 1.0f;
    m.e_gc.at(0, 1, 0) = 2.0f;
    m.e_gc.at(0, 1, 1) = 4.0f;
    SaliencyMap n = normalize_saliency(m);
    CHECK(n.normalized);
    CHECK(n.e_gc.at(0, 1, 1) == doctest::Approx(1.0));
    CHECK(n.e_gc.at(0, 0, 1) == doctest::Approx(0.25));

    SaliencyMap zero;
    zero.e_gc = Tensor({1, 3, 3});
    SaliencyMap nz = normalize_saliency(zero);
    for (size_t i = 0; i < nz.e_gc.numel(); ++i) {
        CHECK(nz.e_gc[i] == 0.0f);
        CHECK(std::isfinite(nz.e_gc[i]));
    }

    SaliencyMap constant;
    constant.e_gc = Tensor::full({1, 3, 3}, 0.7f);
    SaliencyMap nc = normalize_saliency(constant);
    for (size_t i = 0; i < nc.e_gc.numel(); ++i) CHECK(nc.e_gc[i] == doctest::Approx(1.0));
}

TEST_CASE("linearity of the weights and positive-scale equivariance of the heatmap") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor grads = random_tensor({1, 3, 4, 4}, rng);
        Tensor alpha = spatial_mean_per_channel(grads);
        for (const float c : {2.0f, -1.0f}) {
            Tensor scaled(grads.shape());
            for (size_t i = 0; i < grads.numel(); ++i) scaled[i] = c * grads[i];
            Tensor alpha_c = spatial_mean_per_channel(scaled);
            for (size_t i = 0; i < alpha.numel(); ++i)
                CHECK(alpha_c[i] == doctest::Approx(c * alpha[i]).epsilon(1e-4));
        }

        // positive scaling of alpha scales the raw heatmap, normalized is invariant
        Tensor feats = random_tensor({1, 3, 4, 4}, rng);
        const float c = static_cast<float>(rng.uniform(0.5, 3.0));
        Tensor alpha_c(alpha.shape());
        for (size_t i = 0; i < alpha.numel(); ++i) alpha_c[i] = c * alpha[i];
        SaliencyMap raw = gradcam_heatmap(alpha, feats, SegClass::cup);
        SaliencyMap raw_c = gradcam_heatmap(alpha_c, feats, SegClass::cup);
        for (size_t i = 0; i < raw.e_gc.numel(); ++i)
            CHECK(raw_c.e_gc[i] == doctest::Approx(c * raw.e_gc[i]).epsilon(1e-3));
        SaliencyMap norm = normalize_saliency(raw);
        SaliencyMap norm_c = normalize_saliency(raw_c);
        for (size_t i = 0; i < norm.e_gc.numel(); ++i)
            CHECK(std::abs(norm_c.e_gc[i] - norm.e_gc[i]) < 1e-5f);
    }
}

TEST_CASE("saliency is detached: cached vs recomputed maps give identical parameter grads") {
    nn::ModelConfig cfg;
    cfg.base_width = 4;
    cfg.feature_channels = 4;
    cfg.dropout = 0.0f;
    cfg.init_seed = 31;
    auto model = nn::make_model(cfg);
    Rng rng(8);
    Tensor batch = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);

    auto run_once = [&](bool recompute) {
        nn::ForwardResult fr = model->forward(batch);
        static SaliencyMap cached_cup, cached_disc;
        SaliencyMap sal_cup, sal_disc;
        if (recompute) {
            sal_cup = class_saliency(*model, fr, SegClass::cup);
            sal_disc = class_saliency(*model, fr, SegClass::disc);
            cached_cup = sal_cup;
            cached_disc = sal_disc;
        } else {
            sal_cup = cached_cup;
            sal_disc = cached_disc;
        }
        auto [ec, ed] = class_embeddings(fr.features, sal_cup.e_gc, sal_disc.e_gc);
        SimilarityLoss sim = cosine_similarity_loss(ec, ed, 1e-8, true);
        Tensor dfeat(fr.features.shape());
        for (size_t i = 0; i < dfeat.numel(); ++i) dfeat[i] = sim.d_a[i] + sim.d_b[i];
        Tensor dlogits(fr.logits.shape());
        model->zero_grads();
        model->backward(fr, dlogits, &dfeat);
        std::vector<Tensor> grads;
        for (auto& p : model->parameters()) grads.push_back(*p.grad);
        return grads;
    };

    auto g1 = run_once(true);
    auto g2 = run_once(false); // cached maps
    REQUIRE(g1.size() == g2.size());
    for (size_t i = 0; i < g1.size(); ++i) CHECK(max_abs_diff(g1[i], g2[i]) == 0.0f);
}
