// Acceptance suite: one criterion per section, one pass/fail line each.
// Exercises the library end to end on synthetic data; CPU only.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sfda/adapt.hpp"
#include "sfda/contrastive.hpp"
#include "sfda/data.hpp"
#include "sfda/manifest.hpp"
#include "sfda/metrics.hpp"
#include "sfda/nn/checkpoint.hpp"
#include "sfda/nn/train.hpp"
#include "sfda/pseudolabel.hpp"
#include "sfda/refine.hpp"
#include "sfda/saliency.hpp"
#include "support/oracles.hpp"
#include "support/util.hpp"

namespace fs = std::filesystem;
using namespace sfda;
using sfda::test::random_binary;
using sfda::test::random_tensor;

namespace {

int g_pass = 0, g_fail = 0;

void report(int n, const char* what, bool ok, const std::string& detail = "") {
    printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", n, what,
           detail.empty() ? "" : " -- ", detail.c_str());
    fflush(stdout);
    (ok ? g_pass : g_fail)++;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

bool check_equation_oracles(std::string& detail) {
    Rng rng(101);
    const double atol = 1e-5;
    bool ok = true;
    const auto t0 = std::chrono::steady_clock::now();

    for (int trial = 0; trial < 100; ++trial) {
        const int h = rng.uniform_int(3, 16), w = rng.uniform_int(3, 16);
        const int k = rng.uniform_int(1, 8);
        const int b = rng.uniform_int(1, 2);

        // Eq. 1: thresholding
        {
            Tensor probs = random_tensor({b, 2, h, w}, rng, 0.0, 1.0);
            const float gamma = static_cast<float>(rng.uniform(0.1, 0.9));
            Tensor labels = threshold_pseudolabels(probs, gamma).labels;
            long count = 0;
            for (size_t i = 0; i < labels.numel(); ++i) count += labels[i] >= 0.5f;
            ok &= count == oracle::count_thresholded(probs, gamma);
            for (size_t i = 0; i < labels.numel(); ++i)
                ok &= labels[i] == (probs[i] >= gamma ? 1.0f : 0.0f);
        }

        // Eq. 2: MC uncertainty (population std over passes)
        {
            const int passes = rng.uniform_int(2, 10);
            std::vector<Tensor> pp;
            for (int p = 0; p < passes; ++p) pp.push_back(random_tensor({b, 2, h, w}, rng, 0.0, 1.0));
            UncertaintyMap um = uncertainty_from_passes(pp);
            std::vector<double> mean, stdv;
            oracle::uncertainty(pp, mean, stdv);
            for (size_t i = 0; i < um.u.numel(); ++i) {
                ok &= std::abs(um.u[i] - stdv[i]) < atol;
                ok &= std::abs(um.mean_probs[i] - mean[i]) < atol;
            }
        }

        // Eq. 4: alpha = spatial mean of gradients
        {
            Tensor grads = random_tensor({b, k, h, w}, rng);
            Tensor alpha = spatial_mean_per_channel(grads);
            for (int bi = 0; bi < b; ++bi)
                for (int ki = 0; ki < k; ++ki)
                    ok &= std::abs(alpha.at(bi, ki) - oracle::alpha(grads, bi, ki)) < atol;
        }

        // Eq. 5: heatmap = ReLU(sum alpha_k A^k)
        {
            Tensor alpha = random_tensor({b, k}, rng);
            Tensor feats = random_tensor({b, k, h, w}, rng);
            SaliencyMap m = gradcam_heatmap(alpha, feats, SegClass::cup);
            for (int bi = 0; bi < b; ++bi)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        ok &= std::abs(m.e_gc.at(bi, y, x) -
                                       oracle::heatmap_at(alpha, feats, bi, y, x)) < atol;
        }

        // Eq. 6: feature modulation
        {
            Tensor feats = random_tensor({b, k, h, w}, rng);
            Tensor sal = random_tensor({b, h, w}, rng, 0.0, 1.0);
            Tensor mod = modulate_features(feats, sal);
            for (int bi = 0; bi < b; ++bi)
                for (int ki = 0; ki < k; ++ki)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            ok &= std::abs(mod.at(bi, ki, y, x) -
                                           oracle::modulated_at(feats, sal, bi, ki, y, x)) < atol;
        }

        // Eq. 7: prototypes
        {
            Tensor e = random_tensor({b, k, h, w}, rng);
            Tensor labels = random_binary({b, h, w}, rng, 0.4);
            Tensor reliable = random_binary({b, h, w}, rng, 0.7);
            Tensor probs = random_tensor({b, h, w}, rng, 0.0, 1.0);
            Prototypes got = compute_prototypes(e, labels, reliable, probs, SegClass::cup);
            oracle::ProtoPair want = oracle::prototypes(e, labels, reliable, probs);
            ok &= got.valid_ob == want.valid_ob && got.valid_bg == want.valid_bg;
            for (int ki = 0; ki < k; ++ki) {
                if (want.valid_ob)
                    ok &= std::abs(got.z_ob[static_cast<size_t>(ki)] -
                                   want.z_ob[static_cast<size_t>(ki)]) < atol;
                if (want.valid_bg)
                    ok &= std::abs(got.z_bg[static_cast<size_t>(ki)] -
                                   want.z_bg[static_cast<size_t>(ki)]) < atol;
            }

            // Eq. 8: distances (only when both prototypes exist)
            if (got.valid_ob && got.valid_bg) {
                auto [d_ob, d_bg] = feature_distances(e, got);
                std::vector<double> zo(got.z_ob.begin(), got.z_ob.end());
                std::vector<double> zb(got.z_bg.begin(), got.z_bg.end());
                for (int bi = 0; bi < b; ++bi)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) {
                            ok &= std::abs(d_ob.at(bi, y, x) -
                                           oracle::distance_at(e, zo, bi, y, x)) < atol;
                            ok &= std::abs(d_bg.at(bi, y, x) -
                                           oracle::distance_at(e, zb, bi, y, x)) < atol;
                        }

                // Eq. 9: refined mask against the oracle indicator
                Tensor u = random_tensor({b, h, w}, rng, 0.0, 0.1);
                const float eta = static_cast<float>(rng.uniform(0.02, 0.08));
                Tensor m = refined_mask(u, eta, labels, d_ob, d_bg);
                for (int bi = 0; bi < b; ++bi)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x)
                            ok &= m.at(bi, y, x) ==
                                  static_cast<float>(oracle::refined_mask_bit(
                                      u.at(bi, y, x) < eta, labels.at(bi, y, x) >= 0.5f,
                                      d_ob.at(bi, y, x), d_bg.at(bi, y, x)));
            }
        }

        // Eq. 10: masked CE
        {
            Tensor p = random_tensor({b, 2, h, w}, rng, 0.001, 0.999);
            Tensor y = random_binary({b, 2, h, w}, rng);
            Tensor m = random_binary({b, 2, h, w}, rng, 0.6);
            ok &= std::abs(masked_ce_loss(p, y, m) - oracle::masked_ce(p, y, m)) < atol;
        }

        // Eq. 12: cosine similarity loss
        {
            Tensor a = random_tensor({b, k, h, w}, rng);
            Tensor c = random_tensor({b, k, h, w}, rng);
            ok &= std::abs(cosine_similarity_loss(a, c).value - oracle::cosine_loss(a, c)) < atol;
        }

        if (!ok) break;
    }
    const double secs = elapsed_s(t0);
    std::ostringstream os;
    os << "100 randomized instances per equation, " << secs << " s";
    detail = os.str();
    return ok && secs < 60.0;
}

// ---------------------------------------------------------------- criterion 2

bool check_truth_table(std::string& detail) {
    struct Case {
        bool reliable, label;
        int sign;
        int expect;
    };
    const Case cases[] = {
        {false, false, -1, 0}, {false, false, 0, 0}, {false, false, +1, 0},
        {false, true, -1, 0},  {false, true, 0, 0},  {false, true, +1, 0},
        {true, false, -1, 0},  {true, false, 0, 0},  {true, false, +1, 1},
        {true, true, -1, 1},   {true, true, 0, 0},   {true, true, +1, 0},
    };
    bool ok = true;
    for (const auto& c : cases) {
        Tensor u = Tensor::full({1, 1, 1}, c.reliable ? 0.01f : 0.2f);
        Tensor y = Tensor::full({1, 1, 1}, c.label ? 1.0f : 0.0f);
        Tensor d_ob = Tensor::full({1, 1, 1}, 0.5f);
        Tensor d_bg = Tensor::full({1, 1, 1}, c.sign < 0 ? 0.8f : (c.sign > 0 ? 0.2f : 0.5f));
        ok &= refined_mask(u, 0.05f, y, d_ob, d_bg)[0] == static_cast<float>(c.expect);
    }
    detail = "12/12 cases";
    return ok;
}

// ---------------------------------------------------------------- criterion 3

bool check_gradients(std::string& detail) {
    Rng rng(301);
    bool ok = true;
    double worst = 0.0;

    // cosine loss gradient vs FD of the double-precision oracle
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({2, 4, 3, 3}, rng, -1.0, 1.0);
        Tensor b = random_tensor({2, 4, 3, 3}, rng, -1.0, 1.0);
        SimilarityLoss l = cosine_similarity_loss(a, b, 1e-8, true);
        Rng pick(400 + static_cast<uint64_t>(trial));
        for (int probe = 0; probe < 20; ++probe) {
            const size_t i =
                static_cast<size_t>(pick.uniform_int(0, static_cast<int>(a.numel()) - 1));
            const float h = 1e-3f;
            Tensor ap = a, am = a;
            ap[i] += h;
            am[i] -= h;
            const double fd = (oracle::cosine_loss(ap, b) - oracle::cosine_loss(am, b)) / (2.0 * h);
            if (std::abs(fd) < 1e-6) continue;
            const double re = sfda::test::rel_err(l.d_a[i], fd);
            worst = std::max(worst, re);
            ok &= re < 1e-3;
        }
    }

    // masked CE gradient vs FD of the double-precision oracle
    for (int trial = 0; trial < 5; ++trial) {
        Tensor p = random_tensor({1, 2, 4, 4}, rng, 0.05, 0.95);
        Tensor y = random_binary({1, 2, 4, 4}, rng);
        Tensor m = random_binary({1, 2, 4, 4}, rng, 0.7);
        Tensor g = masked_ce_grad(p, y, m);
        for (size_t i = 0; i < p.numel(); ++i) {
            if (m[i] < 0.5f) continue;
            const float h = 1e-3f;
            Tensor pp = p, pm = p;
            pp[i] += h;
            pm[i] -= h;
            const double fd =
                (oracle::masked_ce(pp, y, m) - oracle::masked_ce(pm, y, m)) / (2.0 * h);
            const double re = sfda::test::rel_err(g[i], fd);
            worst = std::max(worst, re);
            ok &= re < 1e-3;
        }
    }

    // Grad-CAM alpha vs per-pixel FD spatial means through the tinyunet head
    {
        nn::ModelConfig cfg;
        cfg.base_width = 4;
        cfg.feature_channels = 4;
        cfg.dropout = 0.0f;
        cfg.init_seed = 77;
        auto model = nn::make_model(cfg);
        Tensor batch = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
        nn::ForwardResult fr = model->forward(batch);
        for (SegClass c : {SegClass::cup, SegClass::disc}) {
            Tensor alpha = gradcam_weights(*model, fr, c);
            const int ch = static_cast<int>(c);
            for (int kk = 0; kk < 4; ++kk) {
                double fd_mean = 0.0;
                const float h = 1e-2f;
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        Tensor fp = fr.features, fm = fr.features;
                        fp.at(0, kk, y, x) += h;
                        fm.at(0, kk, y, x) -= h;
                        fd_mean += (oracle::class_score(model->head_forward(fp), 0, ch) -
                                    oracle::class_score(model->head_forward(fm), 0, ch)) /
                                   (2.0 * h);
                    }
                fd_mean /= 64.0;
                const double re = sfda::test::rel_err(alpha.at(0, kk), fd_mean);
                worst = std::max(worst, re);
                ok &= re < 1e-3;
            }
        }
    }

    std::ostringstream os;
    os << "worst relative error " << worst;
    detail = os.str();
    return ok;
}

// ---------------------------------------------------------------- criterion 4

bool check_invariants(std::string& detail) {
    Rng rng(401);
    bool ok = true;
    const int cases = 200;

    for (int t = 0; t < cases && ok; ++t) {
        // threshold monotonicity
        Tensor probs = random_tensor({1, 2, 8, 8}, rng, 0.0, 1.0);
        const float g1 = static_cast<float>(rng.uniform(0.05, 0.9));
        const float g2 = static_cast<float>(rng.uniform(g1, 0.95));
        Tensor lo = threshold_pseudolabels(probs, g1).labels;
        Tensor hi = threshold_pseudolabels(probs, g2).labels;
        for (size_t i = 0; i < lo.numel(); ++i) ok &= hi[i] <= lo[i];

        // eta monotonicity
        Tensor u = random_tensor({1, 2, 8, 8}, rng, 0.0, 0.5);
        const float e1 = static_cast<float>(rng.uniform(0.01, 0.3));
        const float e2 = static_cast<float>(rng.uniform(e1, 0.5));
        Tensor m1 = uncertainty_mask(u, e1);
        Tensor m2 = uncertainty_mask(u, e2);
        for (size_t i = 0; i < m1.numel(); ++i) ok &= m2[i] >= m1[i];

        // heatmap non-negativity + normalized-saliency scale invariance
        Tensor alpha = random_tensor({1, 4}, rng, -2.0, 2.0);
        Tensor feats = random_tensor({1, 4, 6, 6}, rng, -2.0, 2.0);
        SaliencyMap raw = gradcam_heatmap(alpha, feats, SegClass::cup);
        for (size_t i = 0; i < raw.e_gc.numel(); ++i) ok &= raw.e_gc[i] >= 0.0f;
        const float c = static_cast<float>(rng.uniform(0.5, 4.0));
        Tensor alpha_c(alpha.shape());
        for (size_t i = 0; i < alpha.numel(); ++i) alpha_c[i] = c * alpha[i];
        SaliencyMap norm = normalize_saliency(raw);
        SaliencyMap norm_c = normalize_saliency(gradcam_heatmap(alpha_c, feats, SegClass::cup));
        for (size_t i = 0; i < norm.e_gc.numel(); ++i)
            ok &= std::abs(norm.e_gc[i] - norm_c.e_gc[i]) < 1e-5f;

        // refined mask subset of the uncertainty mask
        Tensor uu = random_tensor({1, 6, 6}, rng, 0.0, 0.1);
        Tensor yy = random_binary({1, 6, 6}, rng);
        Tensor d_ob = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
        Tensor d_bg = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
        const float eta = static_cast<float>(rng.uniform(0.01, 0.09));
        Tensor rm = refined_mask(uu, eta, yy, d_ob, d_bg);
        for (size_t i = 0; i < rm.numel(); ++i) ok &= rm[i] <= (uu[i] < eta ? 1.0f : 0.0f);

        // prototype convex-envelope containment
        Tensor e = random_tensor({1, 3, 6, 6}, rng, -3.0, 3.0);
        Tensor labels = random_binary({1, 6, 6}, rng, 0.5);
        Tensor reliable = random_binary({1, 6, 6}, rng, 0.6);
        Tensor pw = random_tensor({1, 6, 6}, rng, 0.05, 0.95);
        Prototypes proto = compute_prototypes(e, labels, reliable, pw, SegClass::cup);
        for (int kk = 0; kk < 3; ++kk) {
            float lo_ob = 1e30f, hi_ob = -1e30f, lo_bg = 1e30f, hi_bg = -1e30f;
            for (int y = 0; y < 6; ++y)
                for (int x = 0; x < 6; ++x) {
                    if (reliable.at(0, y, x) < 0.5f) continue;
                    const float v = e.at(0, kk, y, x);
                    if (labels.at(0, y, x) >= 0.5f) {
                        lo_ob = std::min(lo_ob, v);
                        hi_ob = std::max(hi_ob, v);
                    } else {
                        lo_bg = std::min(lo_bg, v);
                        hi_bg = std::max(hi_bg, v);
                    }
                }
            if (proto.valid_ob)
                ok &= proto.z_ob[static_cast<size_t>(kk)] >= lo_ob - 1e-5f &&
                      proto.z_ob[static_cast<size_t>(kk)] <= hi_ob + 1e-5f;
            if (proto.valid_bg)
                ok &= proto.z_bg[static_cast<size_t>(kk)] >= lo_bg - 1e-5f &&
                      proto.z_bg[static_cast<size_t>(kk)] <= hi_bg + 1e-5f;
        }

        // Dice axioms: symmetry, range, identity
        Tensor ma = random_binary({10, 10}, rng, 0.4);
        Tensor mb = random_binary({10, 10}, rng, 0.4);
        const double dab = dice(ma, mb);
        ok &= dab == dice(mb, ma);
        ok &= dab >= 0.0 && dab <= 1.0;
        ok &= dice(ma, ma) == 1.0;

        // ASD axioms: identity zero, symmetry, non-negativity
        const auto daa = average_surface_distance(ma, ma);
        bool any = false;
        for (size_t i = 0; i < ma.numel(); ++i) any = any || ma[i] >= 0.5f;
        if (any) ok &= daa.has_value() && *daa == 0.0;
        const auto dab2 = average_surface_distance(ma, mb);
        const auto dba2 = average_surface_distance(mb, ma);
        ok &= dab2.has_value() == dba2.has_value();
        if (dab2) {
            ok &= std::abs(*dab2 - *dba2) < 1e-12;
            ok &= *dab2 >= 0.0;
        }

        // cosine scale invariance + symmetry
        Tensor ca = random_tensor({1, 3, 4, 4}, rng);
        Tensor cb = random_tensor({1, 3, 4, 4}, rng);
        const double cv = cosine_similarity_loss(ca, cb).value;
        ok &= std::abs(cv - cosine_similarity_loss(cb, ca).value) < 1e-9;
        const float cc = static_cast<float>(rng.uniform(0.1, 10.0));
        Tensor cac(ca.shape());
        for (size_t i = 0; i < ca.numel(); ++i) cac[i] = cc * ca[i];
        ok &= std::abs(cosine_similarity_loss(cac, cb).value - cv) < 1e-6;
    }
    detail = "200 randomized cases per property";
    return ok;
}

// ---------------------------------------------------------------- criterion 5

bool check_metric_oracles(std::string& detail) {
    Rng rng(501);
    bool ok = true;
    int compared = 0;
    double worst = 0.0;
    while (compared < 100) {
        Tensor a = random_binary({32, 32}, rng, 0.3);
        Tensor b = random_binary({32, 32}, rng, 0.3);
        ok &= dice(a, b) == oracle::dice(a, b); // set-arithmetic oracle, exact
        const auto got = average_surface_distance(a, b);
        const auto want = oracle::asd(a, b);
        ok &= got.has_value() == want.has_value();
        if (!got) continue;
        worst = std::max(worst, std::abs(*got - *want));
        ok &= std::abs(*got - *want) < 1e-6;
        ++compared;
    }
    std::ostringstream os;
    os << "100 mask pairs, worst ASD deviation " << worst;
    detail = os.str();
    return ok;
}

// ---------------------------------------------------------------- criterion 6

struct EndToEnd {
    double baseline = 0.0;
    std::vector<double> adapted;
    double seconds = 0.0;
};

bool check_end_to_end(std::string& detail, EndToEnd& out) {
    const auto t0 = std::chrono::steady_clock::now();

    // source domain A: 100 train / 30 test at 128x128
    SyntheticDomainSpec spec_a;
    spec_a.n_samples = 100;
    spec_a.image_size = 128;
    spec_a.disc_radius_min = 26;
    spec_a.disc_radius_max = 40;
    spec_a.cup_ratio_min = 0.45f;
    spec_a.cup_ratio_max = 0.65f;
    spec_a.blur_sigma = 0.8f;
    spec_a.noise_sigma = 0.02f;
    spec_a.seed = 11;
    DatasetSplit src_train = generate_synthetic_domain(spec_a, Split::train, "domA");

    // shifted target domain B: intensity shift + contrast + blur (+ sensor noise)
    SyntheticDomainSpec spec_b = spec_a;
    spec_b.intensity_shift = -0.08f;
    spec_b.contrast_scale = 0.65f;
    spec_b.blur_sigma = 1.8f;
    spec_b.noise_sigma = 0.03f;
    spec_b.seed = 303;
    spec_b.n_samples = 48;
    DatasetSplit tgt_train = generate_synthetic_domain(spec_b, Split::train, "domB");
    SyntheticDomainSpec spec_b_test = spec_b;
    spec_b_test.n_samples = 30;
    DatasetSplit tgt_test = generate_synthetic_domain(spec_b_test, Split::test, "domB");

    nn::ModelConfig mc; // tinyunet defaults: width 16, K_f 16, dropout 0.5
    mc.init_seed = 1;
    auto source = nn::make_model(mc);
    nn::SourceTrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 8;
    tc.lr = 4e-3;
    tc.seed = 1;
    tc.augment = true;
    train_source(*source, src_train, tc);

    auto mean_dice = [&](nn::SegModel& m) {
        const MetricsReport r = evaluate(m, tgt_test);
        return 0.5 * (r.mean_dice_cup + r.mean_dice_disc);
    };
    out.baseline = mean_dice(*source);

    const UnlabeledSplit target = UnlabeledSplit::from(tgt_train);
    int passed = 0;
    for (uint64_t seed : {3ull, 4ull, 5ull}) {
        AdaptConfig ac; // pinned: gamma .75, eta .05, K 10, lambda 1, 20 epochs, batch 8
        ac.seed = seed;
        auto [model, rep] = adapt(*source, target, ac);
        const double d = mean_dice(*model);
        out.adapted.push_back(d);
        if (d >= out.baseline + 2.0) ++passed;
    }
    out.seconds = elapsed_s(t0);

    std::ostringstream os;
    os << "baseline " << out.baseline << ", adapted {";
    for (size_t i = 0; i < out.adapted.size(); ++i) os << (i ? ", " : "") << out.adapted[i];
    os << "}, " << passed << "/3 seeds above +2.0, " << static_cast<int>(out.seconds) << " s";
    detail = os.str();
    return passed >= 2;
}

// ---------------------------------------------------------------- criterion 7

bool check_ablation(std::string& detail, const fs::path& dir) {
    SyntheticDomainSpec spec_a;
    spec_a.n_samples = 16;
    spec_a.image_size = 64;
    spec_a.disc_radius_min = 13;
    spec_a.disc_radius_max = 19;
    spec_a.blur_sigma = 0.5f;
    spec_a.noise_sigma = 0.02f;
    spec_a.seed = 7;
    DatasetSplit src_train = generate_synthetic_domain(spec_a, Split::train, "ablA");

    SyntheticDomainSpec spec_b = spec_a;
    spec_b.intensity_shift = -0.08f;
    spec_b.contrast_scale = 0.7f;
    spec_b.blur_sigma = 1.2f;
    spec_b.seed = 99;
    DatasetSplit tgt_train = generate_synthetic_domain(spec_b, Split::train, "ablB");
    spec_b.n_samples = 8;
    DatasetSplit tgt_test = generate_synthetic_domain(spec_b, Split::test, "ablB");

    nn::ModelConfig mc;
    mc.base_width = 8;
    mc.feature_channels = 8;
    mc.init_seed = 2;
    auto source = nn::make_model(mc);
    nn::SourceTrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 8;
    tc.lr = 4e-3;
    tc.seed = 2;
    tc.augment = true;
    train_source(*source, src_train, tc);

    AdaptConfig ac;
    ac.epochs = 4;
    ac.mc_passes = 10;
    ac.seed = 5;
    const AblationTable table =
        ablate(*source, UnlabeledSplit::from(tgt_train), tgt_test, ac,
               {ContrastiveMetric::cosine, ContrastiveMetric::euclidean});

    bool ok = table.rows.size() == 2;
    for (const auto& r : table.rows) {
        ok &= std::isfinite(r.dice_cup) && std::isfinite(r.dice_disc);
        ok &= r.asd_cup.has_value() ? std::isfinite(*r.asd_cup) : true;
        ok &= r.asd_disc.has_value() ? std::isfinite(*r.asd_disc) : true;
    }
    const std::string json_path = (dir / "ablation.json").string();
    write_ablation_json(table, json_path);
    std::ofstream txt(dir / "ablation.txt");
    write_ablation_text(table, txt);
    ok &= fs::exists(json_path) && fs::file_size(json_path) > 0;

    std::ostringstream os;
    os << "cosine dice (" << table.rows[0].dice_cup << ", " << table.rows[0].dice_disc
       << "), euclidean dice (" << table.rows[1].dice_cup << ", " << table.rows[1].dice_disc
       << "), report at " << json_path;
    detail = os.str();
    return ok;
}

// ---------------------------------------------------------------- criterion 8

bool params_bitwise_equal(nn::SegModel& a, nn::SegModel& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (max_abs_diff(*pa[i].value, *pb[i].value) != 0.0f) return false;
    auto ba = a.buffers();
    auto bb = b.buffers();
    for (size_t i = 0; i < ba.size(); ++i)
        if (max_abs_diff(*ba[i].value, *bb[i].value) != 0.0f) return false;
    return true;
}

bool check_source_free(std::string& detail) {
    SyntheticDomainSpec spec;
    spec.n_samples = 10;
    spec.image_size = 32;
    spec.disc_radius_min = 7;
    spec.disc_radius_max = 10;
    spec.noise_sigma = 0.02f;
    spec.seed = 13;
    DatasetSplit labeled = generate_synthetic_domain(spec, Split::train, "sf");

    nn::ModelConfig mc;
    mc.base_width = 8;
    mc.feature_channels = 8;
    mc.init_seed = 3;
    auto source = nn::make_model(mc);
    nn::SourceTrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.seed = 3;
    train_source(*source, labeled, tc);

    DatasetSplit stripped = labeled;
    for (auto& s : stripped.samples) s.gt_masks.reset();

    AdaptConfig ac;
    ac.epochs = 2;
    ac.batch_size = 5;
    ac.mc_passes = 4;
    ac.seed = 9;
    auto [m_with, r1] = adapt(*source, UnlabeledSplit::from(labeled), ac);
    auto [m_without, r2] = adapt(*source, UnlabeledSplit::from(stripped), ac);
    const bool ok = params_bitwise_equal(*m_with, *m_without);
    detail = ok ? "mask-bearing and mask-stripped targets give identical parameters and buffers"
                : "parameter mismatch between mask-bearing and mask-stripped runs";
    return ok;
}

// ---------------------------------------------------------------- criterion 9

bool check_determinism(std::string& detail, const fs::path& dir) {
    SyntheticDomainSpec spec;
    spec.n_samples = 10;
    spec.image_size = 32;
    spec.disc_radius_min = 7;
    spec.disc_radius_max = 10;
    spec.noise_sigma = 0.02f;
    spec.seed = 17;
    DatasetSplit data = generate_synthetic_domain(spec, Split::train, "det");

    nn::ModelConfig mc;
    mc.base_width = 8;
    mc.feature_channels = 8;
    mc.init_seed = 4;
    auto source = nn::make_model(mc);
    nn::SourceTrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.seed = 4;
    train_source(*source, data, tc);

    const UnlabeledSplit target = UnlabeledSplit::from(data);
    AdaptConfig ac;
    ac.epochs = 2;
    ac.batch_size = 5;
    ac.mc_passes = 4;
    ac.seed = 21;
    ac.checkpoint_dir = (dir / "det_a").string();
    auto [m1, r1] = adapt(*source, target, ac);
    ac.checkpoint_dir = (dir / "det_b").string();
    auto [m2, r2] = adapt(*source, target, ac);

    bool ok = fnv1a64_file(r1.last_checkpoint) == fnv1a64_file(r2.last_checkpoint);

    // checkpoint round trip preserves deterministic forward outputs exactly
    auto loaded = nn::load_checkpoint(r1.last_checkpoint);
    Rng rng(5);
    Tensor batch = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    nn::ForwardOptions det_opts;
    det_opts.record = false;
    ok &= max_abs_diff(loaded->forward(batch, det_opts).logits,
                       m1->forward(batch, det_opts).logits) == 0.0f;

    detail = ok ? "repeated adapt checkpoints bitwise identical; round-trip forward exact"
                : "determinism violated";
    return ok;
}

} // namespace

int main(int, char**) {
    const fs::path dir = fs::temp_directory_path() / "sfda_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();

    std::string detail;

    report(1, "equation-oracle equivalence (Eq. 1,2,4,5,6,7,8,9,10,12)",
           check_equation_oracles(detail), detail);
    report(2, "refined-mask truth table", check_truth_table(detail), detail);
    report(3, "gradient checks (cosine, masked CE, Grad-CAM alpha)", check_gradients(detail),
           detail);
    report(4, "invariant property suite", check_invariants(detail), detail);
    report(5, "metric oracles (Dice exact, ASD vs brute force)", check_metric_oracles(detail),
           detail);

    EndToEnd e2e;
    report(6, "desk-scale end-to-end direction check", check_end_to_end(detail, e2e), detail);
    report(7, "ablation harness over {cosine, euclidean}", check_ablation(detail, dir), detail);
    report(8, "source-free contract (mask-stripped bitwise identity)", check_source_free(detail),
           detail);
    report(9, "determinism and checkpoint persistence", check_determinism(detail, dir), detail);

    printf("%d/%d criteria passed (%.1f s total)\n", g_pass, g_pass + g_fail, elapsed_s(t0));
    return g_fail == 0 ? 0 : 1;
}
