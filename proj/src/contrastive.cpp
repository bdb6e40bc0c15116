#include "sfda/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sfda/error.hpp"

namespace sfda {

ContrastiveMetric parse_metric(const std::string& name) {
    if (name == "cosine") return ContrastiveMetric::cosine;
    if (name == "kl") return ContrastiveMetric::kl;
    if (name == "js") return ContrastiveMetric::js;
    if (name == "mmd") return ContrastiveMetric::mmd;
    if (name == "euclidean") return ContrastiveMetric::euclidean;
    throw InvalidArgument("unknown contrastive metric '" + name +
                          "' (known: cosine, kl, js, mmd, euclidean)");
}

const char* metric_name(ContrastiveMetric m) {
    switch (m) {
        case ContrastiveMetric::cosine: return "cosine";
        case ContrastiveMetric::kl: return "kl";
        case ContrastiveMetric::js: return "js";
        case ContrastiveMetric::mmd: return "mmd";
        case ContrastiveMetric::euclidean: return "euclidean";
    }
    return "?";
}

std::pair<Tensor, Tensor> class_embeddings(const Tensor& features, const Tensor& saliency_cup,
                                           const Tensor& saliency_disc) {
    if (features.rank() != 4 || saliency_cup.rank() != 3 ||
        features.dim(0) != saliency_cup.dim(0) || features.dim(2) != saliency_cup.dim(1) ||
        features.dim(3) != saliency_cup.dim(2))
        throw InvalidArgument("class_embeddings: features " + features.shape_str() +
                              " vs saliency " + saliency_cup.shape_str());
    require_same_shape(saliency_cup, saliency_disc, "class_embeddings");

    const int B = features.dim(0), K = features.dim(1);
    const size_t plane = static_cast<size_t>(features.dim(2)) * features.dim(3);
    Tensor e_cup(features.shape()), e_disc(features.shape());
    for (int b = 0; b < B; ++b) {
        const float* sc = saliency_cup.data() + static_cast<size_t>(b) * plane;
        const float* sd = saliency_disc.data() + static_cast<size_t>(b) * plane;
        for (int k = 0; k < K; ++k) {
            const size_t off = (static_cast<size_t>(b) * K + k) * plane;
            const float* f = features.data() + off;
            float* oc = e_cup.data() + off;
            float* od = e_disc.data() + off;
            for (size_t i = 0; i < plane; ++i) {
                oc[i] = f[i] + sc[i];
                od[i] = f[i] + sd[i];
            }
        }
    }
    return {std::move(e_cup), std::move(e_disc)};
}

namespace {

struct PixelView {
    const Tensor& t;
    int B, K;
    size_t plane;
    explicit PixelView(const Tensor& tensor)
        : t(tensor), B(tensor.dim(0)), K(tensor.dim(1)),
          plane(static_cast<size_t>(tensor.dim(2)) * tensor.dim(3)) {}
    float get(int b, int k, size_t v) const {
        return t.data()[(static_cast<size_t>(b) * K + k) * plane + v];
    }
};

void add_grad(Tensor& g, int b, int k, size_t v, double val) {
    const int K = g.dim(1);
    const size_t plane = static_cast<size_t>(g.dim(2)) * g.dim(3);
    g.data()[(static_cast<size_t>(b) * K + k) * plane + v] += static_cast<float>(val);
}

} // namespace

SimilarityLoss cosine_similarity_loss(const Tensor& a, const Tensor& b, double epsilon,
                                      bool with_grad, bool pixelwise) {
    require_same_shape(a, b, "cosine_similarity_loss");
    if (a.rank() != 4) throw InvalidArgument("cosine_similarity_loss: expected B x K x H x W");
    if (!(epsilon > 0.0)) throw InvalidArgument("cosine_similarity_loss: epsilon must be > 0");

    SimilarityLoss out;
    out.metric = ContrastiveMetric::cosine;
    if (with_grad) {
        out.d_a = Tensor(a.shape());
        out.d_b = Tensor(b.shape());
    }
    const PixelView va(a), vb(b);
    const int B = va.B, K = va.K;

    if (pixelwise) {
        const double n = static_cast<double>(B) * va.plane;
        double total = 0.0;
        for (int bi = 0; bi < B; ++bi) {
            for (size_t v = 0; v < va.plane; ++v) {
                double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double x = va.get(bi, k, v), y = vb.get(bi, k, v);
                    dot += x * y;
                    na2 += x * x;
                    nb2 += y * y;
                }
                const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                const double den = std::max(na * nb, epsilon);
                total += dot / den;
                if (!with_grad) continue;
                if (na * nb > epsilon) {
                    for (int k = 0; k < K; ++k) {
                        const double x = va.get(bi, k, v), y = vb.get(bi, k, v);
                        add_grad(out.d_a, bi, k, v, (y / den - dot * x / (na2 * den)) / n);
                        add_grad(out.d_b, bi, k, v, (x / den - dot * y / (nb2 * den)) / n);
                    }
                } else {
                    for (int k = 0; k < K; ++k) {
                        add_grad(out.d_a, bi, k, v, vb.get(bi, k, v) / epsilon / n);
                        add_grad(out.d_b, bi, k, v, va.get(bi, k, v) / epsilon / n);
                    }
                }
            }
        }
        out.value = total / n;
        return out;
    }

    // image-level variant: global average pool, cosine per image, mean
    double total = 0.0;
    for (int bi = 0; bi < B; ++bi) {
        std::vector<double> ma(static_cast<size_t>(K), 0.0), mb(static_cast<size_t>(K), 0.0);
        for (int k = 0; k < K; ++k) {
            double sa = 0.0, sb = 0.0;
            for (size_t v = 0; v < va.plane; ++v) {
                sa += va.get(bi, k, v);
                sb += vb.get(bi, k, v);
            }
            ma[static_cast<size_t>(k)] = sa / static_cast<double>(va.plane);
            mb[static_cast<size_t>(k)] = sb / static_cast<double>(va.plane);
        }
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (int k = 0; k < K; ++k) {
            dot += ma[static_cast<size_t>(k)] * mb[static_cast<size_t>(k)];
            na2 += ma[static_cast<size_t>(k)] * ma[static_cast<size_t>(k)];
            nb2 += mb[static_cast<size_t>(k)] * mb[static_cast<size_t>(k)];
        }
        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
        const double den = std::max(na * nb, epsilon);
        total += dot / den;
        if (with_grad) {
            for (int k = 0; k < K; ++k) {
                double ga, gb;
                if (na * nb > epsilon) {
                    ga = mb[static_cast<size_t>(k)] / den - dot * ma[static_cast<size_t>(k)] / (na2 * den);
                    gb = ma[static_cast<size_t>(k)] / den - dot * mb[static_cast<size_t>(k)] / (nb2 * den);
                } else {
                    ga = mb[static_cast<size_t>(k)] / epsilon;
                    gb = ma[static_cast<size_t>(k)] / epsilon;
                }
                const double scale = 1.0 / (static_cast<double>(B) * va.plane);
                for (size_t v = 0; v < va.plane; ++v) {
                    add_grad(out.d_a, bi, k, v, ga * scale);
                    add_grad(out.d_b, bi, k, v, gb * scale);
                }
            }
        }
    }
    out.value = total / B;
    return out;
}

namespace {

void softmax_channels(const PixelView& view, int b, size_t v, std::vector<double>& out) {
    double mx = -1e300;
    for (int k = 0; k < view.K; ++k) mx = std::max(mx, static_cast<double>(view.get(b, k, v)));
    double sum = 0.0;
    for (int k = 0; k < view.K; ++k) {
        out[static_cast<size_t>(k)] = std::exp(view.get(b, k, v) - mx);
        sum += out[static_cast<size_t>(k)];
    }
    for (int k = 0; k < view.K; ++k) out[static_cast<size_t>(k)] /= sum;
}

SimilarityLoss kl_js_loss(const Tensor& a, const Tensor& b, bool js, bool with_grad) {
    SimilarityLoss out;
    out.metric = js ? ContrastiveMetric::js : ContrastiveMetric::kl;
    if (with_grad) {
        out.d_a = Tensor(a.shape());
        out.d_b = Tensor(b.shape());
    }
    const PixelView va(a), vb(b);
    const int B = va.B, K = va.K;
    const double n = static_cast<double>(B) * va.plane;
    std::vector<double> p(static_cast<size_t>(K)), q(static_cast<size_t>(K)),
        g(static_cast<size_t>(K)), h(static_cast<size_t>(K));
    double total = 0.0;

    for (int bi = 0; bi < B; ++bi) {
        for (size_t v = 0; v < va.plane; ++v) {
            softmax_channels(va, bi, v, p);
            softmax_channels(vb, bi, v, q);
            if (!js) {
                double kl = 0.0;
                for (int k = 0; k < K; ++k)
                    kl += p[static_cast<size_t>(k)] *
                          (std::log(p[static_cast<size_t>(k)]) - std::log(q[static_cast<size_t>(k)]));
                total += kl;
                if (with_grad) {
                    // d/dx_j = p_j((log p_j - log q_j) - KL); d/dy_j = q_j - p_j
                    for (int k = 0; k < K; ++k) {
                        const double lr = std::log(p[static_cast<size_t>(k)]) -
                                          std::log(q[static_cast<size_t>(k)]);
                        add_grad(out.d_a, bi, k, v, p[static_cast<size_t>(k)] * (lr - kl) / n);
                        add_grad(out.d_b, bi, k, v,
                                 (q[static_cast<size_t>(k)] - p[static_cast<size_t>(k)]) / n);
                    }
                }
            } else {
                double jsv = 0.0, pg = 0.0, qh = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double m = 0.5 * (p[static_cast<size_t>(k)] + q[static_cast<size_t>(k)]);
                    g[static_cast<size_t>(k)] = 0.5 * std::log(p[static_cast<size_t>(k)] / m);
                    h[static_cast<size_t>(k)] = 0.5 * std::log(q[static_cast<size_t>(k)] / m);
                    jsv += p[static_cast<size_t>(k)] * g[static_cast<size_t>(k)] +
                           q[static_cast<size_t>(k)] * h[static_cast<size_t>(k)];
                    pg += p[static_cast<size_t>(k)] * g[static_cast<size_t>(k)];
                    qh += q[static_cast<size_t>(k)] * h[static_cast<size_t>(k)];
                }
                total += jsv;
                if (with_grad) {
                    for (int k = 0; k < K; ++k) {
                        add_grad(out.d_a, bi, k, v,
                                 p[static_cast<size_t>(k)] * (g[static_cast<size_t>(k)] - pg) / n);
                        add_grad(out.d_b, bi, k, v,
                                 q[static_cast<size_t>(k)] * (h[static_cast<size_t>(k)] - qh) / n);
                    }
                }
            }
        }
    }
    out.value = total / n;
    return out;
}

SimilarityLoss euclidean_loss(const Tensor& a, const Tensor& b, bool with_grad) {
    SimilarityLoss out;
    out.metric = ContrastiveMetric::euclidean;
    if (with_grad) {
        out.d_a = Tensor(a.shape());
        out.d_b = Tensor(b.shape());
    }
    const PixelView va(a), vb(b);
    const int B = va.B, K = va.K;
    const double n = static_cast<double>(B) * va.plane;
    double total = 0.0;
    for (int bi = 0; bi < B; ++bi) {
        for (size_t v = 0; v < va.plane; ++v) {
            double s2 = 0.0;
            for (int k = 0; k < K; ++k) {
                const double d = va.get(bi, k, v) - vb.get(bi, k, v);
                s2 += d * d;
            }
            const double d = std::sqrt(s2);
            total += d;
            if (with_grad && d > 1e-12) {
                for (int k = 0; k < K; ++k) {
                    const double gk = (va.get(bi, k, v) - vb.get(bi, k, v)) / (d * n);
                    add_grad(out.d_a, bi, k, v, gk);
                    add_grad(out.d_b, bi, k, v, -gk);
                }
            }
        }
    }
    out.value = total / n;
    return out;
}

// Pixel vectors stride-subsampled to at most this many per image before the
// O(m^2) kernel sums.
constexpr size_t kMmdMaxSamples = 256;

SimilarityLoss mmd_loss(const Tensor& a, const Tensor& b, bool with_grad,
                        std::optional<double> sigma_override) {
    SimilarityLoss out;
    out.metric = ContrastiveMetric::mmd;
    if (with_grad) {
        out.d_a = Tensor(a.shape());
        out.d_b = Tensor(b.shape());
    }
    const PixelView va(a), vb(b);
    const int B = va.B, K = va.K;
    const size_t stride = (va.plane + kMmdMaxSamples - 1) / kMmdMaxSamples;
    std::vector<size_t> picks;
    for (size_t v = 0; v < va.plane; v += stride) picks.push_back(v);
    const size_t m = picks.size();

    double total = 0.0;
    for (int bi = 0; bi < B; ++bi) {
        std::vector<std::vector<double>> X(m, std::vector<double>(static_cast<size_t>(K)));
        std::vector<std::vector<double>> Y(m, std::vector<double>(static_cast<size_t>(K)));
        for (size_t i = 0; i < m; ++i)
            for (int k = 0; k < K; ++k) {
                X[i][static_cast<size_t>(k)] = va.get(bi, k, picks[i]);
                Y[i][static_cast<size_t>(k)] = vb.get(bi, k, picks[i]);
            }
        auto dist2 = [&](const std::vector<double>& u, const std::vector<double>& w) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) {
                const double d = u[static_cast<size_t>(k)] - w[static_cast<size_t>(k)];
                s += d * d;
            }
            return s;
        };

        double sigma;
        if (sigma_override) {
            sigma = *sigma_override;
        } else {
            // median pairwise distance over the pooled sample set
            std::vector<double> dists;
            dists.reserve(m * (2 * m - 1));
            auto at = [&](size_t i) -> const std::vector<double>& {
                return i < m ? X[i] : Y[i - m];
            };
            for (size_t i = 0; i < 2 * m; ++i)
                for (size_t j = i + 1; j < 2 * m; ++j)
                    dists.push_back(std::sqrt(dist2(at(i), at(j))));
            if (dists.empty()) {
                sigma = 1.0;
            } else {
                std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
                sigma = dists[dists.size() / 2];
                if (sigma <= 1e-12) sigma = 1.0;
            }
        }
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

        double kxx = 0.0, kyy = 0.0, kxy = 0.0;
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < m; ++j) {
                kxx += std::exp(-dist2(X[i], X[j]) * inv2s2);
                kyy += std::exp(-dist2(Y[i], Y[j]) * inv2s2);
                kxy += std::exp(-dist2(X[i], Y[j]) * inv2s2);
            }
        const double mm = static_cast<double>(m) * m;
        const double mmd2 = kxx / mm + kyy / mm - 2.0 * kxy / mm;
        total += mmd2;

        if (with_grad) {
            // bandwidth treated as a constant
            const double inv_s2 = 1.0 / (sigma * sigma);
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < m; ++j) {
                    const double kxxij = std::exp(-dist2(X[i], X[j]) * inv2s2);
                    const double kxyij = std::exp(-dist2(X[i], Y[j]) * inv2s2);
                    const double kyyij = std::exp(-dist2(Y[i], Y[j]) * inv2s2);
                    const double kyxij = std::exp(-dist2(Y[i], X[j]) * inv2s2);
                    for (int k = 0; k < K; ++k) {
                        const double xk = X[i][static_cast<size_t>(k)];
                        const double dx =
                            (2.0 / mm) * kxxij * (X[j][static_cast<size_t>(k)] - xk) * inv_s2 -
                            (2.0 / mm) * kxyij * (Y[j][static_cast<size_t>(k)] - xk) * inv_s2;
                        add_grad(out.d_a, bi, k, picks[i], dx / B);
                        const double yk = Y[i][static_cast<size_t>(k)];
                        const double dy =
                            (2.0 / mm) * kyyij * (Y[j][static_cast<size_t>(k)] - yk) * inv_s2 -
                            (2.0 / mm) * kyxij * (X[j][static_cast<size_t>(k)] - yk) * inv_s2;
                        add_grad(out.d_b, bi, k, picks[i], dy / B);
                    }
                }
            }
        }
    }
    out.value = total / B;
    return out;
}

} // namespace

SimilarityLoss divergence_loss(const Tensor& a, const Tensor& b, ContrastiveMetric metric,
                               bool with_grad, std::optional<double> mmd_sigma) {
    require_same_shape(a, b, "divergence_loss");
    if (a.rank() != 4) throw InvalidArgument("divergence_loss: expected B x K x H x W");
    switch (metric) {
        case ContrastiveMetric::kl: return kl_js_loss(a, b, false, with_grad);
        case ContrastiveMetric::js: return kl_js_loss(a, b, true, with_grad);
        case ContrastiveMetric::euclidean: return euclidean_loss(a, b, with_grad);
        case ContrastiveMetric::mmd: return mmd_loss(a, b, with_grad, mmd_sigma);
        case ContrastiveMetric::cosine:
            throw InvalidArgument("divergence_loss: cosine is handled by cosine_similarity_loss");
    }
    throw InvalidArgument("divergence_loss: bad metric enum");
}

} // namespace sfda
