#include "sfda/refine.hpp"

#include <cmath>

#include "sfda/error.hpp"

namespace sfda {

Tensor modulate_features(const Tensor& features, const Tensor& saliency) {
    if (features.rank() != 4 || saliency.rank() != 3 || features.dim(0) != saliency.dim(0) ||
        features.dim(2) != saliency.dim(1) || features.dim(3) != saliency.dim(2))
        throw InvalidArgument("modulate_features: features " + features.shape_str() +
                              " vs saliency " + saliency.shape_str());
    const int B = features.dim(0), K = features.dim(1);
    const size_t plane = static_cast<size_t>(features.dim(2)) * features.dim(3);
    Tensor out(features.shape());
    for (int b = 0; b < B; ++b) {
        const float* s = saliency.data() + static_cast<size_t>(b) * plane;
        for (int k = 0; k < K; ++k) {
            const float* f = features.data() + (static_cast<size_t>(b) * K + k) * plane;
            float* o = out.data() + (static_cast<size_t>(b) * K + k) * plane;
            for (size_t i = 0; i < plane; ++i) o[i] = f[i] * s[i];
        }
    }
    return out;
}

Prototypes compute_prototypes(const Tensor& e_prime, const Tensor& labels, const Tensor& reliable,
                              const Tensor& probs, SegClass class_id) {
    require_same_shape(labels, reliable, "compute_prototypes");
    require_same_shape(labels, probs, "compute_prototypes");
    if (e_prime.dim(0) != labels.dim(0) || e_prime.dim(2) != labels.dim(1) ||
        e_prime.dim(3) != labels.dim(2))
        throw InvalidArgument("compute_prototypes: e' " + e_prime.shape_str() +
                              " vs labels " + labels.shape_str());

    const int B = e_prime.dim(0), K = e_prime.dim(1);
    const size_t plane = static_cast<size_t>(e_prime.dim(2)) * e_prime.dim(3);
    Prototypes out;
    out.class_id = class_id;
    std::vector<double> acc_ob(static_cast<size_t>(K), 0.0), acc_bg(static_cast<size_t>(K), 0.0);
    double den_ob = 0.0, den_bg = 0.0;

    for (int b = 0; b < B; ++b) {
        const float* lab = labels.data() + static_cast<size_t>(b) * plane;
        const float* rel = reliable.data() + static_cast<size_t>(b) * plane;
        const float* p = probs.data() + static_cast<size_t>(b) * plane;
        for (size_t i = 0; i < plane; ++i) {
            if (rel[i] < 0.5f) continue;
            const bool is_ob = lab[i] >= 0.5f;
            const double w = is_ob ? p[i] : 1.0 - p[i];
            if (w == 0.0) continue;
            auto& acc = is_ob ? acc_ob : acc_bg;
            (is_ob ? den_ob : den_bg) += w;
            for (int k = 0; k < K; ++k)
                acc[static_cast<size_t>(k)] +=
                    w * e_prime.data()[(static_cast<size_t>(b) * K + k) * plane + i];
        }
    }

    out.z_ob.assign(static_cast<size_t>(K), 0.0f);
    out.z_bg.assign(static_cast<size_t>(K), 0.0f);
    out.valid_ob = den_ob > 0.0;
    out.valid_bg = den_bg > 0.0;
    if (out.valid_ob)
        for (int k = 0; k < K; ++k) out.z_ob[static_cast<size_t>(k)] = static_cast<float>(acc_ob[static_cast<size_t>(k)] / den_ob);
    if (out.valid_bg)
        for (int k = 0; k < K; ++k) out.z_bg[static_cast<size_t>(k)] = static_cast<float>(acc_bg[static_cast<size_t>(k)] / den_bg);
    return out;
}

std::pair<Tensor, Tensor> feature_distances(const Tensor& e_prime, const Prototypes& protos) {
    if (!protos.valid_ob || !protos.valid_bg)
        throw ContractViolation("feature_distances: prototypes invalid for class " +
                                std::string(seg_class_name(protos.class_id)) +
                                " (caller must check the valid flags)");
    const int B = e_prime.dim(0), K = e_prime.dim(1), H = e_prime.dim(2), W = e_prime.dim(3);
    if (static_cast<int>(protos.z_ob.size()) != K)
        throw InvalidArgument("feature_distances: prototype dimension mismatch");
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor d_ob({B, H, W}), d_bg({B, H, W});
    for (int b = 0; b < B; ++b) {
        for (size_t i = 0; i < plane; ++i) {
            double s_ob = 0.0, s_bg = 0.0;
            for (int k = 0; k < K; ++k) {
                const double v = e_prime.data()[(static_cast<size_t>(b) * K + k) * plane + i];
                const double doo = v - protos.z_ob[static_cast<size_t>(k)];
                const double dbb = v - protos.z_bg[static_cast<size_t>(k)];
                s_ob += doo * doo;
                s_bg += dbb * dbb;
            }
            d_ob.data()[static_cast<size_t>(b) * plane + i] = static_cast<float>(std::sqrt(s_ob));
            d_bg.data()[static_cast<size_t>(b) * plane + i] = static_cast<float>(std::sqrt(s_bg));
        }
    }
    return {std::move(d_ob), std::move(d_bg)};
}

Tensor refined_mask(const Tensor& u, float eta, const Tensor& labels, const Tensor& d_ob,
                    const Tensor& d_bg) {
    require_same_shape(u, labels, "refined_mask");
    require_same_shape(u, d_ob, "refined_mask");
    require_same_shape(u, d_bg, "refined_mask");
    Tensor m(u.shape());
    for (size_t i = 0; i < u.numel(); ++i) {
        if (u[i] >= eta) continue; // 1[u < eta], strict
        const bool positive = labels[i] >= 0.5f;
        if (positive ? (d_ob[i] < d_bg[i]) : (d_ob[i] > d_bg[i])) m[i] = 1.0f;
    }
    return m;
}

ClassRefinement refine_class(const Tensor& features, const Tensor& saliency, const Tensor& labels,
                             const Tensor& u, float eta, const Tensor& probs, SegClass class_id) {
    ClassRefinement out;
    const Tensor reliable = [&] {
        Tensor r(u.shape());
        for (size_t i = 0; i < u.numel(); ++i) r[i] = u[i] < eta ? 1.0f : 0.0f;
        return r;
    }();
    Tensor e_prime = modulate_features(features, saliency);
    out.protos = compute_prototypes(e_prime, labels, reliable, probs, class_id);
    if (!out.protos.valid_ob || !out.protos.valid_bg) {
        out.fallback = true;
        out.mask = reliable;
        return out;
    }
    auto [d_ob, d_bg] = feature_distances(e_prime, out.protos);
    out.mask = refined_mask(u, eta, labels, d_ob, d_bg);
    out.d_ob = std::move(d_ob);
    out.d_bg = std::move(d_bg);
    return out;
}

namespace {
constexpr double kProbEps = 1e-7;
}

double masked_ce_loss(const Tensor& probs, const Tensor& labels, const Tensor& mask) {
    require_same_shape(probs, labels, "masked_ce_loss");
    require_same_shape(probs, mask, "masked_ce_loss");
    double loss = 0.0, kept = 0.0;
    for (size_t i = 0; i < probs.numel(); ++i) {
        if (mask[i] < 0.5f) continue;
        const double p = std::min(std::max(static_cast<double>(probs[i]), kProbEps), 1.0 - kProbEps);
        const double y = labels[i];
        loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        kept += 1.0;
    }
    return kept > 0.0 ? loss / kept : 0.0;
}

Tensor masked_ce_grad(const Tensor& probs, const Tensor& labels, const Tensor& mask) {
    require_same_shape(probs, labels, "masked_ce_grad");
    require_same_shape(probs, mask, "masked_ce_grad");
    double kept = 0.0;
    for (size_t i = 0; i < mask.numel(); ++i)
        if (mask[i] >= 0.5f) kept += 1.0;
    Tensor grad(probs.shape());
    if (kept == 0.0) return grad;
    for (size_t i = 0; i < probs.numel(); ++i) {
        if (mask[i] < 0.5f) continue;
        const double p = std::min(std::max(static_cast<double>(probs[i]), kProbEps), 1.0 - kProbEps);
        const double y = labels[i];
        grad[i] = static_cast<float>((-y / p + (1.0 - y) / (1.0 - p)) / kept);
    }
    return grad;
}

} // namespace sfda
