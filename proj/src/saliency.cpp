#include "sfda/saliency.hpp"

#include <cmath>

#include "sfda/error.hpp"

namespace sfda {

Tensor class_score(const Tensor& logits, SegClass c) {
    if (logits.rank() != 4 || logits.dim(1) != nn::kNumClasses)
        throw InvalidArgument("class_score: expected B x 2 x H x W logits, got " +
                              logits.shape_str());
    const int B = logits.dim(0), H = logits.dim(2), W = logits.dim(3);
    const int ch = static_cast<int>(c);
    Tensor score({B});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        const float* p = logits.data() + (static_cast<size_t>(b) * nn::kNumClasses + ch) * plane;
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        score[static_cast<size_t>(b)] = static_cast<float>(s);
    }
    return score;
}

Tensor spatial_mean_per_channel(const Tensor& grads) {
    if (grads.rank() != 4)
        throw InvalidArgument("spatial_mean_per_channel: expected B x K x H x W");
    const int B = grads.dim(0), K = grads.dim(1);
    const size_t plane = static_cast<size_t>(grads.dim(2)) * grads.dim(3);
    Tensor alpha({B, K});
    for (int b = 0; b < B; ++b) {
        for (int k = 0; k < K; ++k) {
            const float* p = grads.data() + (static_cast<size_t>(b) * K + k) * plane;
            double s = 0.0;
            for (size_t i = 0; i < plane; ++i) s += p[i];
            alpha.at(b, k) = static_cast<float>(s / static_cast<double>(plane));
        }
    }
    return alpha;
}

Tensor gradcam_feature_grads(const nn::SegModel& model, const nn::ForwardResult& fr, SegClass c) {
    // d(spatial sum of channel ch)/d(logits) is an indicator of that channel.
    Tensor dlogits(fr.logits.shape());
    const int B = dlogits.dim(0), H = dlogits.dim(2), W = dlogits.dim(3);
    const int ch = static_cast<int>(c);
    const size_t plane = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        float* p = dlogits.data() + (static_cast<size_t>(b) * nn::kNumClasses + ch) * plane;
        for (size_t i = 0; i < plane; ++i) p[i] = 1.0f;
    }
    return model.feature_gradient(fr, dlogits);
}

Tensor gradcam_weights(const nn::SegModel& model, const nn::ForwardResult& fr, SegClass c) {
    return spatial_mean_per_channel(gradcam_feature_grads(model, fr, c));
}

SaliencyMap gradcam_heatmap(const Tensor& alpha, const Tensor& features, SegClass c) {
    if (alpha.rank() != 2 || features.rank() != 4 || alpha.dim(0) != features.dim(0) ||
        alpha.dim(1) != features.dim(1))
        throw InvalidArgument("gradcam_heatmap: alpha " + alpha.shape_str() +
                              " does not match features " + features.shape_str());
    const int B = features.dim(0), K = features.dim(1), H = features.dim(2), W = features.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    SaliencyMap out;
    out.class_id = c;
    out.alpha = alpha;
    out.e_gc = Tensor({B, H, W});
    for (int b = 0; b < B; ++b) {
        float* dst = out.e_gc.data() + static_cast<size_t>(b) * plane;
        for (int k = 0; k < K; ++k) {
            const float a = alpha.at(b, k);
            if (a == 0.0f) continue;
            const float* src = features.data() + (static_cast<size_t>(b) * K + k) * plane;
            for (size_t i = 0; i < plane; ++i) dst[i] += a * src[i];
        }
        for (size_t i = 0; i < plane; ++i) dst[i] = dst[i] > 0.0f ? dst[i] : 0.0f; // ReLU
    }
    return out;
}

SaliencyMap normalize_saliency(SaliencyMap map) {
    const int B = map.e_gc.dim(0);
    const size_t plane = map.e_gc.numel() / static_cast<size_t>(B);
    for (int b = 0; b < B; ++b) {
        float* p = map.e_gc.data() + static_cast<size_t>(b) * plane;
        float mx = 0.0f;
        for (size_t i = 0; i < plane; ++i) mx = std::max(mx, p[i]);
        if (mx > 0.0f) {
            // min taken as 0: the map is ReLU output, and a constant positive
            // map must normalize to ones, not NaN
            for (size_t i = 0; i < plane; ++i) p[i] /= mx;
        }
    }
    map.normalized = true;
    return map;
}

SaliencyMap class_saliency(const nn::SegModel& model, const nn::ForwardResult& fr, SegClass c) {
    Tensor alpha = gradcam_weights(model, fr, c);
    return normalize_saliency(gradcam_heatmap(alpha, fr.features, c));
}

} // namespace sfda
