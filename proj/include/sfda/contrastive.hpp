#ifndef SFDA_CONTRASTIVE_HPP
#define SFDA_CONTRASTIVE_HPP

#include <optional>
#include <string>
#include <utility>

#include "sfda/tensor.hpp"

namespace sfda {

enum class ContrastiveMetric { cosine, kl, js, mmd, euclidean };

ContrastiveMetric parse_metric(const std::string& name);
const char* metric_name(ContrastiveMetric m);

// Gradient-informed class embeddings: e + e_gc per class, saliency broadcast
// across channels. features B x K x H_f x W_f, saliency maps B x H_f x W_f.
std::pair<Tensor, Tensor> class_embeddings(const Tensor& features, const Tensor& saliency_cup,
                                           const Tensor& saliency_disc);

struct SimilarityLoss {
    double value = 0.0;
    ContrastiveMetric metric = ContrastiveMetric::cosine;
    Tensor d_a, d_b; // populated when with_grad
};

// Per-pixel cosine over the channel dimension, averaged over pixels and batch.
// pixelwise=false pools each image to one vector first (ablation variant).
SimilarityLoss cosine_similarity_loss(const Tensor& a, const Tensor& b, double epsilon = 1e-8,
                                      bool with_grad = false, bool pixelwise = true);

// Table-2 alternatives. kl/js map pixels to channel distributions via softmax;
// mmd uses a Gaussian kernel with the median-distance bandwidth over
// stride-subsampled pixel vectors (bandwidth treated as a constant for
// gradients, overridable via mmd_sigma); euclidean is the mean per-pixel L2.
SimilarityLoss divergence_loss(const Tensor& a, const Tensor& b, ContrastiveMetric metric,
                               bool with_grad = false,
                               std::optional<double> mmd_sigma = std::nullopt);

// Sign convention for the total objective: cosine is minimized as-is,
// divergences are maximized (enter negated).
inline double signed_contrastive(double raw, ContrastiveMetric m) {
    return m == ContrastiveMetric::cosine ? raw : -raw;
}

} // namespace sfda

#endif
