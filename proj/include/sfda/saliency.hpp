#ifndef SFDA_SALIENCY_HPP
#define SFDA_SALIENCY_HPP

#include "sfda/nn/model.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

enum class SegClass { cup = nn::kCupChannel, disc = nn::kDiscChannel };

inline const char* seg_class_name(SegClass c) { return c == SegClass::cup ? "cup" : "disc"; }

// Class saliency heatmap: e_gc = ReLU(sum_k alpha_k A^k), detached from the
// differentiation graph (treated as a constant by every downstream loss).
struct SaliencyMap {
    Tensor e_gc;  // B x H_f x W_f, non-negative
    Tensor alpha; // B x K_f channel weights
    SegClass class_id = SegClass::cup;
    bool normalized = false;
};

// Scalar reduction for segmentation Grad-CAM: per-image spatial sum of the
// selected class's logit channel. Returns a {B} tensor.
Tensor class_score(const Tensor& logits, SegClass c);

// alpha = spatial mean of d(score)/dA per channel; grads is B x K x H x W.
Tensor spatial_mean_per_channel(const Tensor& grads);

// d(class_score)/dA via the model's recorded graph (head-only backward).
// Throws ContractViolation when the forward pass did not record activations.
Tensor gradcam_feature_grads(const nn::SegModel& model, const nn::ForwardResult& fr, SegClass c);

Tensor gradcam_weights(const nn::SegModel& model, const nn::ForwardResult& fr, SegClass c);

SaliencyMap gradcam_heatmap(const Tensor& alpha, const Tensor& features, SegClass c);

// Per-image min-max normalization to [0,1]. Identically-zero maps stay zero;
// constant positive maps become all-ones (min taken as 0 when max == min > 0).
SaliencyMap normalize_saliency(SaliencyMap map);

// weights -> heatmap -> normalize in one call.
SaliencyMap class_saliency(const nn::SegModel& model, const nn::ForwardResult& fr, SegClass c);

} // namespace sfda

#endif
