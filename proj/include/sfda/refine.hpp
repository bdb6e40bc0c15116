#ifndef SFDA_REFINE_HPP
#define SFDA_REFINE_HPP

#include <utility>
#include <vector>

#include "sfda/saliency.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

// Probability-weighted object/background prototype pair for one class.
// Degenerate denominators are signaled via the valid flags, not exceptions.
struct Prototypes {
    std::vector<float> z_ob;
    std::vector<float> z_bg;
    SegClass class_id = SegClass::cup;
    bool valid_ob = false;
    bool valid_bg = false;
};

// e' = features * saliency, saliency broadcast across the channel dimension.
// features B x K x H x W, saliency B x H x W.
Tensor modulate_features(const Tensor& features, const Tensor& saliency);

// Sums run over the whole batch. labels/reliable/probs are B x H x W planes of
// the class in question; object weights are p, background weights (1 - p).
Prototypes compute_prototypes(const Tensor& e_prime, const Tensor& labels, const Tensor& reliable,
                              const Tensor& probs, SegClass class_id);

// Per-pixel Euclidean distance over channels to each prototype.
// Throws ContractViolation when a prototype is invalid (check the flags).
std::pair<Tensor, Tensor> feature_distances(const Tensor& e_prime, const Prototypes& protos);

// m = 1[u<eta][y=1][d_ob<d_bg] + 1[u<eta][y=0][d_ob>d_bg]; ties excluded.
Tensor refined_mask(const Tensor& u, float eta, const Tensor& labels, const Tensor& d_ob,
                    const Tensor& d_bg);

struct ClassRefinement {
    Tensor mask; // B x H x W
    Prototypes protos;
    Tensor d_ob, d_bg; // empty when fell back
    bool fallback = false;
};

// Full per-class pipeline (modulate -> prototypes -> distances -> mask); when
// either prototype is degenerate, falls back to the uncertainty mask alone.
ClassRefinement refine_class(const Tensor& features, const Tensor& saliency, const Tensor& labels,
                             const Tensor& u, float eta, const Tensor& probs, SegClass class_id);

// Masked per-pixel cross-entropy with pseudolabels, summed over kept pixels
// and normalized by their count; 0 when the mask is empty. All inputs share a
// shape (typically B x 2 x H x W).
double masked_ce_loss(const Tensor& probs, const Tensor& labels, const Tensor& mask);

// dL/d(probs) of masked_ce_loss.
Tensor masked_ce_grad(const Tensor& probs, const Tensor& labels, const Tensor& mask);

} // namespace sfda

#endif
