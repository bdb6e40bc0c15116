#ifndef SFDA_PSEUDOLABEL_HPP
#define SFDA_PSEUDOLABEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "sfda/nn/model.hpp"
#include "sfda/rng.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

// Binary pseudolabels: 1 exactly where probs >= gamma (ties labeled positive).
struct PseudoLabelMap {
    Tensor labels; // same shape as probs, values in {0,1}
    float gamma = 0.0f;
};

// Per-pixel population standard deviation across K stochastic passes.
struct UncertaintyMap {
    Tensor u;          // std, in [0, 0.5] for probabilities
    Tensor mean_probs; // arithmetic mean of the passes
    int passes = 0;
};

PseudoLabelMap threshold_pseudolabels(const Tensor& probs, float gamma);

// Pure core of the MC-dropout estimate; passes must be >= 2 and same-shaped.
UncertaintyMap uncertainty_from_passes(const std::vector<Tensor>& pass_probs);

UncertaintyMap mc_dropout_uncertainty(const nn::SegModel& model, const Tensor& batch, int k,
                                      Rng& rng);

// m = 1[u < eta], strict inequality.
Tensor uncertainty_mask(const Tensor& u, float eta);
inline Tensor uncertainty_mask(const UncertaintyMap& u, float eta) {
    return uncertainty_mask(u.u, eta);
}

// On-disk cache: one file per sample with labels, u, mean_probs and the
// (gamma, eta, K) provenance triple.
struct PseudoLabelRecord {
    Tensor labels;     // 2 x H x W
    Tensor u;          // 2 x H x W
    Tensor mean_probs; // 2 x H x W
    float gamma = 0.0f;
    float eta = 0.0f;
    int passes = 0;
};

void save_pseudolabel_record(const std::string& dir, const std::string& id,
                             const PseudoLabelRecord& rec);

// Returns nullopt when no cache file exists for the id. Throws DataError on a
// corrupt file; provenance mismatches are reported via the record fields.
std::optional<PseudoLabelRecord> load_pseudolabel_record(const std::string& dir,
                                                         const std::string& id);

} // namespace sfda

#endif
