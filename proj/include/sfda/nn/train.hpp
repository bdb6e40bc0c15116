#ifndef SFDA_NN_TRAIN_HPP
#define SFDA_NN_TRAIN_HPP

#include <vector>

#include "sfda/data.hpp"
#include "sfda/nn/model.hpp"

namespace sfda::nn {

struct SourceTrainConfig {
    int epochs = 20;
    int batch_size = 8;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    uint64_t seed = 0;
    bool augment = false;
};

struct SourceTrainReport {
    std::vector<double> epoch_bce; // mean per-channel BCE per epoch
};

// Supervised training of the (desk-scale) source model with per-channel
// binary cross-entropy against the ground-truth cup/disc masks.
SourceTrainReport train_source(SegModel& model, const DatasetSplit& split,
                               const SourceTrainConfig& cfg);

// Assembles samples[indices] into a B x 3 x H x W batch.
Tensor make_batch(const std::vector<FundusSample>& samples, const std::vector<int>& indices);

// Stacks gt_masks of samples[indices] into B x 2 x H x W.
Tensor make_gt_batch(const std::vector<FundusSample>& samples, const std::vector<int>& indices);

} // namespace sfda::nn

#endif
