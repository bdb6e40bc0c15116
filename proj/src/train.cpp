#include "sfda/nn/train.hpp"

#include <cmath>
#include <numeric>

#include "sfda/error.hpp"
#include "sfda/nn/adam.hpp"

namespace sfda::nn {

Tensor make_batch(const std::vector<FundusSample>& samples, const std::vector<int>& indices) {
    if (indices.empty()) throw InvalidArgument("make_batch: empty index list");
    const Tensor& first = samples[static_cast<size_t>(indices[0])].image;
    const int H = first.dim(1), W = first.dim(2);
    Tensor batch({static_cast<int>(indices.size()), 3, H, W});
    for (size_t b = 0; b < indices.size(); ++b) {
        const Tensor& img = samples[static_cast<size_t>(indices[b])].image;
        require_shape(img, {3, H, W}, "make_batch sample");
        std::copy(img.data(), img.data() + img.numel(), batch.data() + b * img.numel());
    }
    return batch;
}

Tensor make_gt_batch(const std::vector<FundusSample>& samples, const std::vector<int>& indices) {
    const auto& first = samples[static_cast<size_t>(indices[0])];
    if (!first.gt_masks) throw InvalidArgument("make_gt_batch: sample lacks gt_masks");
    const int H = first.gt_masks->dim(1), W = first.gt_masks->dim(2);
    Tensor gt({static_cast<int>(indices.size()), 2, H, W});
    for (size_t b = 0; b < indices.size(); ++b) {
        const auto& s = samples[static_cast<size_t>(indices[b])];
        if (!s.gt_masks) throw InvalidArgument("make_gt_batch: sample '" + s.id + "' lacks gt_masks");
        std::copy(s.gt_masks->data(), s.gt_masks->data() + s.gt_masks->numel(),
                  gt.data() + b * s.gt_masks->numel());
    }
    return gt;
}

SourceTrainReport train_source(SegModel& model, const DatasetSplit& split,
                               const SourceTrainConfig& cfg) {
    if (split.samples.empty()) throw InvalidArgument("train_source: empty split");
    for (const auto& s : split.samples)
        if (!s.gt_masks)
            throw InvalidArgument("train_source: sample '" + s.id +
                                  "' has no gt_masks; source training is supervised");
    if (cfg.epochs < 0) throw InvalidArgument("train_source: negative epochs");

    SourceTrainReport report;
    if (cfg.epochs == 0) return report;

    Adam adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2);
    Rng shuffle_rng = Rng(cfg.seed).fork(1);
    Rng dropout_rng = Rng(cfg.seed).fork(2);
    Rng augment_rng = Rng(cfg.seed).fork(3);

    const int n = static_cast<int>(split.samples.size());
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with our own RNG
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

        double loss_sum = 0.0;
        long loss_count = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            std::vector<int> idx(order.begin() + start,
                                 order.begin() + std::min(n, start + cfg.batch_size));
            Tensor batch = make_batch(split.samples, idx);
            if (cfg.augment) {
                const int H = batch.dim(2), W = batch.dim(3);
                for (size_t b = 0; b < idx.size(); ++b) {
                    Tensor img({3, H, W});
                    std::copy(batch.data() + b * img.numel(), batch.data() + (b + 1) * img.numel(),
                              img.data());
                    img = weak_augment(img, augment_rng);
                    std::copy(img.data(), img.data() + img.numel(), batch.data() + b * img.numel());
                }
            }
            Tensor gt = make_gt_batch(split.samples, idx);

            ForwardOptions opts;
            opts.stochastic = true;
            opts.train = true;
            opts.rng = &dropout_rng;
            ForwardResult fr = model.forward(batch, opts);

            // mean per-channel BCE; d(loss)/d(logit) = (p - y)/N
            const double N = static_cast<double>(fr.probs.numel());
            Tensor dlogits(fr.logits.shape());
            double loss = 0.0;
            for (size_t i = 0; i < fr.probs.numel(); ++i) {
                const double p = fr.probs[i];
                const double y = gt[i];
                loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
                dlogits[i] = static_cast<float>((p - y) / N);
            }
            loss /= N;
            if (!std::isfinite(loss))
                throw NumericalError("train_source: non-finite loss at epoch " +
                                     std::to_string(epoch));
            loss_sum += loss * static_cast<double>(idx.size());
            loss_count += static_cast<long>(idx.size());

            model.zero_grads();
            model.backward(fr, dlogits);
            adam.step();
        }
        report.epoch_bce.push_back(loss_sum / static_cast<double>(loss_count));
    }
    return report;
}

} // namespace sfda::nn
