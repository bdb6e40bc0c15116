#ifndef SFDA_ADAPT_HPP
#define SFDA_ADAPT_HPP

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfda/contrastive.hpp"
#include "sfda/data.hpp"
#include "sfda/metrics.hpp"
#include "sfda/nn/model.hpp"

namespace sfda {

struct AdaptConfig {
    float gamma = 0.75f; // pseudolabel confidence threshold
    float eta = 0.05f;   // uncertainty threshold
    int mc_passes = 10;  // K
    float lambda = 1.0f; // contrastive weight
    int epochs = 20;
    int batch_size = 8;
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    ContrastiveMetric metric = ContrastiveMetric::cosine;
    uint64_t seed = 0;
    bool augment = true;
    bool refresh_pseudolabels = false; // recompute from the evolving model each epoch
    bool train_dropout = false;        // dropout active in the adaptation forward
    bool pixel_cosine = true;          // per-pixel cosine; false: image-level pooled
    bool force_unit_saliency = false;  // regression switch: all-ones heatmaps
    std::string pseudolabel_cache;     // optional cache directory
    std::string debug_dump;            // optional per-batch JSONL dump
    std::string checkpoint_dir;        // optional: last.ckpt / best.ckpt per epoch

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double l_seg = 0.0;
    double l_sim = 0.0; // signed, as it enters the total
    double l_total = 0.0;
    double kept_frac_cup = 0.0;
    double kept_frac_disc = 0.0;
    double seconds = 0.0;
};

struct AdaptReport {
    std::vector<EpochStats> epochs;
    std::string last_checkpoint;
    std::string best_checkpoint;
    int best_epoch = -1;
};

// Mask-free view of a target split: the adaptation path takes this type, so
// ground truth is stripped before it can be consulted (source-free contract).
struct UnlabeledSplit {
    std::vector<Tensor> images;
    std::vector<std::string> ids;
    std::string domain_name;

    static UnlabeledSplit from(const DatasetSplit& split);
};

// L_total = L_seg + lambda * L_sim (L_sim already carries the metric's sign).
double total_loss(double l_seg, double l_sim, double lambda);

std::pair<std::unique_ptr<nn::SegModel>, AdaptReport> adapt(nn::SegModel& source_model,
                                                            const UnlabeledSplit& target,
                                                            const AdaptConfig& cfg);

struct AblationRow {
    ContrastiveMetric metric = ContrastiveMetric::cosine;
    double dice_cup = 0.0, dice_disc = 0.0; // percent
    std::optional<double> asd_cup, asd_disc;
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

// Runs adapt once per metric (shared seed) and evaluates on the labeled test
// split; rows are in metric order.
AblationTable ablate(nn::SegModel& source_model, const UnlabeledSplit& target_train,
                     const DatasetSplit& target_test, const AdaptConfig& base,
                     const std::vector<ContrastiveMetric>& metrics,
                     const EvalConfig& eval_cfg = {});

void write_ablation_text(const AblationTable& table, std::ostream& os);
void write_ablation_json(const AblationTable& table, const std::string& path);

} // namespace sfda

#endif
