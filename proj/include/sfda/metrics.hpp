#ifndef SFDA_METRICS_HPP
#define SFDA_METRICS_HPP

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sfda/data.hpp"
#include "sfda/nn/model.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

// 2|P∩G| / (|P|+|G|); two empty masks score 1.0. Masks are H x W in {0,1}.
double dice(const Tensor& pred, const Tensor& gt);

// Symmetrized mean Euclidean distance between boundary pixel sets (boundary =
// foreground pixel 4-adjacent to background, image border counts as
// background). nullopt when either mask is empty.
std::optional<double> average_surface_distance(const Tensor& pred, const Tensor& gt);

// Foreground pixels 4-adjacent to background -> 1.
Tensor boundary_pixels(const Tensor& mask);

// Exact squared Euclidean distance transform to the nearest site (site = pixel
// with sites[i] != 0); a large finite sentinel when there are no sites.
std::vector<double> squared_edt(const Tensor& sites);

// Largest 8-connected component, holes filled (4-connected background flood
// from the border). Empty masks pass through.
Tensor postprocess_mask(const Tensor& mask);

struct EvalConfig {
    float threshold = 0.5f;
    bool postprocess = true;
};

struct SampleMetrics {
    std::string id;
    double dice_cup = 0.0, dice_disc = 0.0; // percent
    std::optional<double> asd_cup, asd_disc;
};

struct MetricsReport {
    std::vector<SampleMetrics> rows;
    double mean_dice_cup = 0.0, mean_dice_disc = 0.0;
    std::optional<double> mean_asd_cup, mean_asd_disc; // undefined samples excluded
    int undefined_asd = 0;
    EvalConfig config;
};

MetricsReport evaluate(const nn::SegModel& model, const DatasetSplit& split,
                       const EvalConfig& cfg = {});

// Pure per-sample core (also used with constructed probability maps in tests).
SampleMetrics evaluate_sample(const Tensor& probs2hw, const Tensor& gt_masks,
                              const std::string& id, const EvalConfig& cfg);

void write_report_text(const MetricsReport& report, std::ostream& os);
void write_report_json(const MetricsReport& report, const std::string& path);

} // namespace sfda

#endif
