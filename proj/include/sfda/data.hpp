#ifndef SFDA_DATA_HPP
#define SFDA_DATA_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sfda/rng.hpp"
#include "sfda/tensor.hpp"

namespace sfda {

// One fundus image. image is 3 x H x W in [0,1]; gt_masks, when present, is
// 2 x H x W binary with channel 0 = cup, channel 1 = disc.
struct FundusSample {
    Tensor image;
    std::optional<Tensor> gt_masks;
    std::string id;
};

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct DatasetSplit {
    std::vector<FundusSample> samples;
    Split split = Split::train;
    std::string domain_name;
};

// Desk-scale generator: bright elliptical disc with a concentric brighter cup
// on a fundus-toned background, plus a controllable appearance shift.
struct SyntheticDomainSpec {
    int n_samples = 20;
    int image_size = 128;
    float disc_radius_min = 28.0f;
    float disc_radius_max = 40.0f;
    float cup_ratio_min = 0.45f; // cup-to-disc radius ratio, subset of (0,1)
    float cup_ratio_max = 0.65f;
    float intensity_shift = 0.0f;
    float contrast_scale = 1.0f;
    float blur_sigma = 0.0f;
    float noise_sigma = 0.0f;
    uint64_t seed = 0;

    void validate() const;
};

struct CropWindow {
    int row0 = 0, col0 = 0, size = 0;
};

// Clamped square window of the given size around center (row, col). When center
// is omitted the image center is used.
CropWindow roi_window(int height, int width, std::optional<std::pair<int, int>> center, int size);

Tensor crop_with_window(const Tensor& t, const CropWindow& win);

// Square ROI crop of a 3 x H' x W' image. size must fit inside the image.
Tensor crop_roi(const Tensor& image, std::optional<std::pair<int, int>> center, int size);

DatasetSplit generate_synthetic_domain(const SyntheticDomainSpec& spec, Split split = Split::train,
                                       const std::string& domain_name = "synthetic");

struct AugmentConfig {
    float apply_prob = 0.5f; // each augmentation fires independently
    float erase_area_min = 0.02f;
    float erase_area_max = 0.2f;
    float erase_aspect_min = 0.3f;
    float erase_aspect_max = 3.3f;
    float contrast_lo = 0.7f;
    float contrast_hi = 1.3f;
    float noise_sigma = 0.05f;
};

struct AugmentTrace {
    bool erased = false;
    int erase_row = 0, erase_col = 0, erase_h = 0, erase_w = 0;
    bool contrast = false;
    float contrast_factor = 1.0f;
    bool noised = false;
};

// Random erasing (rectangle filled with the per-channel image mean), contrast
// modification around the image mean, and additive Gaussian noise; output
// clipped to [0,1], shape unchanged.
Tensor weak_augment(const Tensor& image, Rng& rng, const AugmentConfig& cfg = {},
                    AugmentTrace* trace = nullptr);

enum class DatasetLayout { refuge, drishti, rimone, synthetic_dir };

enum class MaskPolicy { required, optional };

struct LoadOptions {
    int roi_size = 0; // 0: use min(H, W)
    MaskPolicy masks = MaskPolicy::required;
};

DatasetLayout parse_layout(const std::string& name);

DatasetSplit load_dataset(const std::string& root, DatasetLayout layout, Split split,
                          const LoadOptions& opts = {});

// Writes the synthetic_dir layout: images/<id>.png, masks/<id>_cup.png,
// masks/<id>_disc.png under dir.
void save_synthetic_dir(const DatasetSplit& split, const std::string& dir);

// cup ⊆ disc containment; returns the number of cup pixels outside the disc.
int cup_outside_disc(const Tensor& gt_masks);

} // namespace sfda

#endif
