#include "sfda/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>

#include "sfda/error.hpp"
#include "sfda/image.hpp"

namespace fs = std::filesystem;

namespace sfda {

void SyntheticDomainSpec::validate() const {
    if (n_samples < 1) throw InvalidArgument("synthetic spec: n_samples must be >= 1");
    if (image_size < 16) throw InvalidArgument("synthetic spec: image_size too small");
    if (!(cup_ratio_min > 0.0f && cup_ratio_max < 1.0f && cup_ratio_min <= cup_ratio_max))
        throw InvalidArgument("synthetic spec: cup ratio range must be inside (0,1)");
    if (!(disc_radius_min > 2.0f && disc_radius_min <= disc_radius_max))
        throw InvalidArgument("synthetic spec: bad disc radius range");
    if (contrast_scale <= 0.0f) throw InvalidArgument("synthetic spec: contrast_scale must be > 0");
    if (noise_sigma < 0.0f || blur_sigma < 0.0f)
        throw InvalidArgument("synthetic spec: negative sigma");
}

CropWindow roi_window(int height, int width, std::optional<std::pair<int, int>> center, int size) {
    if (size <= 0) throw InvalidArgument("crop_roi: size must be positive");
    if (size > height || size > width)
        throw InvalidArgument("crop_roi: size " + std::to_string(size) +
                              " exceeds image dims " + std::to_string(height) + "x" +
                              std::to_string(width));
    const int cr = center ? center->first : height / 2;
    const int cc = center ? center->second : width / 2;
    CropWindow win;
    win.size = size;
    win.row0 = std::min(std::max(cr - size / 2, 0), height - size);
    win.col0 = std::min(std::max(cc - size / 2, 0), width - size);
    return win;
}

Tensor crop_with_window(const Tensor& t, const CropWindow& win) {
    const int C = t.rank() == 3 ? t.dim(0) : 1;
    const int H = t.rank() == 3 ? t.dim(1) : t.dim(0);
    const int W = t.rank() == 3 ? t.dim(2) : t.dim(1);
    Tensor out(t.rank() == 3 ? std::vector<int>{C, win.size, win.size}
                             : std::vector<int>{win.size, win.size});
    for (int c = 0; c < C; ++c) {
        const float* src = t.data() + static_cast<size_t>(c) * H * W;
        float* dst = out.data() + static_cast<size_t>(c) * win.size * win.size;
        for (int r = 0; r < win.size; ++r) {
            const float* srow = src + static_cast<size_t>(win.row0 + r) * W + win.col0;
            std::copy(srow, srow + win.size, dst + static_cast<size_t>(r) * win.size);
        }
    }
    return out;
}

Tensor crop_roi(const Tensor& image, std::optional<std::pair<int, int>> center, int size) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw InvalidArgument("crop_roi: expected 3 x H x W image, got " + image.shape_str());
    return crop_with_window(image, roi_window(image.dim(1), image.dim(2), center, size));
}

namespace {

void paint_ellipse(Tensor& mask, double cr, double cc, double rr, double rc) {
    const int H = mask.dim(0), W = mask.dim(1);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const double dy = (r - cr) / rr, dx = (c - cc) / rc;
            if (dy * dy + dx * dx <= 1.0) mask.at(r, c) = 1.0f;
        }
    }
}

} // namespace

DatasetSplit generate_synthetic_domain(const SyntheticDomainSpec& spec, Split split,
                                       const std::string& domain_name) {
    spec.validate();
    DatasetSplit out;
    out.split = split;
    out.domain_name = domain_name;
    const int S = spec.image_size;
    const Rng root(spec.seed);

    for (int i = 0; i < spec.n_samples; ++i) {
        Rng rng = root.fork(static_cast<uint64_t>(i) + (split == Split::test ? 1000003u : 0u));

        // geometry
        const double jitter = S * 0.06;
        const double cr = S / 2.0 + rng.uniform(-jitter, jitter);
        const double cc = S / 2.0 + rng.uniform(-jitter, jitter);
        double base_r = rng.uniform(spec.disc_radius_min, spec.disc_radius_max);
        const double margin = std::min({cr, cc, S - 1 - cr, S - 1 - cc}) - 1.0;
        base_r = std::min(base_r, margin / 1.15);
        const double rr = base_r * rng.uniform(0.85, 1.15);
        const double rc = base_r * rng.uniform(0.85, 1.15);
        const double q = rng.uniform(spec.cup_ratio_min, spec.cup_ratio_max);

        Tensor disc({S, S}), cup({S, S});
        paint_ellipse(disc, cr, cc, rr, rc);
        paint_ellipse(cup, cr, cc, q * rr, q * rc);

        // colors (fundus-toned background, bright disc, brighter cup)
        const float bg[3] = {static_cast<float>(0.55 + rng.uniform(-0.05, 0.05)),
                             static_cast<float>(0.28 + rng.uniform(-0.04, 0.04)),
                             static_cast<float>(0.14 + rng.uniform(-0.03, 0.03))};
        const float disc_col[3] = {static_cast<float>(0.93 + rng.uniform(-0.03, 0.03)),
                                   static_cast<float>(0.82 + rng.uniform(-0.04, 0.04)),
                                   static_cast<float>(0.55 + rng.uniform(-0.05, 0.05))};
        const float cup_col[3] = {static_cast<float>(1.00 + rng.uniform(-0.02, 0.0)),
                                  static_cast<float>(0.95 + rng.uniform(-0.03, 0.0)),
                                  static_cast<float>(0.78 + rng.uniform(-0.04, 0.0))};
        const double grad_amp = rng.uniform(0.0, 0.05);

        Tensor img({3, S, S});
        for (int ch = 0; ch < 3; ++ch) {
            float* plane = img.data() + static_cast<size_t>(ch) * S * S;
            for (int r = 0; r < S; ++r) {
                const float shade = static_cast<float>(grad_amp * (r / static_cast<double>(S) - 0.5));
                for (int c = 0; c < S; ++c) {
                    float v = bg[ch] + shade;
                    if (cup.at(r, c) > 0.5f) v = cup_col[ch];
                    else if (disc.at(r, c) > 0.5f) v = disc_col[ch];
                    plane[static_cast<size_t>(r) * S + c] = v;
                }
            }
        }

        // appearance shift
        if (spec.blur_sigma > 0.0f) img = gaussian_blur_chw(img, spec.blur_sigma);
        for (size_t j = 0; j < img.numel(); ++j)
            img[j] = (img[j] - 0.5f) * spec.contrast_scale + 0.5f + spec.intensity_shift;
        if (spec.noise_sigma > 0.0f) {
            for (size_t j = 0; j < img.numel(); ++j)
                img[j] += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
        }
        for (size_t j = 0; j < img.numel(); ++j)
            img[j] = std::min(std::max(img[j], 0.0f), 1.0f);

        FundusSample sample;
        sample.image = std::move(img);
        sample.gt_masks = stack_planes(cup, disc);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth_%04d", i);
        sample.id = buf;
        out.samples.push_back(std::move(sample));
    }
    return out;
}

Tensor weak_augment(const Tensor& image, Rng& rng, const AugmentConfig& cfg,
                    AugmentTrace* trace) {
    if (image.rank() != 3)
        throw InvalidArgument("weak_augment: expected C x H x W image");
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor out = image;
    AugmentTrace tr;

    // 1) random erasing: one rectangle filled with the per-channel image mean
    if (rng.bernoulli(cfg.apply_prob)) {
        const double area = rng.uniform(cfg.erase_area_min, cfg.erase_area_max) *
                            static_cast<double>(H) * W;
        const double aspect = rng.uniform(cfg.erase_aspect_min, cfg.erase_aspect_max);
        int eh = std::max(1, std::min(H, static_cast<int>(std::lround(std::sqrt(area * aspect)))));
        int ew = std::max(1, std::min(W, static_cast<int>(std::lround(std::sqrt(area / aspect)))));
        const int r0 = rng.uniform_int(0, H - eh);
        const int c0 = rng.uniform_int(0, W - ew);
        for (int c = 0; c < C; ++c) {
            const float* src = image.data() + static_cast<size_t>(c) * H * W;
            double mean = 0.0;
            for (size_t i = 0; i < static_cast<size_t>(H) * W; ++i) mean += src[i];
            mean /= static_cast<double>(H) * W;
            float* dst = out.data() + static_cast<size_t>(c) * H * W;
            for (int r = r0; r < r0 + eh; ++r)
                for (int x = c0; x < c0 + ew; ++x)
                    dst[static_cast<size_t>(r) * W + x] = static_cast<float>(mean);
        }
        tr.erased = true;
        tr.erase_row = r0;
        tr.erase_col = c0;
        tr.erase_h = eh;
        tr.erase_w = ew;
    }

    // 2) contrast modification around the global image mean
    if (rng.bernoulli(cfg.apply_prob)) {
        const float f = static_cast<float>(rng.uniform(cfg.contrast_lo, cfg.contrast_hi));
        double mean = 0.0;
        for (size_t i = 0; i < out.numel(); ++i) mean += out[i];
        mean /= static_cast<double>(out.numel());
        const float m = static_cast<float>(mean);
        for (size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - m) * f + m;
        tr.contrast = true;
        tr.contrast_factor = f;
    }

    // 3) additive Gaussian noise
    if (rng.bernoulli(cfg.apply_prob)) {
        for (size_t i = 0; i < out.numel(); ++i)
            out[i] += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
        tr.noised = true;
    }

    for (size_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(out[i], 0.0f), 1.0f);
    if (trace) *trace = tr;
    return out;
}

int cup_outside_disc(const Tensor& gt) {
    const int H = gt.dim(1), W = gt.dim(2);
    int bad = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (gt.at(0, r, c) > 0.5f && gt.at(1, r, c) < 0.5f) ++bad;
    return bad;
}

DatasetLayout parse_layout(const std::string& name) {
    if (name == "refuge") return DatasetLayout::refuge;
    if (name == "drishti") return DatasetLayout::drishti;
    if (name == "rimone") return DatasetLayout::rimone;
    if (name == "synthetic_dir") return DatasetLayout::synthetic_dir;
    throw InvalidArgument("unknown dataset layout '" + name +
                          "' (known: refuge, drishti, rimone, synthetic_dir)");
}

namespace {

bool is_image_file(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".bmp";
}

std::optional<std::pair<int, int>> mask_centroid(const Tensor& gt, int channel) {
    const int H = gt.dim(1), W = gt.dim(2);
    double sr = 0.0, sc = 0.0;
    long n = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (gt.at(channel, r, c) > 0.5f) {
                sr += r;
                sc += c;
                ++n;
            }
    if (n == 0) return std::nullopt;
    return std::make_pair(static_cast<int>(sr / n), static_cast<int>(sc / n));
}

// Resolve <root>/<split> when the split subdirectory exists, else use root as-is
// (flat directories count as the requested split).
fs::path resolve_split_dir(const fs::path& root, Split split) {
    const fs::path sub = root / split_name(split);
    if (fs::is_directory(sub)) return sub;
    return root;
}

DatasetSplit load_synthetic_dir(const fs::path& root, Split split, const LoadOptions& opts) {
    const fs::path base = resolve_split_dir(root, split);
    const fs::path img_dir = base / "images";
    const fs::path mask_dir = base / "masks";
    if (!fs::is_directory(img_dir))
        throw DataError("synthetic_dir layout: missing images directory " + img_dir.string());

    DatasetSplit out;
    out.split = split;
    out.domain_name = root.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(img_dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::set<std::string> seen;
    for (const auto& f : files) {
        FundusSample s;
        s.id = f.stem().string();
        if (!seen.insert(s.id).second)
            throw DataError("duplicate sample id '" + s.id + "' in " + img_dir.string());
        s.image = load_image_chw(f.string());

        const fs::path cup_p = mask_dir / (s.id + "_cup.png");
        const fs::path disc_p = mask_dir / (s.id + "_disc.png");
        const bool have = fs::exists(cup_p) && fs::exists(disc_p);
        if (!have && opts.masks == MaskPolicy::required)
            throw DataError("sample '" + s.id + "': missing mask files in " + mask_dir.string());
        if (have) {
            Tensor cup = load_mask_plane(cup_p.string());
            Tensor disc = load_mask_plane(disc_p.string());
            if (cup.shape() != disc.shape() || cup.dim(0) != s.image.dim(1) ||
                cup.dim(1) != s.image.dim(2))
                throw DataError("sample '" + s.id + "': mask size does not match image size");
            s.gt_masks = stack_planes(cup, disc);
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

// The three real datasets are consumed in the widely used preprocessed form:
// <root>/<split>/image/*.png(.jpg,.bmp) plus <root>/<split>/mask/<stem>.png
// with tri-level values (0 = cup, 128 = disc, 255 = background).
DatasetSplit load_trilevel_tree(const fs::path& root, Split split, const LoadOptions& opts,
                                const char* what) {
    const fs::path base = resolve_split_dir(root, split);
    const fs::path img_dir = base / "image";
    const fs::path mask_dir = base / "mask";
    if (!fs::is_directory(img_dir))
        throw DataError(std::string(what) + " layout: missing image directory " + img_dir.string());

    DatasetSplit out;
    out.split = split;
    out.domain_name = root.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(img_dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    std::set<std::string> seen;
    for (const auto& f : files) {
        FundusSample s;
        s.id = f.stem().string();
        if (!seen.insert(s.id).second)
            throw DataError("duplicate sample id '" + s.id + "' in " + img_dir.string());
        s.image = load_image_chw(f.string());

        fs::path mask_p = mask_dir / (s.id + ".png");
        if (!fs::exists(mask_p)) mask_p = mask_dir / (s.id + ".bmp");
        if (!fs::exists(mask_p)) {
            if (opts.masks == MaskPolicy::required)
                throw DataError("sample '" + s.id + "': missing mask in " + mask_dir.string());
        } else {
            Tensor gt = load_trilevel_mask(mask_p.string());
            if (gt.dim(1) != s.image.dim(1) || gt.dim(2) != s.image.dim(2))
                throw DataError("sample '" + s.id + "': mask size does not match image size");
            s.gt_masks = std::move(gt);
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

} // namespace

DatasetSplit load_dataset(const std::string& root, DatasetLayout layout, Split split,
                          const LoadOptions& opts) {
    if (!fs::is_directory(root))
        throw DataError("dataset directory does not exist: " + root);

    DatasetSplit out;
    switch (layout) {
        case DatasetLayout::synthetic_dir:
            out = load_synthetic_dir(root, split, opts);
            break;
        case DatasetLayout::refuge:
            out = load_trilevel_tree(root, split, opts, "refuge");
            break;
        case DatasetLayout::drishti:
            out = load_trilevel_tree(root, split, opts, "drishti");
            break;
        case DatasetLayout::rimone:
            out = load_trilevel_tree(root, split, opts, "rimone");
            break;
    }

    const bool synthetic = layout == DatasetLayout::synthetic_dir;
    for (auto& s : out.samples) {
        const int H = s.image.dim(1), W = s.image.dim(2);
        const int size = opts.roi_size > 0 ? opts.roi_size : std::min(H, W);
        if (H != size || W != size) {
            std::optional<std::pair<int, int>> center;
            if (s.gt_masks) center = mask_centroid(*s.gt_masks, 1);
            const CropWindow win = roi_window(H, W, center, size);
            s.image = crop_with_window(s.image, win);
            if (s.gt_masks) s.gt_masks = crop_with_window(*s.gt_masks, win);
        }
        if (s.gt_masks) {
            const int bad = cup_outside_disc(*s.gt_masks);
            if (bad > 0) {
                if (synthetic)
                    throw DataError("sample '" + s.id + "': cup mask not contained in disc mask (" +
                                    std::to_string(bad) + " pixels)");
                std::cerr << "warning: sample '" << s.id << "': cup mask not contained in disc mask ("
                          << bad << " pixels outside)\n";
            }
        }
    }
    return out;
}

void save_synthetic_dir(const DatasetSplit& split, const std::string& dir) {
    const fs::path base(dir);
    fs::create_directories(base / "images");
    fs::create_directories(base / "masks");
    for (const auto& s : split.samples) {
        save_image_chw((base / "images" / (s.id + ".png")).string(), s.image);
        if (s.gt_masks) {
            save_gray((base / "masks" / (s.id + "_cup.png")).string(),
                      select_plane(*s.gt_masks, 0));
            save_gray((base / "masks" / (s.id + "_disc.png")).string(),
                      select_plane(*s.gt_masks, 1));
        }
    }
}

} // namespace sfda
