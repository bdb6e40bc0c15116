#include "sfda/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <queue>

#include "sfda/error.hpp"

namespace sfda {

double dice(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "dice");
    long inter = 0, np = 0, ng = 0;
    for (size_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] >= 0.5f, g = gt[i] >= 0.5f;
        inter += (p && g) ? 1 : 0;
        np += p ? 1 : 0;
        ng += g ? 1 : 0;
    }
    if (np + ng == 0) return 1.0; // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

Tensor boundary_pixels(const Tensor& mask) {
    const int H = mask.dim(0), W = mask.dim(1);
    Tensor out({H, W});
    auto fg = [&](int r, int c) {
        if (r < 0 || r >= H || c < 0 || c >= W) return false; // outside = background
        return mask.at(r, c) >= 0.5f;
    };
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (fg(r, c) && (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1)))
                out.at(r, c) = 1.0f;
    return out;
}

namespace {

// Large finite sentinel for "no site"; keeps the parabola intersections
// finite (true squared distances are bounded by H^2 + W^2).
constexpr double kFar = 1e15;
constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[static_cast<size_t>(k)];
            s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
                (2.0 * q - 2.0 * p);
            if (s <= z[static_cast<size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(k) + 1] < q) ++k;
        const int p = v[static_cast<size_t>(k)];
        d[static_cast<size_t>(q)] = (q - p) * static_cast<double>(q - p) + f[static_cast<size_t>(p)];
    }
}

} // namespace

std::vector<double> squared_edt(const Tensor& sites) {
    const int H = sites.dim(0), W = sites.dim(1);
    std::vector<double> d(static_cast<size_t>(H) * W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            d[static_cast<size_t>(r) * W + c] = sites.at(r, c) >= 0.5f ? 0.0 : kFar;

    std::vector<double> f(static_cast<size_t>(std::max(H, W)));
    std::vector<double> buf(static_cast<size_t>(std::max(H, W)));
    // columns
    for (int c = 0; c < W; ++c) {
        for (int r = 0; r < H; ++r) f[static_cast<size_t>(r)] = d[static_cast<size_t>(r) * W + c];
        edt_1d(f, buf, H);
        for (int r = 0; r < H; ++r) d[static_cast<size_t>(r) * W + c] = buf[static_cast<size_t>(r)];
    }
    // rows
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) f[static_cast<size_t>(c)] = d[static_cast<size_t>(r) * W + c];
        edt_1d(f, buf, W);
        for (int c = 0; c < W; ++c) d[static_cast<size_t>(r) * W + c] = buf[static_cast<size_t>(c)];
    }
    return d;
}

std::optional<double> average_surface_distance(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "average_surface_distance");
    bool pred_any = false, gt_any = false;
    for (size_t i = 0; i < pred.numel(); ++i) {
        pred_any = pred_any || pred[i] >= 0.5f;
        gt_any = gt_any || gt[i] >= 0.5f;
    }
    if (!pred_any || !gt_any) return std::nullopt;

    const Tensor pb = boundary_pixels(pred);
    const Tensor gb = boundary_pixels(gt);
    const std::vector<double> d_to_g = squared_edt(gb);
    const std::vector<double> d_to_p = squared_edt(pb);

    double sum_p = 0.0;
    long n_p = 0;
    double sum_g = 0.0;
    long n_g = 0;
    for (size_t i = 0; i < pb.numel(); ++i) {
        if (pb[i] >= 0.5f) {
            sum_p += std::sqrt(d_to_g[i]);
            ++n_p;
        }
        if (gb[i] >= 0.5f) {
            sum_g += std::sqrt(d_to_p[i]);
            ++n_g;
        }
    }
    return 0.5 * (sum_p / static_cast<double>(n_p) + sum_g / static_cast<double>(n_g));
}

Tensor postprocess_mask(const Tensor& mask) {
    const int H = mask.dim(0), W = mask.dim(1);
    std::vector<int> comp(static_cast<size_t>(H) * W, -1);
    int n_comp = 0;
    std::vector<long> sizes;

    // 8-connected components of the foreground
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const size_t i0 = static_cast<size_t>(r) * W + c;
            if (mask[i0] < 0.5f || comp[i0] != -1) continue;
            std::queue<std::pair<int, int>> q;
            q.push({r, c});
            comp[i0] = n_comp;
            long size = 0;
            while (!q.empty()) {
                auto [cr, cc] = q.front();
                q.pop();
                ++size;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (!dr && !dc) continue;
                        const int nr = cr + dr, nc = cc + dc;
                        if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
                        const size_t ni = static_cast<size_t>(nr) * W + nc;
                        if (mask[ni] >= 0.5f && comp[ni] == -1) {
                            comp[ni] = n_comp;
                            q.push({nr, nc});
                        }
                    }
            }
            sizes.push_back(size);
            ++n_comp;
        }
    }
    if (n_comp == 0) return mask; // empty stays empty

    int best = 0;
    for (int i = 1; i < n_comp; ++i)
        if (sizes[static_cast<size_t>(i)] > sizes[static_cast<size_t>(best)]) best = i;

    Tensor out({H, W});
    for (size_t i = 0; i < out.numel(); ++i) out[i] = comp[i] == best ? 1.0f : 0.0f;

    // hole fill: 4-connected background flood from the border
    std::vector<uint8_t> outside(static_cast<size_t>(H) * W, 0);
    std::queue<std::pair<int, int>> q;
    auto push_bg = [&](int r, int c) {
        const size_t i = static_cast<size_t>(r) * W + c;
        if (out[i] < 0.5f && !outside[i]) {
            outside[i] = 1;
            q.push({r, c});
        }
    };
    for (int r = 0; r < H; ++r) {
        push_bg(r, 0);
        push_bg(r, W - 1);
    }
    for (int c = 0; c < W; ++c) {
        push_bg(0, c);
        push_bg(H - 1, c);
    }
    while (!q.empty()) {
        auto [cr, cc] = q.front();
        q.pop();
        if (cr > 0) push_bg(cr - 1, cc);
        if (cr + 1 < H) push_bg(cr + 1, cc);
        if (cc > 0) push_bg(cr, cc - 1);
        if (cc + 1 < W) push_bg(cr, cc + 1);
    }
    for (size_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.5f && !outside[i]) out[i] = 1.0f;
    return out;
}

SampleMetrics evaluate_sample(const Tensor& probs2hw, const Tensor& gt_masks,
                              const std::string& id, const EvalConfig& cfg) {
    SampleMetrics sm;
    sm.id = id;
    for (int ch = 0; ch < 2; ++ch) {
        const Tensor probs = select_plane(probs2hw, ch);
        Tensor pred(probs.shape());
        for (size_t i = 0; i < probs.numel(); ++i)
            pred[i] = probs[i] >= cfg.threshold ? 1.0f : 0.0f;
        if (cfg.postprocess) pred = postprocess_mask(pred);
        const Tensor gt = select_plane(gt_masks, ch);
        const double d = dice(pred, gt) * 100.0;
        const auto a = average_surface_distance(pred, gt);
        if (ch == nn::kCupChannel) {
            sm.dice_cup = d;
            sm.asd_cup = a;
        } else {
            sm.dice_disc = d;
            sm.asd_disc = a;
        }
    }
    return sm;
}

MetricsReport evaluate(const nn::SegModel& model, const DatasetSplit& split,
                       const EvalConfig& cfg) {
    MetricsReport report;
    report.config = cfg;
    if (split.samples.empty()) throw InvalidArgument("evaluate: empty split");

    double sd_cup = 0.0, sd_disc = 0.0, sa_cup = 0.0, sa_disc = 0.0;
    long na_cup = 0, na_disc = 0;
    for (const auto& s : split.samples) {
        if (!s.gt_masks)
            throw InvalidArgument("evaluate: sample '" + s.id + "' has no gt_masks");
        Tensor batch({1, 3, s.image.dim(1), s.image.dim(2)});
        std::copy(s.image.data(), s.image.data() + s.image.numel(), batch.data());
        nn::ForwardOptions opts;
        opts.record = false;
        const nn::ForwardResult fr = model.forward(batch, opts);
        Tensor probs2hw({2, fr.probs.dim(2), fr.probs.dim(3)});
        std::copy(fr.probs.data(), fr.probs.data() + probs2hw.numel(), probs2hw.data());

        SampleMetrics sm = evaluate_sample(probs2hw, *s.gt_masks, s.id, cfg);
        sd_cup += sm.dice_cup;
        sd_disc += sm.dice_disc;
        if (sm.asd_cup) {
            sa_cup += *sm.asd_cup;
            ++na_cup;
        } else {
            ++report.undefined_asd;
        }
        if (sm.asd_disc) {
            sa_disc += *sm.asd_disc;
            ++na_disc;
        } else {
            ++report.undefined_asd;
        }
        report.rows.push_back(std::move(sm));
    }
    const double n = static_cast<double>(report.rows.size());
    report.mean_dice_cup = sd_cup / n;
    report.mean_dice_disc = sd_disc / n;
    if (na_cup > 0) report.mean_asd_cup = sa_cup / static_cast<double>(na_cup);
    if (na_disc > 0) report.mean_asd_disc = sa_disc / static_cast<double>(na_disc);
    return report;
}

void write_report_text(const MetricsReport& report, std::ostream& os) {
    os << std::fixed << std::setprecision(2);
    os << "sample            dice_cup  dice_disc  asd_cup  asd_disc\n";
    for (const auto& r : report.rows) {
        os << std::left << std::setw(18) << r.id << std::right << std::setw(8) << r.dice_cup
           << std::setw(11) << r.dice_disc;
        if (r.asd_cup) os << std::setw(9) << *r.asd_cup;
        else os << std::setw(9) << "n/a";
        if (r.asd_disc) os << std::setw(10) << *r.asd_disc;
        else os << std::setw(10) << "n/a";
        os << "\n";
    }
    os << "mean              " << std::right << std::setw(8) << report.mean_dice_cup
       << std::setw(11) << report.mean_dice_disc;
    if (report.mean_asd_cup) os << std::setw(9) << *report.mean_asd_cup;
    else os << std::setw(9) << "n/a";
    if (report.mean_asd_disc) os << std::setw(10) << *report.mean_asd_disc;
    else os << std::setw(10) << "n/a";
    os << "\n";
    if (report.undefined_asd > 0)
        os << "warning: " << report.undefined_asd
           << " undefined ASD value(s) (empty mask) excluded from means\n";
}

void write_report_json(const MetricsReport& report, const std::string& path) {
    nlohmann::json j;
    j["threshold"] = report.config.threshold;
    j["postprocess"] = report.config.postprocess;
    j["mean"] = {{"dice_cup", report.mean_dice_cup}, {"dice_disc", report.mean_dice_disc}};
    j["mean"]["asd_cup"] =
        report.mean_asd_cup ? nlohmann::json(*report.mean_asd_cup) : nlohmann::json();
    j["mean"]["asd_disc"] =
        report.mean_asd_disc ? nlohmann::json(*report.mean_asd_disc) : nlohmann::json();
    j["undefined_asd"] = report.undefined_asd;
    j["samples"] = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json row;
        row["id"] = r.id;
        row["dice_cup"] = r.dice_cup;
        row["dice_disc"] = r.dice_disc;
        row["asd_cup"] = r.asd_cup ? nlohmann::json(*r.asd_cup) : nlohmann::json();
        row["asd_disc"] = r.asd_disc ? nlohmann::json(*r.asd_disc) : nlohmann::json();
        j["samples"].push_back(row);
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

} // namespace sfda
