#include "sfda/adapt.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sfda/error.hpp"
#include "sfda/nn/adam.hpp"
#include "sfda/nn/checkpoint.hpp"
#include "sfda/pseudolabel.hpp"
#include "sfda/refine.hpp"
#include "sfda/saliency.hpp"

namespace sfda {

void AdaptConfig::validate() const {
    if (!(gamma > 0.0f && gamma < 1.0f)) throw InvalidArgument("adapt: gamma must be in (0,1)");
    if (!(eta > 0.0f)) throw InvalidArgument("adapt: eta must be > 0");
    if (mc_passes < 2) throw InvalidArgument("adapt: mc_passes must be >= 2");
    if (lambda < 0.0f) throw InvalidArgument("adapt: lambda must be >= 0");
    if (epochs < 0) throw InvalidArgument("adapt: negative epochs");
    if (batch_size < 1) throw InvalidArgument("adapt: batch_size must be >= 1");
    if (lr <= 0.0) throw InvalidArgument("adapt: lr must be > 0");
}

UnlabeledSplit UnlabeledSplit::from(const DatasetSplit& split) {
    UnlabeledSplit out;
    out.domain_name = split.domain_name;
    out.images.reserve(split.samples.size());
    for (const auto& s : split.samples) {
        out.images.push_back(s.image);
        out.ids.push_back(s.id);
    }
    return out;
}

double total_loss(double l_seg, double l_sim, double lambda) {
    if (lambda < 0.0) throw InvalidArgument("total_loss: lambda must be >= 0");
    return l_seg + lambda * l_sim;
}

namespace {

Tensor images_to_batch(const std::vector<Tensor>& images, const std::vector<int>& idx) {
    const Tensor& first = images[static_cast<size_t>(idx[0])];
    Tensor batch({static_cast<int>(idx.size()), 3, first.dim(1), first.dim(2)});
    for (size_t b = 0; b < idx.size(); ++b) {
        const Tensor& img = images[static_cast<size_t>(idx[b])];
        require_same_shape(img, first, "adapt batch");
        std::copy(img.data(), img.data() + img.numel(), batch.data() + b * img.numel());
    }
    return batch;
}

// Per-sample frozen supervision (labels and uncertainty from the source model).
struct FrozenTargets {
    std::vector<Tensor> labels; // 2 x H x W each
    std::vector<Tensor> u;      // 2 x H x W each
};

FrozenTargets compute_frozen_targets(const nn::SegModel& model, const UnlabeledSplit& target,
                                     const AdaptConfig& cfg, Rng mc_rng) {
    FrozenTargets out;
    out.labels.resize(target.images.size());
    out.u.resize(target.images.size());

    std::vector<size_t> todo;
    if (!cfg.pseudolabel_cache.empty()) {
        for (size_t i = 0; i < target.images.size(); ++i) {
            auto rec = load_pseudolabel_record(cfg.pseudolabel_cache, target.ids[i]);
            const std::vector<int> want = {2, target.images[i].dim(1), target.images[i].dim(2)};
            if (rec && rec->gamma == cfg.gamma && rec->eta == cfg.eta &&
                rec->passes == cfg.mc_passes && rec->labels.shape() == want) {
                out.labels[i] = std::move(rec->labels);
                out.u[i] = std::move(rec->u);
            } else {
                todo.push_back(i);
            }
        }
    } else {
        todo.resize(target.images.size());
        std::iota(todo.begin(), todo.end(), 0);
    }

    for (size_t start = 0; start < todo.size(); start += static_cast<size_t>(cfg.batch_size)) {
        std::vector<int> idx;
        for (size_t j = start; j < std::min(todo.size(), start + static_cast<size_t>(cfg.batch_size)); ++j)
            idx.push_back(static_cast<int>(todo[j]));
        Tensor batch = images_to_batch(target.images, idx);

        nn::ForwardOptions det;
        det.record = false;
        const Tensor probs = model.forward(batch, det).probs;
        const PseudoLabelMap pl = threshold_pseudolabels(probs, cfg.gamma);
        const UncertaintyMap un = mc_dropout_uncertainty(model, batch, cfg.mc_passes, mc_rng);

        const int H = batch.dim(2), W = batch.dim(3);
        const size_t per = static_cast<size_t>(2) * H * W;
        for (size_t b = 0; b < idx.size(); ++b) {
            Tensor lab({2, H, W}), uu({2, H, W});
            std::copy(pl.labels.data() + b * per, pl.labels.data() + (b + 1) * per, lab.data());
            std::copy(un.u.data() + b * per, un.u.data() + (b + 1) * per, uu.data());
            if (!cfg.pseudolabel_cache.empty()) {
                PseudoLabelRecord rec;
                rec.labels = lab;
                rec.u = uu;
                rec.mean_probs = Tensor({2, H, W});
                std::copy(un.mean_probs.data() + b * per, un.mean_probs.data() + (b + 1) * per,
                          rec.mean_probs.data());
                rec.gamma = cfg.gamma;
                rec.eta = cfg.eta;
                rec.passes = cfg.mc_passes;
                save_pseudolabel_record(cfg.pseudolabel_cache, target.ids[static_cast<size_t>(idx[b])], rec);
            }
            out.labels[static_cast<size_t>(idx[b])] = std::move(lab);
            out.u[static_cast<size_t>(idx[b])] = std::move(uu);
        }
    }
    return out;
}

Tensor gather_plane(const std::vector<Tensor>& per_sample, const std::vector<int>& idx, int ch) {
    const Tensor& first = per_sample[static_cast<size_t>(idx[0])];
    const int H = first.dim(1), W = first.dim(2);
    Tensor out({static_cast<int>(idx.size()), H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (size_t b = 0; b < idx.size(); ++b) {
        const float* src = per_sample[static_cast<size_t>(idx[b])].data() +
                           static_cast<size_t>(ch) * plane;
        std::copy(src, src + plane, out.data() + b * plane);
    }
    return out;
}

Tensor resize_plane_stack(const Tensor& bhw, int out_h, int out_w) {
    if (bhw.dim(1) == out_h && bhw.dim(2) == out_w) return bhw;
    Tensor wrapped({bhw.dim(0), 1, bhw.dim(1), bhw.dim(2)});
    std::copy(bhw.data(), bhw.data() + bhw.numel(), wrapped.data());
    Tensor resized = nn::bilinear_resize(wrapped, out_h, out_w);
    Tensor out({bhw.dim(0), out_h, out_w});
    std::copy(resized.data(), resized.data() + resized.numel(), out.data());
    return out;
}

void dump_batch_debug(std::ofstream& os, int epoch, int batch, SegClass c,
                      const ClassRefinement& ref, double kept_frac) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["batch"] = batch;
    j["class"] = seg_class_name(c);
    j["fallback"] = ref.fallback;
    j["valid_ob"] = ref.protos.valid_ob;
    j["valid_bg"] = ref.protos.valid_bg;
    j["z_ob"] = ref.protos.z_ob;
    j["z_bg"] = ref.protos.z_bg;
    j["kept_frac"] = kept_frac;
    if (!ref.fallback) {
        // 8-bin histogram of d_ob - d_bg
        std::vector<int> hist(8, 0);
        float mn = 1e30f, mx = -1e30f;
        for (size_t i = 0; i < ref.d_ob.numel(); ++i) {
            const float d = ref.d_ob[i] - ref.d_bg[i];
            mn = std::min(mn, d);
            mx = std::max(mx, d);
        }
        const float span = std::max(mx - mn, 1e-12f);
        for (size_t i = 0; i < ref.d_ob.numel(); ++i) {
            const float d = ref.d_ob[i] - ref.d_bg[i];
            int bin = static_cast<int>((d - mn) / span * 8.0f);
            bin = std::min(std::max(bin, 0), 7);
            ++hist[static_cast<size_t>(bin)];
        }
        j["dist_diff_hist"] = hist;
        j["dist_diff_range"] = {mn, mx};
    }
    os << j.dump() << "\n";
}

} // namespace

std::pair<std::unique_ptr<nn::SegModel>, AdaptReport> adapt(nn::SegModel& source_model,
                                                            const UnlabeledSplit& target,
                                                            const AdaptConfig& cfg) {
    cfg.validate();
    if (target.images.empty()) throw InvalidArgument("adapt: empty target split");

    auto model = nn::clone_model(source_model);
    AdaptReport report;
    if (cfg.epochs == 0) return {std::move(model), report};

    const Rng root(cfg.seed);
    Rng shuffle_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);
    Rng augment_rng = root.fork(3);

    FrozenTargets frozen = compute_frozen_targets(source_model, target, cfg, root.fork(10));

    nn::Adam adam(model->parameters(), cfg.lr, cfg.beta1, cfg.beta2);
    const int n = static_cast<int>(target.images.size());
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::ofstream debug_os;
    if (!cfg.debug_dump.empty()) {
        debug_os.open(cfg.debug_dump, std::ios::trunc);
        if (!debug_os) throw DataError("cannot write debug dump: " + cfg.debug_dump);
    }

    double best_total = 1e300;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.refresh_pseudolabels && epoch > 0)
            frozen = compute_frozen_targets(*model, target, cfg, root.fork(10 + static_cast<uint64_t>(epoch)));

        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

        EpochStats es;
        es.epoch = epoch;
        long pixels_seen = 0;
        double kept_cup = 0.0, kept_disc = 0.0, wsum = 0.0;
        int batch_index = 0;

        for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            std::vector<int> idx(order.begin() + start,
                                 order.begin() + std::min(n, start + cfg.batch_size));
            Tensor batch = images_to_batch(target.images, idx);
            if (cfg.augment) {
                const int H = batch.dim(2), W = batch.dim(3);
                for (size_t b = 0; b < idx.size(); ++b) {
                    Tensor img({3, H, W});
                    std::copy(batch.data() + b * img.numel(),
                              batch.data() + (b + 1) * img.numel(), img.data());
                    img = weak_augment(img, augment_rng);
                    std::copy(img.data(), img.data() + img.numel(), batch.data() + b * img.numel());
                }
            }

            nn::ForwardOptions opts;
            opts.record = true;
            opts.train = true;
            opts.stochastic = cfg.train_dropout;
            opts.rng = &dropout_rng;
            nn::ForwardResult fr = model->forward(batch, opts);
            if (!all_finite(fr.logits))
                throw NumericalError("adapt: non-finite logits at epoch " + std::to_string(epoch) +
                                     " batch " + std::to_string(batch_index) +
                                     " (diverged or corrupt parameters)");

            const int H = batch.dim(2), W = batch.dim(3);
            const int Hf = fr.features.dim(2), Wf = fr.features.dim(3);

            SaliencyMap sal_cup, sal_disc;
            if (cfg.force_unit_saliency) {
                sal_cup.e_gc = Tensor::full({batch.dim(0), Hf, Wf}, 1.0f);
                sal_cup.class_id = SegClass::cup;
                sal_cup.normalized = true;
                sal_disc = sal_cup;
                sal_disc.class_id = SegClass::disc;
            } else {
                sal_cup = class_saliency(*model, fr, SegClass::cup);
                sal_disc = class_saliency(*model, fr, SegClass::disc);
            }

            // features/saliency at label resolution for Eq. 6-9
            Tensor feats_label = fr.features;
            if (Hf != H || Wf != W) feats_label = nn::bilinear_resize(fr.features, H, W);

            Tensor labels_batch({static_cast<int>(idx.size()), 2, H, W});
            Tensor mask_batch({static_cast<int>(idx.size()), 2, H, W});
            double kept_by_class[2] = {0.0, 0.0};
            for (int ch = 0; ch < 2; ++ch) {
                const SegClass c = ch == nn::kCupChannel ? SegClass::cup : SegClass::disc;
                const Tensor labels_c = gather_plane(frozen.labels, idx, ch);
                const Tensor u_c = gather_plane(frozen.u, idx, ch);
                const Tensor probs_c = select_channel(fr.probs, ch);
                const Tensor sal_c = resize_plane_stack(
                    c == SegClass::cup ? sal_cup.e_gc : sal_disc.e_gc, H, W);

                ClassRefinement ref =
                    refine_class(feats_label, sal_c, labels_c, u_c, cfg.eta, probs_c, c);

                double kept = 0.0;
                const size_t plane = static_cast<size_t>(H) * W;
                for (size_t b = 0; b < idx.size(); ++b) {
                    float* lab_dst = labels_batch.data() + (b * 2 + static_cast<size_t>(ch)) * plane;
                    float* msk_dst = mask_batch.data() + (b * 2 + static_cast<size_t>(ch)) * plane;
                    const float* lab_src = labels_c.data() + b * plane;
                    const float* msk_src = ref.mask.data() + b * plane;
                    std::copy(lab_src, lab_src + plane, lab_dst);
                    std::copy(msk_src, msk_src + plane, msk_dst);
                    for (size_t i = 0; i < plane; ++i) kept += msk_src[i];
                }
                kept_by_class[ch] = kept / (static_cast<double>(idx.size()) * plane);
                if (debug_os.is_open())
                    dump_batch_debug(debug_os, epoch, batch_index, c, ref, kept_by_class[ch]);
            }

            // Training objective uses the masked CE *sum* (averaged over the
            // batch): the summed form keeps the self-training anchor strong
            // relative to the contrastive term, matching the formulation the
            // batch-loop pseudocode trains with.
            double kept_total = 0.0;
            for (size_t i = 0; i < mask_batch.numel(); ++i) kept_total += mask_batch[i];
            const double seg_scale = kept_total / static_cast<double>(idx.size());
            const double l_seg =
                masked_ce_loss(fr.probs, labels_batch, mask_batch) * seg_scale;

            auto [emb_cup, emb_disc] =
                class_embeddings(fr.features, sal_cup.e_gc, sal_disc.e_gc);
            SimilarityLoss sim;
            if (cfg.metric == ContrastiveMetric::cosine)
                sim = cosine_similarity_loss(emb_cup, emb_disc, 1e-8, cfg.lambda > 0.0f,
                                             cfg.pixel_cosine);
            else
                sim = divergence_loss(emb_cup, emb_disc, cfg.metric, cfg.lambda > 0.0f);
            const double l_sim_signed = signed_contrastive(sim.value, cfg.metric);
            const double l_total = total_loss(l_seg, l_sim_signed, cfg.lambda);

            if (!std::isfinite(l_total)) {
                float lo = 1e30f, hi = -1e30f;
                for (size_t i = 0; i < fr.logits.numel(); ++i) {
                    lo = std::min(lo, fr.logits[i]);
                    hi = std::max(hi, fr.logits[i]);
                }
                throw NumericalError(
                    "adapt: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(batch_index) + " (l_seg=" + std::to_string(l_seg) +
                    ", l_sim=" + std::to_string(l_sim_signed) +
                    ", logits range [" + std::to_string(lo) + ", " + std::to_string(hi) + "])");
            }

            // d(total)/d(logits): cross-entropy path only (saliency is detached)
            const Tensor dLdp = masked_ce_grad(fr.probs, labels_batch, mask_batch);
            Tensor dlogits(fr.logits.shape());
            for (size_t i = 0; i < dlogits.numel(); ++i) {
                if (dLdp[i] == 0.0f) continue; // masked-out pixels carry no gradient
                const double p = fr.probs[i];
                dlogits[i] = static_cast<float>(seg_scale * dLdp[i] * p * (1.0 - p));
            }

            model->zero_grads();
            if (cfg.lambda > 0.0f) {
                Tensor dfeat(fr.features.shape());
                const double sign = cfg.metric == ContrastiveMetric::cosine ? 1.0 : -1.0;
                for (size_t i = 0; i < dfeat.numel(); ++i)
                    dfeat[i] = static_cast<float>(cfg.lambda * sign * (sim.d_a[i] + sim.d_b[i]));
                model->backward(fr, dlogits, &dfeat);
            } else {
                model->backward(fr, dlogits);
            }
            adam.step();

            const double wb = static_cast<double>(idx.size());
            es.l_seg += l_seg * wb;
            es.l_sim += l_sim_signed * wb;
            es.l_total += l_total * wb;
            kept_cup += kept_by_class[0] * wb;
            kept_disc += kept_by_class[1] * wb;
            wsum += wb;
            pixels_seen += static_cast<long>(idx.size()) * H * W;
        }

        es.l_seg /= wsum;
        es.l_sim /= wsum;
        es.l_total /= wsum;
        es.kept_frac_cup = kept_cup / wsum;
        es.kept_frac_disc = kept_disc / wsum;
        es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(es);

        if (!cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            const std::string last =
                (std::filesystem::path(cfg.checkpoint_dir) / "last.ckpt").string();
            nn::save_checkpoint(*model, last);
            report.last_checkpoint = last;
            if (es.l_total < best_total) {
                best_total = es.l_total;
                report.best_epoch = epoch;
                const std::string best =
                    (std::filesystem::path(cfg.checkpoint_dir) / "best.ckpt").string();
                nn::save_checkpoint(*model, best);
                report.best_checkpoint = best;
            }
        } else if (es.l_total < best_total) {
            best_total = es.l_total;
            report.best_epoch = epoch;
        }
    }
    return {std::move(model), report};
}

AblationTable ablate(nn::SegModel& source_model, const UnlabeledSplit& target_train,
                     const DatasetSplit& target_test, const AdaptConfig& base,
                     const std::vector<ContrastiveMetric>& metrics, const EvalConfig& eval_cfg) {
    AblationTable table;
    for (ContrastiveMetric m : metrics) {
        AdaptConfig cfg = base;
        cfg.metric = m;
        if (!cfg.checkpoint_dir.empty())
            cfg.checkpoint_dir += std::string("/") + metric_name(m);
        auto [model, rep] = adapt(source_model, target_train, cfg);
        const MetricsReport mr = evaluate(*model, target_test, eval_cfg);
        AblationRow row;
        row.metric = m;
        row.dice_cup = mr.mean_dice_cup;
        row.dice_disc = mr.mean_dice_disc;
        row.asd_cup = mr.mean_asd_cup;
        row.asd_disc = mr.mean_asd_disc;
        table.rows.push_back(row);
    }
    return table;
}

void write_ablation_text(const AblationTable& table, std::ostream& os) {
    os << "metric      dice_cup  dice_disc  asd_cup  asd_disc\n";
    char buf[128];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof(buf), "%-10s %9.2f %10.2f", metric_name(r.metric), r.dice_cup,
                      r.dice_disc);
        os << buf;
        if (r.asd_cup) {
            std::snprintf(buf, sizeof(buf), " %8.2f", *r.asd_cup);
            os << buf;
        } else {
            os << "      n/a";
        }
        if (r.asd_disc) {
            std::snprintf(buf, sizeof(buf), " %9.2f", *r.asd_disc);
            os << buf;
        } else {
            os << "       n/a";
        }
        os << "\n";
    }
}

void write_ablation_json(const AblationTable& table, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : table.rows) {
        nlohmann::json row;
        row["metric"] = metric_name(r.metric);
        row["dice_cup"] = r.dice_cup;
        row["dice_disc"] = r.dice_disc;
        row["asd_cup"] = r.asd_cup ? nlohmann::json(*r.asd_cup) : nlohmann::json();
        row["asd_disc"] = r.asd_disc ? nlohmann::json(*r.asd_disc) : nlohmann::json();
        j.push_back(row);
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ablation report: " + path);
    out << j.dump(2) << "\n";
}

} // namespace sfda
