#include "sfda/nn/model.hpp"

#include <cmath>

#include "sfda/error.hpp"

namespace sfda::nn {

ForwardResult SegModel::forward(const Tensor& batch, const ForwardOptions& opts) const {
    if (batch.rank() != 4 || batch.dim(1) != 3)
        throw InvalidArgument("forward: expected B x 3 x H x W input, got " + batch.shape_str());
    const int div = size_divisor();
    if (batch.dim(2) % div || batch.dim(3) % div)
        throw InvalidArgument("forward: input spatial dims must be multiples of " +
                              std::to_string(div) + ", got " + batch.shape_str());
    if (opts.stochastic && !opts.rng)
        throw ContractViolation("forward: stochastic pass requires an RNG");

    ForwardResult fr;
    ForwardTrace* trace = opts.record ? &fr.trace : nullptr;
    fr.logits = run_forward(batch, trace, opts, &fr.features);
    if (trace) fr.trace.recorded = true;

    fr.probs = Tensor(fr.logits.shape());
    for (size_t i = 0; i < fr.logits.numel(); ++i) fr.probs[i] = sigmoid_prob(fr.logits[i]);
    return fr;
}

void SegModel::backward(const ForwardResult& fr, const Tensor& dlogits,
                        const Tensor* dfeatures) {
    if (!fr.trace.recorded)
        throw ContractViolation("backward: forward pass was not recorded");
    require_same_shape(dlogits, fr.logits, "backward dlogits");
    if (dfeatures) require_same_shape(*dfeatures, fr.features, "backward dfeatures");
    run_backward(fr.trace, dlogits, dfeatures);
}

Tensor SegModel::feature_gradient(const ForwardResult& fr, const Tensor& dlogits) const {
    if (!fr.trace.recorded)
        throw ContractViolation(
            "feature_gradient: features are detached (forward ran without recording)");
    require_same_shape(dlogits, fr.logits, "feature_gradient dlogits");
    return run_feature_gradient(fr.trace, dlogits);
}

void SegModel::zero_grads() {
    for (auto& p : params_) p.grad->fill(0.0f);
}

// ---------------------------------------------------------------------------
// tinyunet: 2-level U-Net of conv+BN+ReLU blocks, ~110k parameters at width
// 16. Penultimate feature map A = output of the last decoder block, full
// resolution, K_f channels; then dropout and a 1x1 classifier head.
// ---------------------------------------------------------------------------

// conv + batchnorm + relu with its own slot triple
struct ConvBlock {
    ConvBlock(const std::string& name, int cin, int cout)
        : conv(name, cin, cout, 3, 1, -1, 1, 1, false), bn(name + "_bn", cout) {}

    static constexpr int kSlots = 3;

    Tensor forward(const Tensor& x, TraceSlot* base, const ForwardOptions& opts,
                   const ReLU& relu) const {
        Tensor t = conv.forward(x, base ? base : nullptr);
        t = bn.forward(t, base ? base + 1 : nullptr, opts);
        return relu.forward(t, base ? base + 2 : nullptr);
    }

    Tensor backward(const Tensor& dy, TraceSlot* base, const ReLU& relu) {
        Tensor d = relu.backward(dy, base[2]);
        d = bn.backward(d, base[1]);
        return conv.backward(d, base[0]);
    }

    void collect(std::vector<Param>& p, std::vector<BufferRef>& b) {
        conv.collect(p);
        bn.collect(p);
        bn.collect_buffers(b);
    }

    Conv2d conv;
    BatchNorm2d bn;
};

class TinyUnet final : public SegModel {
public:
    explicit TinyUnet(const ModelConfig& cfg)
        : SegModel(cfg), w_(cfg.base_width), kf_(cfg.feature_channels),
          enc1a_("enc1a", 3, w_), enc1b_("enc1b", w_, w_),
          enc2a_("enc2a", w_, 2 * w_), enc2b_("enc2b", 2 * w_, 2 * w_),
          bott_a_("bott_a", 2 * w_, 4 * w_), bott_b_("bott_b", 4 * w_, 4 * w_),
          dec2_("dec2", 6 * w_, 2 * w_), dec1a_("dec1a", 3 * w_, w_),
          dec1b_("dec1b", w_, kf_), head_("head", kf_, kNumClasses, 1),
          dropout_(cfg.dropout) {
        Rng rng(cfg.init_seed ^ 0x7e3a5u);
        for (ConvBlock* b : blocks()) b->conv.init_he(rng);
        head_.init_he(rng);
        for (ConvBlock* b : blocks()) b->collect(params_, buffers_);
        head_.collect(params_);
    }

    int feature_channels() const override { return kf_; }
    int size_divisor() const override { return 4; }

    Tensor head_forward(const Tensor& features) const override {
        return head_.forward(features, nullptr);
    }

protected:
    // Slot layout: 9 blocks x 3 slots, then pool1, pool2, dropout, head.
    enum Fixed { kPool1 = 9 * ConvBlock::kSlots, kPool2, kDrop, kHead, kSlotCount };
    static int block_base(int i) { return i * ConvBlock::kSlots; }

    Tensor run_forward(const Tensor& x, ForwardTrace* trace, const ForwardOptions& opts,
                       Tensor* features_out) const override {
        if (trace) trace->slots.resize(kSlotCount);
        auto s = [&](int i) { return trace ? &trace->slots[static_cast<size_t>(i)] : nullptr; };
        auto bs = [&](int i) { return trace ? &trace->slots[static_cast<size_t>(block_base(i))] : nullptr; };

        Tensor t = enc1a_.forward(x, bs(0), opts, relu_);
        Tensor skip1 = enc1b_.forward(t, bs(1), opts, relu_);
        t = pool_.forward(skip1, s(kPool1));
        t = enc2a_.forward(t, bs(2), opts, relu_);
        Tensor skip2 = enc2b_.forward(t, bs(3), opts, relu_);
        t = pool_.forward(skip2, s(kPool2));
        t = bott_a_.forward(t, bs(4), opts, relu_);
        t = bott_b_.forward(t, bs(5), opts, relu_);
        t = concat_channels(up_.forward(t), skip2);
        t = dec2_.forward(t, bs(6), opts, relu_);
        t = concat_channels(up_.forward(t), skip1);
        t = dec1a_.forward(t, bs(7), opts, relu_);
        Tensor feats = dec1b_.forward(t, bs(8), opts, relu_);
        if (features_out) *features_out = feats;
        t = dropout_.forward(feats, s(kDrop), opts);
        return head_.forward(t, s(kHead));
    }

    void run_backward(const ForwardTrace& trace, const Tensor& dlogits,
                      const Tensor* dfeatures) override {
        auto& sl = const_cast<std::vector<TraceSlot>&>(trace.slots);
        auto bb = [&](int i) { return &sl[static_cast<size_t>(block_base(i))]; };

        Tensor d = head_.backward(dlogits, sl[kHead]);
        d = dropout_.backward(d, sl[kDrop]);
        if (dfeatures) {
            for (size_t i = 0; i < d.numel(); ++i) d[i] += (*dfeatures)[i];
        }
        d = dec1b_.backward(d, bb(8), relu_);
        d = dec1a_.backward(d, bb(7), relu_);

        Tensor d_up2, d_skip1;
        split_channels(d, 2 * w_, d_up2, d_skip1);
        d = up_.backward(d_up2);
        d = dec2_.backward(d, bb(6), relu_);

        Tensor d_up1, d_skip2;
        split_channels(d, 4 * w_, d_up1, d_skip2);
        d = up_.backward(d_up1);
        d = bott_b_.backward(d, bb(5), relu_);
        d = bott_a_.backward(d, bb(4), relu_);

        d = pool_.backward(d, sl[kPool2]);
        for (size_t i = 0; i < d.numel(); ++i) d[i] += d_skip2[i];
        d = enc2b_.backward(d, bb(3), relu_);
        d = enc2a_.backward(d, bb(2), relu_);

        d = pool_.backward(d, sl[kPool1]);
        for (size_t i = 0; i < d.numel(); ++i) d[i] += d_skip1[i];
        d = enc1b_.backward(d, bb(1), relu_);
        enc1a_.backward(d, bb(0), relu_);
    }

    Tensor run_feature_gradient(const ForwardTrace& trace, const Tensor& dlogits) const override {
        // Head-only path: logits -> 1x1 head -> dropout -> A.
        const auto& sl = trace.slots;
        const std::vector<int>& x_shape = sl[0].saved.shape(); // enc1a conv input: B,3,H,W
        std::vector<int> feat_shape = {x_shape[0], kf_, x_shape[2], x_shape[3]};
        Tensor d = head_.backward_input(dlogits, feat_shape);
        return dropout_.backward(d, sl[kDrop]);
    }

private:
    std::vector<ConvBlock*> blocks() {
        return {&enc1a_, &enc1b_, &enc2a_, &enc2b_, &bott_a_,
                &bott_b_, &dec2_, &dec1a_, &dec1b_};
    }

    int w_, kf_;
    ConvBlock enc1a_, enc1b_, enc2a_, enc2b_, bott_a_, bott_b_, dec2_, dec1a_, dec1b_;
    Conv2d head_;
    ReLU relu_;
    MaxPool2 pool_;
    UpsampleNearest2 up_;
    Dropout dropout_;
};

// ---------------------------------------------------------------------------
// deeplabv3plus_mobilenetv2: width/depth-reduced but structurally faithful —
// inverted residuals, dilated last stages (output stride 16), ASPP with image
// pooling, low-level-fusion decoder. Penultimate map A = decoder fuse conv
// output at H/4; logits bilinearly upsampled to input resolution.
// ---------------------------------------------------------------------------

namespace {

int make_divisible(double v, int divisor = 8) {
    int nv = std::max(divisor, static_cast<int>(v + divisor / 2.0) / divisor * divisor);
    if (nv < 0.9 * v) nv += divisor;
    return nv;
}

} // namespace

struct InvertedResidual {
    InvertedResidual(const std::string& name, int cin, int cout, int expansion, int stride,
                     int dilation)
        : use_res(stride == 1 && cin == cout), expand(expansion != 1),
          exp_conv(name + ".exp", cin, cin * expansion, 1, 1, 0, 1, 1, false),
          exp_bn(name + ".exp_bn", cin * expansion),
          dw_conv(name + ".dw", cin * expansion, cin * expansion, 3, stride, -1, dilation,
                  cin * expansion, false),
          dw_bn(name + ".dw_bn", cin * expansion),
          proj_conv(name + ".proj", cin * expansion, cout, 1, 1, 0, 1, 1, false),
          proj_bn(name + ".proj_bn", cout) {}

    static constexpr int kSlots = 8; // exp, exp_bn, exp_relu, dw, dw_bn, dw_relu, proj, proj_bn

    Tensor forward(const Tensor& x, TraceSlot* base, const ForwardOptions& opts,
                   const ReLU& relu6) const {
        auto s = [&](int i) { return base ? base + i : nullptr; };
        Tensor t = x;
        if (expand) {
            t = exp_conv.forward(t, s(0));
            t = exp_bn.forward(t, s(1), opts);
            t = relu6.forward(t, s(2));
        }
        t = dw_conv.forward(t, s(3));
        t = dw_bn.forward(t, s(4), opts);
        t = relu6.forward(t, s(5));
        t = proj_conv.forward(t, s(6));
        t = proj_bn.forward(t, s(7), opts);
        if (use_res) {
            for (size_t i = 0; i < t.numel(); ++i) t[i] += x[i];
        }
        return t;
    }

    Tensor backward(const Tensor& dy, TraceSlot* base, const ReLU& relu6) {
        Tensor d = proj_bn.backward(dy, base[7]);
        d = proj_conv.backward(d, base[6]);
        d = relu6.backward(d, base[5]);
        d = dw_bn.backward(d, base[4]);
        d = dw_conv.backward(d, base[3]);
        if (expand) {
            d = relu6.backward(d, base[2]);
            d = exp_bn.backward(d, base[1]);
            d = exp_conv.backward(d, base[0]);
        }
        if (use_res) {
            for (size_t i = 0; i < d.numel(); ++i) d[i] += dy[i];
        }
        return d;
    }

    void collect(std::vector<Param>& p, std::vector<BufferRef>& b) {
        if (expand) {
            exp_conv.collect(p);
            exp_bn.collect(p);
            exp_bn.collect_buffers(b);
        }
        dw_conv.collect(p);
        dw_bn.collect(p);
        dw_bn.collect_buffers(b);
        proj_conv.collect(p);
        proj_bn.collect(p);
        proj_bn.collect_buffers(b);
    }

    bool use_res, expand;
    Conv2d exp_conv;
    BatchNorm2d exp_bn;
    Conv2d dw_conv;
    BatchNorm2d dw_bn;
    Conv2d proj_conv;
    BatchNorm2d proj_bn;
};

class DeepLabV3pMnv2 final : public SegModel {
public:
    explicit DeepLabV3pMnv2(const ModelConfig& cfg)
        : SegModel(cfg), relu6_(true), relu_(false), dropout_(cfg.dropout) {
        const double m = cfg.width_mult;
        auto c = [&](int v) { return make_divisible(v * m); };
        c_stem_ = c(32);
        c_aspp_ = c(256);
        c_low_ = c(48);
        kf_ = c(256);

        stem_ = std::make_unique<Conv2d>("stem", 3, c_stem_, 3, 2, -1, 1, 1, false);
        stem_bn_ = std::make_unique<BatchNorm2d>("stem_bn", c_stem_);

        struct Spec { int t, ch, s, d; };
        const Spec specs[] = {
            {1, 16, 1, 1}, {6, 24, 2, 1}, {6, 24, 1, 1}, {6, 32, 2, 1}, {6, 32, 1, 1},
            {6, 64, 2, 1}, {6, 64, 1, 1}, {6, 96, 1, 1}, {6, 160, 1, 2}, {6, 320, 1, 2},
        };
        int cin = c_stem_;
        int i = 0;
        for (const auto& sp : specs) {
            const int cout = c(sp.ch);
            blocks_.push_back(std::make_unique<InvertedResidual>("ir" + std::to_string(i), cin,
                                                                 cout, sp.t, sp.s, sp.d));
            cin = cout;
            ++i;
        }
        c_low_in_ = c(24);
        c_high_ = cin;

        aspp0_ = std::make_unique<Conv2d>("aspp0", c_high_, c_aspp_, 1, 1, 0, 1, 1, false);
        aspp0_bn_ = std::make_unique<BatchNorm2d>("aspp0_bn", c_aspp_);
        aspp1_ = std::make_unique<Conv2d>("aspp1", c_high_, c_aspp_, 3, 1, -1, 6, 1, false);
        aspp1_bn_ = std::make_unique<BatchNorm2d>("aspp1_bn", c_aspp_);
        aspp2_ = std::make_unique<Conv2d>("aspp2", c_high_, c_aspp_, 3, 1, -1, 12, 1, false);
        aspp2_bn_ = std::make_unique<BatchNorm2d>("aspp2_bn", c_aspp_);
        aspp_pool_ = std::make_unique<Conv2d>("aspp_pool", c_high_, c_aspp_, 1);
        aspp_proj_ = std::make_unique<Conv2d>("aspp_proj", 4 * c_aspp_, c_aspp_, 1, 1, 0, 1, 1, false);
        aspp_proj_bn_ = std::make_unique<BatchNorm2d>("aspp_proj_bn", c_aspp_);

        low_proj_ = std::make_unique<Conv2d>("low_proj", c_low_in_, c_low_, 1, 1, 0, 1, 1, false);
        low_proj_bn_ = std::make_unique<BatchNorm2d>("low_proj_bn", c_low_);
        fuse_ = std::make_unique<Conv2d>("fuse", c_aspp_ + c_low_, kf_, 3, 1, -1, 1, 1, false);
        fuse_bn_ = std::make_unique<BatchNorm2d>("fuse_bn", kf_);
        head_ = std::make_unique<Conv2d>("head", kf_, kNumClasses, 1);

        Rng rng(cfg.init_seed ^ 0x3d17bu);
        stem_->init_he(rng);
        for (auto& blk : blocks_) {
            if (blk->expand) blk->exp_conv.init_he(rng);
            blk->dw_conv.init_he(rng);
            blk->proj_conv.init_he(rng);
        }
        for (Conv2d* cv : {aspp0_.get(), aspp1_.get(), aspp2_.get(), aspp_pool_.get(),
                           aspp_proj_.get(), low_proj_.get(), fuse_.get(), head_.get()})
            cv->init_he(rng);

        stem_->collect(params_);
        stem_bn_->collect(params_);
        stem_bn_->collect_buffers(buffers_);
        for (auto& blk : blocks_) blk->collect(params_, buffers_);
        for (auto [cv, bn] : {std::pair{aspp0_.get(), aspp0_bn_.get()},
                              std::pair{aspp1_.get(), aspp1_bn_.get()},
                              std::pair{aspp2_.get(), aspp2_bn_.get()},
                              std::pair{aspp_proj_.get(), aspp_proj_bn_.get()},
                              std::pair{low_proj_.get(), low_proj_bn_.get()},
                              std::pair{fuse_.get(), fuse_bn_.get()}}) {
            cv->collect(params_);
            bn->collect(params_);
            bn->collect_buffers(buffers_);
        }
        aspp_pool_->collect(params_);
        head_->collect(params_);
    }

    int feature_channels() const override { return kf_; }
    int size_divisor() const override { return 16; }

    Tensor head_forward(const Tensor& features) const override {
        Tensor logits4 = head_->forward(features, nullptr);
        return bilinear_resize(logits4, features.dim(2) * 4, features.dim(3) * 4);
    }

protected:
    enum FixedSlot {
        kStem, kStemBn, kStemRelu,
        kAspp0, kAspp0Bn, kAspp0Relu,
        kAspp1, kAspp1Bn, kAspp1Relu,
        kAspp2, kAspp2Bn, kAspp2Relu,
        kAsppPool, kAsppPoolRelu,
        kAsppProj, kAsppProjBn, kAsppProjRelu,
        kLowProj, kLowProjBn, kLowProjRelu,
        kFuse, kFuseBn, kFuseRelu,
        kDrop, kHead, kFixedCount
    };

    int slot_count() const { return kFixedCount + static_cast<int>(blocks_.size()) * InvertedResidual::kSlots; }
    int block_base(int i) const { return kFixedCount + i * InvertedResidual::kSlots; }

    Tensor run_forward(const Tensor& x, ForwardTrace* trace, const ForwardOptions& opts,
                       Tensor* features_out) const override {
        if (trace) trace->slots.resize(static_cast<size_t>(slot_count()));
        auto s = [&](int i) { return trace ? &trace->slots[static_cast<size_t>(i)] : nullptr; };

        Tensor t = stem_->forward(x, s(kStem));
        t = stem_bn_->forward(t, s(kStemBn), opts);
        t = relu6_.forward(t, s(kStemRelu));

        Tensor low;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            TraceSlot* base = trace ? &trace->slots[static_cast<size_t>(block_base(static_cast<int>(i)))] : nullptr;
            t = blocks_[i]->forward(t, base, opts, relu6_);
            if (i == 2) low = t; // 24-channel stage @ H/4
        }

        const int hf = t.dim(2), wf = t.dim(3);
        Tensor b0 = relu_.forward(aspp0_bn_->forward(aspp0_->forward(t, s(kAspp0)), s(kAspp0Bn), opts), s(kAspp0Relu));
        Tensor b1 = relu_.forward(aspp1_bn_->forward(aspp1_->forward(t, s(kAspp1)), s(kAspp1Bn), opts), s(kAspp1Relu));
        Tensor b2 = relu_.forward(aspp2_bn_->forward(aspp2_->forward(t, s(kAspp2)), s(kAspp2Bn), opts), s(kAspp2Relu));
        Tensor pooled = global_avg_pool(t);
        pooled = relu_.forward(aspp_pool_->forward(pooled, s(kAsppPool)), s(kAsppPoolRelu));
        Tensor b3 = broadcast_hw(pooled, hf, wf);

        Tensor cat = concat_channels(concat_channels(b0, b1), concat_channels(b2, b3));
        Tensor high = relu_.forward(
            aspp_proj_bn_->forward(aspp_proj_->forward(cat, s(kAsppProj)), s(kAsppProjBn), opts),
            s(kAsppProjRelu));

        Tensor lowp = relu_.forward(
            low_proj_bn_->forward(low_proj_->forward(low, s(kLowProj)), s(kLowProjBn), opts),
            s(kLowProjRelu));
        Tensor up = bilinear_resize(high, lowp.dim(2), lowp.dim(3));
        Tensor fused = relu_.forward(
            fuse_bn_->forward(fuse_->forward(concat_channels(up, lowp), s(kFuse)), s(kFuseBn), opts),
            s(kFuseRelu));
        if (features_out) *features_out = fused;

        Tensor d = dropout_.forward(fused, s(kDrop), opts);
        Tensor logits4 = head_->forward(d, s(kHead));
        return bilinear_resize(logits4, x.dim(2), x.dim(3));
    }

    void run_backward(const ForwardTrace& trace, const Tensor& dlogits,
                      const Tensor* dfeatures) override {
        auto& sl = const_cast<std::vector<TraceSlot>&>(trace.slots);
        const Tensor& fuse_in = sl[kFuse].saved;
        const int h4 = fuse_in.dim(2), w4 = fuse_in.dim(3);
        const int hf = sl[kAspp0].saved.dim(2), wf = sl[kAspp0].saved.dim(3);

        Tensor d = bilinear_resize_backward(dlogits, h4, w4);
        d = head_->backward(d, sl[kHead]);
        d = dropout_.backward(d, sl[kDrop]);
        if (dfeatures) {
            for (size_t i = 0; i < d.numel(); ++i) d[i] += (*dfeatures)[i];
        }
        d = relu_.backward(d, sl[kFuseRelu]);
        d = fuse_bn_->backward(d, sl[kFuseBn]);
        d = fuse_->backward(d, sl[kFuse]);

        Tensor d_up, d_lowp;
        split_channels(d, c_aspp_, d_up, d_lowp);
        Tensor d_high = bilinear_resize_backward(d_up, hf, wf);

        d_lowp = relu_.backward(d_lowp, sl[kLowProjRelu]);
        d_lowp = low_proj_bn_->backward(d_lowp, sl[kLowProjBn]);
        Tensor d_low = low_proj_->backward(d_lowp, sl[kLowProj]);

        d_high = relu_.backward(d_high, sl[kAsppProjRelu]);
        d_high = aspp_proj_bn_->backward(d_high, sl[kAsppProjBn]);
        d_high = aspp_proj_->backward(d_high, sl[kAsppProj]);

        Tensor d01, d23, d0, d1, d2, d3;
        split_channels(d_high, 2 * c_aspp_, d01, d23);
        split_channels(d01, c_aspp_, d0, d1);
        split_channels(d23, c_aspp_, d2, d3);

        d0 = relu_.backward(d0, sl[kAspp0Relu]);
        d0 = aspp0_bn_->backward(d0, sl[kAspp0Bn]);
        Tensor dt = aspp0_->backward(d0, sl[kAspp0]);

        d1 = relu_.backward(d1, sl[kAspp1Relu]);
        d1 = aspp1_bn_->backward(d1, sl[kAspp1Bn]);
        Tensor dt1 = aspp1_->backward(d1, sl[kAspp1]);
        for (size_t i = 0; i < dt.numel(); ++i) dt[i] += dt1[i];

        d2 = relu_.backward(d2, sl[kAspp2Relu]);
        d2 = aspp2_bn_->backward(d2, sl[kAspp2Bn]);
        Tensor dt2 = aspp2_->backward(d2, sl[kAspp2]);
        for (size_t i = 0; i < dt.numel(); ++i) dt[i] += dt2[i];

        Tensor d_pool = broadcast_hw_backward(d3);
        d_pool = relu_.backward(d_pool, sl[kAsppPoolRelu]);
        d_pool = aspp_pool_->backward(d_pool, sl[kAsppPool]);
        Tensor dt3 = global_avg_pool_backward(d_pool, hf, wf);
        for (size_t i = 0; i < dt.numel(); ++i) dt[i] += dt3[i];

        for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
            dt = blocks_[static_cast<size_t>(i)]->backward(dt, &sl[static_cast<size_t>(block_base(i))], relu6_);
            if (i == 3) {
                // decoder skip: low-level tap is the output of block 2
                for (size_t j = 0; j < dt.numel(); ++j) dt[j] += d_low[j];
            }
        }

        dt = relu6_.backward(dt, sl[kStemRelu]);
        dt = stem_bn_->backward(dt, sl[kStemBn]);
        stem_->backward(dt, sl[kStem]);
    }

    Tensor run_feature_gradient(const ForwardTrace& trace, const Tensor& dlogits) const override {
        const auto& sl = trace.slots;
        const Tensor& fuse_in = sl[kFuse].saved;
        const int h4 = fuse_in.dim(2), w4 = fuse_in.dim(3);
        Tensor d = bilinear_resize_backward(dlogits, h4, w4);
        std::vector<int> feat_shape = {d.dim(0), kf_, h4, w4};
        d = head_->backward_input(d, feat_shape);
        return dropout_.backward(d, sl[kDrop]);
    }

private:
    ReLU relu6_; // cap at 6 (backbone)
    ReLU relu_;  // plain (ASPP/decoder)
    Dropout dropout_;
    int c_stem_ = 0, c_aspp_ = 0, c_low_ = 0, c_low_in_ = 0, c_high_ = 0, kf_ = 0;

    std::unique_ptr<Conv2d> stem_;
    std::unique_ptr<BatchNorm2d> stem_bn_;
    std::vector<std::unique_ptr<InvertedResidual>> blocks_;
    std::unique_ptr<Conv2d> aspp0_, aspp1_, aspp2_, aspp_pool_, aspp_proj_;
    std::unique_ptr<BatchNorm2d> aspp0_bn_, aspp1_bn_, aspp2_bn_, aspp_proj_bn_;
    std::unique_ptr<Conv2d> low_proj_, fuse_, head_;
    std::unique_ptr<BatchNorm2d> low_proj_bn_, fuse_bn_;
};

std::unique_ptr<SegModel> make_model(const ModelConfig& cfg) {
    if (cfg.dropout < 0.0f || cfg.dropout >= 1.0f)
        throw InvalidArgument("make_model: dropout must be in [0,1)");
    if (cfg.architecture == "tinyunet") return std::make_unique<TinyUnet>(cfg);
    if (cfg.architecture == "deeplabv3plus_mobilenetv2")
        return std::make_unique<DeepLabV3pMnv2>(cfg);
    throw InvalidArgument("make_model: unknown architecture '" + cfg.architecture +
                          "' (known: tinyunet, deeplabv3plus_mobilenetv2)");
}

std::unique_ptr<SegModel> clone_model(SegModel& model) {
    auto copy = make_model(model.config());
    auto src_p = model.parameters();
    auto dst_p = copy->parameters();
    for (size_t i = 0; i < src_p.size(); ++i) *dst_p[i].value = *src_p[i].value;
    auto src_b = model.buffers();
    auto dst_b = copy->buffers();
    for (size_t i = 0; i < src_b.size(); ++i) *dst_b[i].value = *src_b[i].value;
    return copy;
}

} // namespace sfda::nn
