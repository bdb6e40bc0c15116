#ifndef SFDA_NN_MODEL_HPP
#define SFDA_NN_MODEL_HPP

#include <memory>
#include <string>
#include <vector>

#include "sfda/nn/layers.hpp"
#include "sfda/tensor.hpp"

namespace sfda::nn {

// Channel convention, fixed repo-wide: channel 0 = optic cup, channel 1 = optic disc.
inline constexpr int kCupChannel = 0;
inline constexpr int kDiscChannel = 1;
inline constexpr int kNumClasses = 2;
inline constexpr const char* kChannelTag = "c0=cup,c1=disc";

// Probabilities are kept strictly inside (0,1); one float ulp below 1 at the top.
inline constexpr float kProbClampLo = 1e-7f;
inline constexpr float kProbClampHi = 0.99999988f;

inline float sigmoid_prob(float logit) {
    const float p = 1.0f / (1.0f + std::exp(-logit));
    return std::min(std::max(p, kProbClampLo), kProbClampHi);
}

struct ModelConfig {
    std::string architecture = "tinyunet";
    float dropout = 0.5f;
    int base_width = 16;       // tinyunet encoder width
    int feature_channels = 16; // tinyunet K_f (penultimate map channels)
    float width_mult = 0.25f;  // deeplabv3plus_mobilenetv2 channel multiplier
    uint64_t init_seed = 0;
};

struct ForwardResult {
    Tensor logits;   // B x 2 x H x W
    Tensor features; // B x K_f x H_f x W_f, the hook-point activation
    Tensor probs;    // sigmoid(logits), clamped into (0,1)
    ForwardTrace trace;
};

class SegModel {
public:
    explicit SegModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}
    virtual ~SegModel() = default;

    const std::string& architecture_id() const { return cfg_.architecture; }
    float dropout_rate() const { return cfg_.dropout; }
    const ModelConfig& config() const { return cfg_; }

    virtual int feature_channels() const = 0;
    // Required spatial multiple of the input (pooling/stride structure).
    virtual int size_divisor() const = 0;

    ForwardResult forward(const Tensor& batch, const ForwardOptions& opts = {}) const;

    // Seeds d(logits); when dfeatures is non-null it is added at the hook point
    // (contrastive-loss path). Accumulates parameter gradients.
    void backward(const ForwardResult& fr, const Tensor& dlogits,
                  const Tensor* dfeatures = nullptr);

    // Gradient of <dlogits, logits> w.r.t. the hook features; parameter
    // gradients are not touched. Throws ContractViolation when the forward
    // pass did not record activations.
    Tensor feature_gradient(const ForwardResult& fr, const Tensor& dlogits) const;

    // Applies the classifier head to a (possibly modified) hook activation;
    // deterministic, dropout inactive. Output is at logit resolution.
    virtual Tensor head_forward(const Tensor& features) const = 0;

    std::vector<Param> parameters() { return params_; }
    std::vector<BufferRef> buffers() { return buffers_; }
    void zero_grads();

protected:
    virtual Tensor run_forward(const Tensor& x, ForwardTrace* trace, const ForwardOptions& opts,
                               Tensor* features_out) const = 0;
    virtual void run_backward(const ForwardTrace& trace, const Tensor& dlogits,
                              const Tensor* dfeatures) = 0;
    virtual Tensor run_feature_gradient(const ForwardTrace& trace,
                                        const Tensor& dlogits) const = 0;

    ModelConfig cfg_;
    std::vector<Param> params_;
    std::vector<BufferRef> buffers_;
};

std::unique_ptr<SegModel> make_model(const ModelConfig& cfg);

// Deep-copies a model (parameters and buffers) via its config.
std::unique_ptr<SegModel> clone_model(SegModel& model);

} // namespace sfda::nn

#endif
