#ifndef SFDA_NN_LAYERS_HPP
#define SFDA_NN_LAYERS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sfda/rng.hpp"
#include "sfda/tensor.hpp"

namespace sfda::nn {

// Per-layer activation record for one forward pass. Traces are owned by the
// caller (not the model), so concurrent inference passes never share state.
struct TraceSlot {
    Tensor saved;               // layer input (conv) or normalized input (bn)
    Tensor extra;               // bn per-channel inverse std
    std::vector<uint8_t> mask;  // relu/dropout masks, pool argmax
    bool train_mode = false;
};

struct ForwardTrace {
    std::vector<TraceSlot> slots;
    bool recorded = false;
};

struct ForwardOptions {
    bool stochastic = false;  // dropout layers active
    bool train = false;       // batchnorm uses batch statistics
    bool record = true;       // keep activations for backward / Grad-CAM
    Rng* rng = nullptr;       // required when stochastic
};

struct Param {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

struct BufferRef {
    std::string name;
    Tensor* value;
};

// 2-D convolution, square kernel, same-style padding chosen by caller.
// Weights [out_ch, in_ch/groups, k, k]; im2col + GEMM inside.
class Conv2d {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int k, int stride = 1, int pad = -1,
           int dilation = 1, int groups = 1, bool bias = true);

    void init_he(Rng& rng);

    Tensor forward(const Tensor& x, TraceSlot* slot) const;
    // dx only; parameter grads untouched.
    Tensor backward_input(const Tensor& dy, const std::vector<int>& x_shape) const;
    // dx + accumulate dW/db from the saved input.
    Tensor backward(const Tensor& dy, const TraceSlot& slot);

    void collect(std::vector<Param>& out);
    int out_channels() const { return out_ch_; }

    Tensor w, b, gw, gb;

private:
    std::string name_;
    int in_ch_, out_ch_, k_, stride_, pad_, dilation_, groups_;
    bool bias_;
};

class ReLU {
public:
    explicit ReLU(bool cap6 = false) : cap6_(cap6) {}
    Tensor forward(const Tensor& x, TraceSlot* slot) const;
    Tensor backward(const Tensor& dy, const TraceSlot& slot) const;

private:
    bool cap6_;
};

// 2x2 max pooling, stride 2. Input spatial dims must be even.
class MaxPool2 {
public:
    Tensor forward(const Tensor& x, TraceSlot* slot) const;
    Tensor backward(const Tensor& dy, const TraceSlot& slot) const;
};

class UpsampleNearest2 {
public:
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& dy) const;
};

// Inverted dropout; identity unless the pass is stochastic.
class Dropout {
public:
    explicit Dropout(float p) : p_(p) {}
    float rate() const { return p_; }
    Tensor forward(const Tensor& x, TraceSlot* slot, const ForwardOptions& opts) const;
    Tensor backward(const Tensor& dy, const TraceSlot& slot) const;

private:
    float p_;
};

class BatchNorm2d {
public:
    BatchNorm2d(std::string name, int channels, float eps = 1e-5f, float momentum = 0.1f);

    Tensor forward(const Tensor& x, TraceSlot* slot, const ForwardOptions& opts) const;
    Tensor backward(const Tensor& dy, const TraceSlot& slot);

    void collect(std::vector<Param>& out);
    void collect_buffers(std::vector<BufferRef>& out);

    Tensor weight, bias, gw, gb;
    // Running stats update in train-mode forward; training is single-writer.
    mutable Tensor running_mean, running_var;

private:
    std::string name_;
    int channels_;
    float eps_, momentum_;
};

// Wiring helpers (stateless, used inside model forward/backward code).
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int c_a, Tensor& da, Tensor& db);

// Bilinear resize to an arbitrary size (align_corners=false convention)
// and the matching gradient scatter.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w);

Tensor global_avg_pool(const Tensor& x);                       // B x C x 1 x 1
Tensor global_avg_pool_backward(const Tensor& dy, int h, int w);
Tensor broadcast_hw(const Tensor& x, int h, int w);            // B x C x 1 x 1 -> B x C x h x w
Tensor broadcast_hw_backward(const Tensor& dy);

} // namespace sfda::nn

#endif
