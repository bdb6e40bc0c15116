#include "sfda/nn/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "sfda/error.hpp"

namespace sfda::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

int conv_out_dim(int in, int k, int stride, int pad, int dil) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// Row-major col buffer: rows (ic*k*k), cols (oh*ow).
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int dil,
            int OH, int OW, float* col) {
    const int P = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* row = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * P;
                const float* plane = x + static_cast<size_t>(c) * H * W;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ki * dil;
                    if (ih < 0 || ih >= H) {
                        std::memset(row + static_cast<size_t>(oh) * OW, 0, sizeof(float) * OW);
                        continue;
                    }
                    const float* src = plane + static_cast<size_t>(ih) * W;
                    float* dst = row + static_cast<size_t>(oh) * OW;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kj * dil;
                        dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* col, int C, int H, int W, int k, int stride, int pad, int dil,
            int OH, int OW, float* x) {
    const int P = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* row = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * P;
                float* plane = x + static_cast<size_t>(c) * H * W;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ki * dil;
                    if (ih < 0 || ih >= H) continue;
                    float* dst = plane + static_cast<size_t>(ih) * W;
                    const float* src = row + static_cast<size_t>(oh) * OW;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kj * dil;
                        if (iw >= 0 && iw < W) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

std::vector<float>& scratch() {
    static thread_local std::vector<float> buf;
    return buf;
}

} // namespace

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad,
               int dilation, int groups, bool bias)
    : name_(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride),
      pad_(pad < 0 ? dilation * (k - 1) / 2 : pad), dilation_(dilation), groups_(groups),
      bias_(bias) {
    if (in_ch % groups != 0 || out_ch % groups != 0)
        throw InvalidArgument("Conv2d " + name_ + ": channels not divisible by groups");
    w = Tensor({out_ch_, in_ch_ / groups_, k_, k_});
    gw = Tensor({out_ch_, in_ch_ / groups_, k_, k_});
    if (bias_) {
        b = Tensor({out_ch_});
        gb = Tensor({out_ch_});
    }
}

void Conv2d::init_he(Rng& rng) {
    const double fan_in = static_cast<double>(in_ch_ / groups_) * k_ * k_;
    const double std = std::sqrt(2.0 / fan_in);
    for (size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.normal(0.0, std));
    if (bias_) b.fill(0.0f);
}

Tensor Conv2d::forward(const Tensor& x, TraceSlot* slot) const {
    if (x.rank() != 4 || x.dim(1) != in_ch_)
        throw InvalidArgument("Conv2d " + name_ + ": expected input with " +
                              std::to_string(in_ch_) + " channels, got " + x.shape_str());
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int OH = conv_out_dim(H, k_, stride_, pad_, dilation_);
    const int OW = conv_out_dim(W, k_, stride_, pad_, dilation_);
    if (OH <= 0 || OW <= 0)
        throw InvalidArgument("Conv2d " + name_ + ": input " + x.shape_str() + " too small");

    const int icg = in_ch_ / groups_, ocg = out_ch_ / groups_;
    const int R = icg * k_ * k_, P = OH * OW;
    const bool pointwise = (k_ == 1 && stride_ == 1 && pad_ == 0 && dilation_ == 1);

    Tensor y({B, out_ch_, OH, OW});
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < B; ++bi) {
        const float* xb = x.data() + static_cast<size_t>(bi) * in_ch_ * H * W;
        float* yb = y.data() + static_cast<size_t>(bi) * out_ch_ * P;
        for (int g = 0; g < groups_; ++g) {
            const float* xg = xb + static_cast<size_t>(g) * icg * H * W;
            const float* colp = xg;
            if (!pointwise) {
                auto& buf = scratch();
                buf.resize(static_cast<size_t>(R) * P);
                im2col(xg, icg, H, W, k_, stride_, pad_, dilation_, OH, OW, buf.data());
                colp = buf.data();
            }
            CMapMat wg(w.data() + static_cast<size_t>(g) * ocg * R, ocg, R);
            CMapMat col(colp, R, P);
            MapMat out(yb + static_cast<size_t>(g) * ocg * P, ocg, P);
            out.noalias() = wg * col;
        }
        if (bias_) {
            for (int oc = 0; oc < out_ch_; ++oc) {
                float* row = yb + static_cast<size_t>(oc) * P;
                const float bv = b[static_cast<size_t>(oc)];
                for (int p = 0; p < P; ++p) row[p] += bv;
            }
        }
    }
    if (slot) slot->saved = x;
    return y;
}

Tensor Conv2d::backward_input(const Tensor& dy, const std::vector<int>& x_shape) const {
    const int B = x_shape[0], H = x_shape[2], W = x_shape[3];
    const int OH = dy.dim(2), OW = dy.dim(3);
    const int icg = in_ch_ / groups_, ocg = out_ch_ / groups_;
    const int R = icg * k_ * k_, P = OH * OW;
    const bool pointwise = (k_ == 1 && stride_ == 1 && pad_ == 0 && dilation_ == 1);

    Tensor dx(x_shape);
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < B; ++bi) {
        const float* dyb = dy.data() + static_cast<size_t>(bi) * out_ch_ * P;
        float* dxb = dx.data() + static_cast<size_t>(bi) * in_ch_ * H * W;
        for (int g = 0; g < groups_; ++g) {
            CMapMat wg(w.data() + static_cast<size_t>(g) * ocg * R, ocg, R);
            CMapMat dyg(dyb + static_cast<size_t>(g) * ocg * P, ocg, P);
            float* dxg = dxb + static_cast<size_t>(g) * icg * H * W;
            if (pointwise) {
                MapMat dxm(dxg, R, P);
                dxm.noalias() = wg.transpose() * dyg;
            } else {
                auto& buf = scratch();
                buf.resize(static_cast<size_t>(R) * P);
                MapMat dcol(buf.data(), R, P);
                dcol.noalias() = wg.transpose() * dyg;
                col2im(buf.data(), icg, H, W, k_, stride_, pad_, dilation_, OH, OW, dxg);
            }
        }
    }
    return dx;
}

Tensor Conv2d::backward(const Tensor& dy, const TraceSlot& slot) {
    const Tensor& x = slot.saved;
    if (x.empty())
        throw ContractViolation("Conv2d " + name_ + ": no recorded input for backward");
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int OH = dy.dim(2), OW = dy.dim(3);
    const int icg = in_ch_ / groups_, ocg = out_ch_ / groups_;
    const int R = icg * k_ * k_, P = OH * OW;
    const bool pointwise = (k_ == 1 && stride_ == 1 && pad_ == 0 && dilation_ == 1);

    // Per-sample weight-grad buffers reduced in index order: results do not
    // depend on the number of threads.
    std::vector<Tensor> per_sample(static_cast<size_t>(B));
#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < B; ++bi) {
        Tensor dwb({out_ch_, icg, k_, k_});
        const float* xb = x.data() + static_cast<size_t>(bi) * in_ch_ * H * W;
        const float* dyb = dy.data() + static_cast<size_t>(bi) * out_ch_ * P;
        for (int g = 0; g < groups_; ++g) {
            const float* xg = xb + static_cast<size_t>(g) * icg * H * W;
            const float* colp = xg;
            if (!pointwise) {
                auto& buf = scratch();
                buf.resize(static_cast<size_t>(R) * P);
                im2col(xg, icg, H, W, k_, stride_, pad_, dilation_, OH, OW, buf.data());
                colp = buf.data();
            }
            CMapMat col(colp, R, P);
            CMapMat dyg(dyb + static_cast<size_t>(g) * ocg * P, ocg, P);
            MapMat dwg(dwb.data() + static_cast<size_t>(g) * ocg * R, ocg, R);
            dwg.noalias() = dyg * col.transpose();
        }
        per_sample[static_cast<size_t>(bi)] = std::move(dwb);
    }
    for (int bi = 0; bi < B; ++bi) {
        const Tensor& dwb = per_sample[static_cast<size_t>(bi)];
        for (size_t i = 0; i < gw.numel(); ++i) gw[i] += dwb[i];
    }
    if (bias_) {
        for (int bi = 0; bi < B; ++bi) {
            const float* dyb = dy.data() + static_cast<size_t>(bi) * out_ch_ * P;
            for (int oc = 0; oc < out_ch_; ++oc) {
                double s = 0.0;
                const float* row = dyb + static_cast<size_t>(oc) * P;
                for (int p = 0; p < P; ++p) s += row[p];
                gb[static_cast<size_t>(oc)] += static_cast<float>(s);
            }
        }
    }
    return backward_input(dy, x.shape());
}

void Conv2d::collect(std::vector<Param>& out) {
    out.push_back({name_ + ".w", &w, &gw});
    if (bias_) out.push_back({name_ + ".b", &b, &gb});
}

Tensor ReLU::forward(const Tensor& x, TraceSlot* slot) const {
    Tensor y(x.shape());
    std::vector<uint8_t> mask;
    if (slot) mask.resize(x.numel());
    for (size_t i = 0; i < x.numel(); ++i) {
        const float v = x[i];
        float o = v > 0.0f ? v : 0.0f;
        bool pass = v > 0.0f;
        if (cap6_ && o > 6.0f) {
            o = 6.0f;
            pass = false;
        }
        y[i] = o;
        if (slot) mask[i] = pass ? 1 : 0;
    }
    if (slot) slot->mask = std::move(mask);
    return y;
}

Tensor ReLU::backward(const Tensor& dy, const TraceSlot& slot) const {
    if (slot.mask.size() != dy.numel())
        throw ContractViolation("ReLU: no recorded mask for backward");
    Tensor dx(dy.shape());
    for (size_t i = 0; i < dy.numel(); ++i) dx[i] = slot.mask[i] ? dy[i] : 0.0f;
    return dx;
}

Tensor MaxPool2::forward(const Tensor& x, TraceSlot* slot) const {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2)
        throw InvalidArgument("MaxPool2: spatial dims must be even, got " + x.shape_str());
    const int OH = H / 2, OW = W / 2;
    Tensor y({B, C, OH, OW});
    std::vector<uint8_t> arg;
    if (slot) arg.resize(y.numel());
    size_t o = 0;
    for (int bc = 0; bc < B * C; ++bc) {
        const float* plane = x.data() + static_cast<size_t>(bc) * H * W;
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow, ++o) {
                const float* p0 = plane + static_cast<size_t>(2 * oh) * W + 2 * ow;
                float best = p0[0];
                int bi = 0;
                if (p0[1] > best) { best = p0[1]; bi = 1; }
                if (p0[W] > best) { best = p0[W]; bi = 2; }
                if (p0[W + 1] > best) { best = p0[W + 1]; bi = 3; }
                y[o] = best;
                if (slot) arg[o] = static_cast<uint8_t>(bi);
            }
        }
    }
    if (slot) slot->mask = std::move(arg);
    return y;
}

Tensor MaxPool2::backward(const Tensor& dy, const TraceSlot& slot) const {
    if (slot.mask.size() != dy.numel())
        throw ContractViolation("MaxPool2: no recorded argmax for backward");
    const int B = dy.dim(0), C = dy.dim(1), OH = dy.dim(2), OW = dy.dim(3);
    const int H = 2 * OH, W = 2 * OW;
    Tensor dx({B, C, H, W});
    size_t o = 0;
    for (int bc = 0; bc < B * C; ++bc) {
        float* plane = dx.data() + static_cast<size_t>(bc) * H * W;
        for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow, ++o) {
                const int a = slot.mask[o];
                const int ih = 2 * oh + (a >> 1), iw = 2 * ow + (a & 1);
                plane[static_cast<size_t>(ih) * W + iw] += dy[o];
            }
        }
    }
    return dx;
}

Tensor UpsampleNearest2::forward(const Tensor& x) const {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({B, C, 2 * H, 2 * W});
    for (int bc = 0; bc < B * C; ++bc) {
        const float* src = x.data() + static_cast<size_t>(bc) * H * W;
        float* dst = y.data() + static_cast<size_t>(bc) * 4 * H * W;
        for (int h = 0; h < 2 * H; ++h) {
            const float* srow = src + static_cast<size_t>(h / 2) * W;
            float* drow = dst + static_cast<size_t>(h) * 2 * W;
            for (int w2 = 0; w2 < 2 * W; ++w2) drow[w2] = srow[w2 / 2];
        }
    }
    return y;
}

Tensor UpsampleNearest2::backward(const Tensor& dy) const {
    const int B = dy.dim(0), C = dy.dim(1), OH = dy.dim(2), OW = dy.dim(3);
    const int H = OH / 2, W = OW / 2;
    Tensor dx({B, C, H, W});
    for (int bc = 0; bc < B * C; ++bc) {
        const float* src = dy.data() + static_cast<size_t>(bc) * OH * OW;
        float* dst = dx.data() + static_cast<size_t>(bc) * H * W;
        for (int h = 0; h < OH; ++h) {
            float* drow = dst + static_cast<size_t>(h / 2) * W;
            const float* srow = src + static_cast<size_t>(h) * OW;
            for (int w2 = 0; w2 < OW; ++w2) drow[w2 / 2] += srow[w2];
        }
    }
    return dx;
}

Tensor Dropout::forward(const Tensor& x, TraceSlot* slot, const ForwardOptions& opts) const {
    if (!opts.stochastic || p_ <= 0.0f) {
        if (slot) slot->mask.clear();
        return x;
    }
    if (!opts.rng)
        throw ContractViolation("Dropout: stochastic forward requires an RNG");
    Tensor y(x.shape());
    std::vector<uint8_t> mask(x.numel());
    const float scale = 1.0f / (1.0f - p_);
    for (size_t i = 0; i < x.numel(); ++i) {
        const bool keep = opts.rng->uniform() >= p_;
        mask[i] = keep ? 1 : 0;
        y[i] = keep ? x[i] * scale : 0.0f;
    }
    if (slot) slot->mask = std::move(mask);
    return y;
}

Tensor Dropout::backward(const Tensor& dy, const TraceSlot& slot) const {
    if (slot.mask.empty()) return dy; // pass was deterministic
    Tensor dx(dy.shape());
    const float scale = 1.0f / (1.0f - p_);
    for (size_t i = 0; i < dy.numel(); ++i) dx[i] = slot.mask[i] ? dy[i] * scale : 0.0f;
    return dx;
}

BatchNorm2d::BatchNorm2d(std::string name, int channels, float eps, float momentum)
    : name_(std::move(name)), channels_(channels), eps_(eps), momentum_(momentum) {
    weight = Tensor::full({channels}, 1.0f);
    bias = Tensor({channels});
    gw = Tensor({channels});
    gb = Tensor({channels});
    running_mean = Tensor({channels});
    running_var = Tensor::full({channels}, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, TraceSlot* slot, const ForwardOptions& opts) const {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t n = static_cast<size_t>(B) * plane;
    Tensor y(x.shape());
    Tensor xhat;
    if (slot) xhat = Tensor(x.shape());
    Tensor invstd({C});

    for (int c = 0; c < C; ++c) {
        float mean, var;
        if (opts.train) {
            double s = 0.0;
            for (int b2 = 0; b2 < B; ++b2) {
                const float* p = x.data() + (static_cast<size_t>(b2) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) s += p[i];
            }
            mean = static_cast<float>(s / static_cast<double>(n));
            double v = 0.0;
            for (int b2 = 0; b2 < B; ++b2) {
                const float* p = x.data() + (static_cast<size_t>(b2) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    v += d * d;
                }
            }
            var = static_cast<float>(v / static_cast<double>(n));
            const float unbiased = n > 1 ? static_cast<float>(v / static_cast<double>(n - 1)) : var;
            running_mean[c] = (1.0f - momentum_) * running_mean[c] + momentum_ * mean;
            running_var[c] = (1.0f - momentum_) * running_var[c] + momentum_ * unbiased;
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const float is = 1.0f / std::sqrt(var + eps_);
        invstd[c] = is;
        const float g = weight[c], be = bias[c];
        for (int b2 = 0; b2 < B; ++b2) {
            const float* p = x.data() + (static_cast<size_t>(b2) * C + c) * plane;
            float* q = y.data() + (static_cast<size_t>(b2) * C + c) * plane;
            float* xh = slot ? xhat.data() + (static_cast<size_t>(b2) * C + c) * plane : nullptr;
            for (size_t i = 0; i < plane; ++i) {
                const float h = (p[i] - mean) * is;
                if (xh) xh[i] = h;
                q[i] = g * h + be;
            }
        }
    }
    if (slot) {
        slot->saved = std::move(xhat);
        slot->extra = std::move(invstd);
        slot->train_mode = opts.train;
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, const TraceSlot& slot) {
    if (slot.saved.empty())
        throw ContractViolation("BatchNorm2d " + name_ + ": no recorded stats for backward");
    const Tensor& xhat = slot.saved;
    const Tensor& invstd = slot.extra;
    const int B = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    const double n = static_cast<double>(B) * plane;
    Tensor dx(dy.shape());

    for (int c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b2 = 0; b2 < B; ++b2) {
            const float* d = dy.data() + (static_cast<size_t>(b2) * C + c) * plane;
            const float* xh = xhat.data() + (static_cast<size_t>(b2) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
                sum_dy += d[i];
                sum_dy_xhat += static_cast<double>(d[i]) * xh[i];
            }
        }
        gb[c] += static_cast<float>(sum_dy);
        gw[c] += static_cast<float>(sum_dy_xhat);
        const float g = weight[c], is = invstd[c];
        if (slot.train_mode) {
            for (int b2 = 0; b2 < B; ++b2) {
                const float* d = dy.data() + (static_cast<size_t>(b2) * C + c) * plane;
                const float* xh = xhat.data() + (static_cast<size_t>(b2) * C + c) * plane;
                float* o = dx.data() + (static_cast<size_t>(b2) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const double t = n * d[i] - sum_dy - xh[i] * sum_dy_xhat;
                    o[i] = static_cast<float>(g * is * t / n);
                }
            }
        } else {
            for (int b2 = 0; b2 < B; ++b2) {
                const float* d = dy.data() + (static_cast<size_t>(b2) * C + c) * plane;
                float* o = dx.data() + (static_cast<size_t>(b2) * C + c) * plane;
                for (size_t i = 0; i < plane; ++i) o[i] = g * is * d[i];
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect(std::vector<Param>& out) {
    out.push_back({name_ + ".weight", &weight, &gw});
    out.push_back({name_ + ".bias", &bias, &gb});
}

void BatchNorm2d::collect_buffers(std::vector<BufferRef>& out) {
    out.push_back({name_ + ".running_mean", &running_mean});
    out.push_back({name_ + ".running_var", &running_var});
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
    if (b.dim(0) != B || b.dim(2) != H || b.dim(3) != W)
        throw InvalidArgument("concat_channels: incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
    Tensor out({B, Ca + Cb, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int bi = 0; bi < B; ++bi) {
        std::copy(a.data() + static_cast<size_t>(bi) * Ca * plane,
                  a.data() + static_cast<size_t>(bi + 1) * Ca * plane,
                  out.data() + static_cast<size_t>(bi) * (Ca + Cb) * plane);
        std::copy(b.data() + static_cast<size_t>(bi) * Cb * plane,
                  b.data() + static_cast<size_t>(bi + 1) * Cb * plane,
                  out.data() + (static_cast<size_t>(bi) * (Ca + Cb) + Ca) * plane);
    }
    return out;
}

void split_channels(const Tensor& d, int c_a, Tensor& da, Tensor& db) {
    const int B = d.dim(0), C = d.dim(1), H = d.dim(2), W = d.dim(3);
    const int c_b = C - c_a;
    da = Tensor({B, c_a, H, W});
    db = Tensor({B, c_b, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int bi = 0; bi < B; ++bi) {
        const float* src = d.data() + static_cast<size_t>(bi) * C * plane;
        std::copy(src, src + static_cast<size_t>(c_a) * plane,
                  da.data() + static_cast<size_t>(bi) * c_a * plane);
        std::copy(src + static_cast<size_t>(c_a) * plane, src + static_cast<size_t>(C) * plane,
                  db.data() + static_cast<size_t>(bi) * c_b * plane);
    }
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h == H && out_w == W) return x;
    Tensor y({B, C, out_h, out_w});
    const double sh = static_cast<double>(H) / out_h, sw = static_cast<double>(W) / out_w;
    for (int oh = 0; oh < out_h; ++oh) {
        double fy = (oh + 0.5) * sh - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, H - 1);
        const float wy = static_cast<float>(fy - y0);
        for (int ow = 0; ow < out_w; ++ow) {
            double fx = (ow + 0.5) * sw - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, W - 1);
            const float wx = static_cast<float>(fx - x0);
            for (int bc = 0; bc < B * C; ++bc) {
                const float* p = x.data() + static_cast<size_t>(bc) * H * W;
                const float v = (1 - wy) * ((1 - wx) * p[static_cast<size_t>(y0) * W + x0] +
                                            wx * p[static_cast<size_t>(y0) * W + x1]) +
                                wy * ((1 - wx) * p[static_cast<size_t>(y1) * W + x0] +
                                      wx * p[static_cast<size_t>(y1) * W + x1]);
                y.data()[static_cast<size_t>(bc) * out_h * out_w +
                         static_cast<size_t>(oh) * out_w + ow] = v;
            }
        }
    }
    return y;
}

Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w) {
    const int B = dy.dim(0), C = dy.dim(1), OH = dy.dim(2), OW = dy.dim(3);
    if (OH == in_h && OW == in_w) return dy;
    Tensor dx({B, C, in_h, in_w});
    const double sh = static_cast<double>(in_h) / OH, sw = static_cast<double>(in_w) / OW;
    for (int oh = 0; oh < OH; ++oh) {
        double fy = (oh + 0.5) * sh - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const float wy = static_cast<float>(fy - y0);
        for (int ow = 0; ow < OW; ++ow) {
            double fx = (ow + 0.5) * sw - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(in_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const float wx = static_cast<float>(fx - x0);
            for (int bc = 0; bc < B * C; ++bc) {
                const float g = dy.data()[static_cast<size_t>(bc) * OH * OW +
                                          static_cast<size_t>(oh) * OW + ow];
                float* p = dx.data() + static_cast<size_t>(bc) * in_h * in_w;
                p[static_cast<size_t>(y0) * in_w + x0] += (1 - wy) * (1 - wx) * g;
                p[static_cast<size_t>(y0) * in_w + x1] += (1 - wy) * wx * g;
                p[static_cast<size_t>(y1) * in_w + x0] += wy * (1 - wx) * g;
                p[static_cast<size_t>(y1) * in_w + x1] += wy * wx * g;
            }
        }
    }
    return dx;
}

Tensor global_avg_pool(const Tensor& x) {
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({B, C, 1, 1});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int bc = 0; bc < B * C; ++bc) {
        const float* p = x.data() + static_cast<size_t>(bc) * plane;
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        y[static_cast<size_t>(bc)] = static_cast<float>(s / static_cast<double>(plane));
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int h, int w) {
    const int B = dy.dim(0), C = dy.dim(1);
    Tensor dx({B, C, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int bc = 0; bc < B * C; ++bc) {
        const float g = dy[static_cast<size_t>(bc)] / static_cast<float>(plane);
        float* p = dx.data() + static_cast<size_t>(bc) * plane;
        for (size_t i = 0; i < plane; ++i) p[i] = g;
    }
    return dx;
}

Tensor broadcast_hw(const Tensor& x, int h, int w) {
    const int B = x.dim(0), C = x.dim(1);
    Tensor y({B, C, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    for (int bc = 0; bc < B * C; ++bc) {
        const float v = x[static_cast<size_t>(bc)];
        float* p = y.data() + static_cast<size_t>(bc) * plane;
        for (size_t i = 0; i < plane; ++i) p[i] = v;
    }
    return y;
}

Tensor broadcast_hw_backward(const Tensor& dy) {
    const int B = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
    Tensor dx({B, C, 1, 1});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int bc = 0; bc < B * C; ++bc) {
        const float* p = dy.data() + static_cast<size_t>(bc) * plane;
        double s = 0.0;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        dx[static_cast<size_t>(bc)] = static_cast<float>(s);
    }
    return dx;
}

} // namespace sfda::nn
