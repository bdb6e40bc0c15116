#ifndef SFDA_TENSOR_HPP
#define SFDA_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sfda/error.hpp"

namespace sfda {

// Dense row-major float32 tensor, rank 1..4. Layout for rank 4 is NCHW.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), 0.0f);
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor full(std::vector<int> shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    bool empty() const { return data_.empty(); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    size_t numel() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    float& at(int i) { return data_[static_cast<size_t>(i)]; }
    float at(int i) const { return data_[static_cast<size_t>(i)]; }

    float& at(int i, int j) { return data_[idx2(i, j)]; }
    float at(int i, int j) const { return data_[idx2(i, j)]; }

    float& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    float at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }

    float& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    float at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static size_t numel_of(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw InvalidArgument("tensor dimension must be positive");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

private:
    size_t idx2(int i, int j) const {
        return static_cast<size_t>(i) * shape_[1] + j;
    }
    size_t idx3(int i, int j, int k) const {
        return (static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

inline void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
    if (t.shape() != shape) {
        Tensor probe; // only for formatting
        std::ostringstream os;
        os << what << ": expected shape [";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "], got " << t.shape_str();
        throw InvalidArgument(os.str());
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InvalidArgument(std::string(what) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
    }
}

// B x C x H x W -> B x H x W slice of one channel.
inline Tensor select_channel(const Tensor& t, int c) {
    if (t.rank() != 4) throw InvalidArgument("select_channel: rank-4 tensor expected");
    if (c < 0 || c >= t.dim(1)) throw InvalidArgument("select_channel: channel out of range");
    const int B = t.dim(0), H = t.dim(2), W = t.dim(3);
    Tensor out({B, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        const float* src = t.data() + (static_cast<size_t>(b) * t.dim(1) + c) * plane;
        std::copy(src, src + plane, out.data() + static_cast<size_t>(b) * plane);
    }
    return out;
}

// Two B x H x W planes -> B x 2 x H x W.
inline Tensor stack_channels(const Tensor& c0, const Tensor& c1) {
    require_same_shape(c0, c1, "stack_channels");
    if (c0.rank() != 3) throw InvalidArgument("stack_channels: rank-3 inputs expected");
    const int B = c0.dim(0), H = c0.dim(1), W = c0.dim(2);
    Tensor out({B, 2, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        std::copy(c0.data() + b * plane, c0.data() + (b + 1) * plane,
                  out.data() + static_cast<size_t>(b) * 2 * plane);
        std::copy(c1.data() + b * plane, c1.data() + (b + 1) * plane,
                  out.data() + (static_cast<size_t>(b) * 2 + 1) * plane);
    }
    return out;
}

// Two H x W planes -> 2 x H x W.
inline Tensor stack_planes(const Tensor& p0, const Tensor& p1) {
    require_same_shape(p0, p1, "stack_planes");
    if (p0.rank() != 2) throw InvalidArgument("stack_planes: rank-2 inputs expected");
    const int H = p0.dim(0), W = p0.dim(1);
    Tensor out({2, H, W});
    std::copy(p0.data(), p0.data() + p0.numel(), out.data());
    std::copy(p1.data(), p1.data() + p1.numel(), out.data() + p0.numel());
    return out;
}

// C x H x W -> H x W slice.
inline Tensor select_plane(const Tensor& t, int c) {
    if (t.rank() != 3) throw InvalidArgument("select_plane: rank-3 tensor expected");
    if (c < 0 || c >= t.dim(0)) throw InvalidArgument("select_plane: channel out of range");
    const int H = t.dim(1), W = t.dim(2);
    Tensor out({H, W});
    const float* src = t.data() + static_cast<size_t>(c) * H * W;
    std::copy(src, src + out.numel(), out.data());
    return out;
}

inline bool all_finite(const Tensor& t) {
    for (size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i])) return false;
    }
    return true;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    float m = 0.0f;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace sfda

#endif
