#include "sfda/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <vector>

#include "sfda/error.hpp"

namespace sfda {

Tensor load_image_chw(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("cannot read image: " + path);
    Tensor out({3, m.rows, m.cols});
    const size_t plane = static_cast<size_t>(m.rows) * m.cols;
    for (int r = 0; r < m.rows; ++r) {
        const cv::Vec3b* row = m.ptr<cv::Vec3b>(r);
        for (int c = 0; c < m.cols; ++c) {
            const size_t i = static_cast<size_t>(r) * m.cols + c;
            out.data()[i] = row[c][2] / 255.0f;             // R
            out.data()[plane + i] = row[c][1] / 255.0f;     // G
            out.data()[2 * plane + i] = row[c][0] / 255.0f; // B
        }
    }
    return out;
}

Tensor load_mask_plane(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("cannot read mask: " + path);
    Tensor out({m.rows, m.cols});
    for (int r = 0; r < m.rows; ++r) {
        const uint8_t* row = m.ptr<uint8_t>(r);
        for (int c = 0; c < m.cols; ++c)
            out.at(r, c) = row[c] != 0 ? 1.0f : 0.0f;
    }
    return out;
}

Tensor load_trilevel_mask(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("cannot read mask: " + path);
    Tensor out({2, m.rows, m.cols});
    const size_t plane = static_cast<size_t>(m.rows) * m.cols;
    for (int r = 0; r < m.rows; ++r) {
        const uint8_t* row = m.ptr<uint8_t>(r);
        for (int c = 0; c < m.cols; ++c) {
            const size_t i = static_cast<size_t>(r) * m.cols + c;
            out.data()[i] = row[c] <= 64 ? 1.0f : 0.0f;          // cup
            out.data()[plane + i] = row[c] <= 192 ? 1.0f : 0.0f; // disc (includes cup)
        }
    }
    return out;
}

void save_image_chw(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw InvalidArgument("save_image_chw: expected 3 x H x W, got " + img.shape_str());
    const int H = img.dim(1), W = img.dim(2);
    const size_t plane = static_cast<size_t>(H) * W;
    cv::Mat m(H, W, CV_8UC3);
    for (int r = 0; r < H; ++r) {
        cv::Vec3b* row = m.ptr<cv::Vec3b>(r);
        for (int c = 0; c < W; ++c) {
            const size_t i = static_cast<size_t>(r) * W + c;
            auto q = [&](float v) {
                return static_cast<uint8_t>(std::lround(std::min(std::max(v, 0.0f), 1.0f) * 255.0f));
            };
            row[c][2] = q(img.data()[i]);
            row[c][1] = q(img.data()[plane + i]);
            row[c][0] = q(img.data()[2 * plane + i]);
        }
    }
    if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

void save_gray(const std::string& path, const Tensor& plane) {
    if (plane.rank() != 2)
        throw InvalidArgument("save_gray: expected H x W, got " + plane.shape_str());
    const int H = plane.dim(0), W = plane.dim(1);
    cv::Mat m(H, W, CV_8UC1);
    for (int r = 0; r < H; ++r) {
        uint8_t* row = m.ptr<uint8_t>(r);
        for (int c = 0; c < W; ++c) {
            const float v = std::min(std::max(plane.at(r, c), 0.0f), 1.0f);
            row[c] = static_cast<uint8_t>(std::lround(v * 255.0f));
        }
    }
    if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

Tensor gaussian_blur_chw(const Tensor& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = static_cast<float>(v);
        sum += v;
    }
    for (auto& k : kernel) k = static_cast<float>(k / sum);

    auto reflect = [](int i, int n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
        return i;
    };

    Tensor tmp(img.shape()), out(img.shape());
    for (int c = 0; c < C; ++c) {
        const float* src = img.data() + static_cast<size_t>(c) * H * W;
        float* mid = tmp.data() + static_cast<size_t>(c) * H * W;
        for (int r = 0; r < H; ++r) {
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<size_t>(k + radius)] *
                           src[static_cast<size_t>(r) * W + reflect(x + k, W)];
                mid[static_cast<size_t>(r) * W + x] = static_cast<float>(acc);
            }
        }
        float* dst = out.data() + static_cast<size_t>(c) * H * W;
        for (int r = 0; r < H; ++r) {
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<size_t>(k + radius)] *
                           mid[static_cast<size_t>(reflect(r + k, H)) * W + x];
                dst[static_cast<size_t>(r) * W + x] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

} // namespace sfda
