#ifndef SFDA_IMAGE_HPP
#define SFDA_IMAGE_HPP

#include <string>

#include "sfda/tensor.hpp"

namespace sfda {

// Images are CHW float32 in [0,1]; RGB channel order.
Tensor load_image_chw(const std::string& path);

// Single-plane mask file -> H x W {0,1}; any nonzero pixel is foreground.
// Accepts gray or color files (first channel, after gray conversion).
Tensor load_mask_plane(const std::string& path);

// Tri-level fundus mask convention (0 = cup, 128 = disc, 255 = background)
// -> 2 x H x W with channel 0 = cup, channel 1 = disc (cup is part of the disc).
Tensor load_trilevel_mask(const std::string& path);

void save_image_chw(const std::string& path, const Tensor& img);
// Values outside [0,1] are clipped; H x W input.
void save_gray(const std::string& path, const Tensor& plane);

// Separable Gaussian blur with reflected borders; sigma in pixels, sigma<=0 is identity.
Tensor gaussian_blur_chw(const Tensor& img, double sigma);

} // namespace sfda

#endif
