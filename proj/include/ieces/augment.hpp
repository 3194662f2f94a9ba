#pragma once

#include <cstdint>
#include <vector>

#include "ieces/dataset.hpp"

namespace ieces {

struct AugmentConfig {
    double erase_prob = 0.5;
    double erase_area_lo = 0.02, erase_area_hi = 0.25;
    double erase_aspect_lo = 0.3, erase_aspect_hi = 3.3;
    int blur_len_lo = 5, blur_len_hi = 10;
    double blur_angle_lo = 0.0, blur_angle_hi = 180.0;   // [lo, hi)
    double rotate_lo = -20.0, rotate_hi = 20.0;
    int scale_lo = 20, scale_hi = 200;
    double perspective_jitter = 0.10;

    // Composition probabilities for the geometric steps and blur; erasing
    // reuses erase_prob. Blur and erasing draw independently, so "both" and
    // "neither" are reachable.
    double rotate_prob = 0.5;
    double scale_prob = 0.25;
    double perspective_prob = 0.25;
    double blur_prob = 0.5;

    void validate() const;
};

SignImage random_erase(const SignImage& image, const AugmentConfig& config, std::uint64_t seed);

SignImage motion_blur(const SignImage& image, double length, double angle_deg);

// Normalized rasterized line kernel; exposed for its own oracle tests.
std::vector<double> motion_blur_kernel(double length, double angle_deg, int& size);

SignImage rotate(const SignImage& image, double angle_deg);

// Bilinear resample of arbitrary raw pixels to 48 x 48.
std::vector<double> resize_bilinear(const std::vector<double>& pixels, int channels, int h,
                                    int w, int target_h, int target_w);

// Augmentation mode: round-trip through a random size in [scale_lo, scale_hi].
SignImage scale_roundtrip(const SignImage& image, int intermediate);

SignImage perspective_jitter(const SignImage& image, double jitter, std::uint64_t seed);

SignImage compose_augment(const SignImage& image, const AugmentConfig& config,
                          std::uint64_t seed);

}  // namespace ieces
