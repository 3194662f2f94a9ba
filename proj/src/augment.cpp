#include "ieces/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ieces/encoder.hpp"
#include "ieces/rng.hpp"

namespace ieces {

namespace {

constexpr int N = kImageSize;
constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double pixel_at(const std::vector<double>& p, int c, int y, int x, int h, int w) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return p[(static_cast<std::size_t>(c) * h + y) * w + x];
}

// Bilinear sample with edge replication outside the frame.
double sample_bilinear(const std::vector<double>& p, int c, double y, double x, int h, int w) {
    const double fy = std::floor(y), fx = std::floor(x);
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const double wy = y - fy, wx = x - fx;
    const double v00 = pixel_at(p, c, y0, x0, h, w);
    const double v01 = pixel_at(p, c, y0, x0 + 1, h, w);
    const double v10 = pixel_at(p, c, y0 + 1, x0, h, w);
    const double v11 = pixel_at(p, c, y0 + 1, x0 + 1, h, w);
    return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
}

void require_valid(const SignImage& image, const char* who) {
    if (!image.valid_shape()) throw std::invalid_argument(std::string(who) + ": malformed image");
}

// Direct linear transform for the homography mapping (xi,yi) -> (ui,vi),
// four correspondences, h33 fixed at 1. Returns false when singular.
bool solve_homography(const double xs[4], const double ys[4], const double us[4],
                      const double vs[4], double h[9]) {
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = xs[i], y = ys[i], u = us[i], v = vs[i];
        double* r1 = a[2 * i];
        double* r2 = a[2 * i + 1];
        r1[0] = x; r1[1] = y; r1[2] = 1; r1[6] = -u * x; r1[7] = -u * y; r1[8] = u;
        r2[3] = x; r2[4] = y; r2[5] = 1; r2[6] = -v * x; r2[7] = -v * y; r2[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        if (std::fabs(a[piv][col]) < 1e-12) return false;
        std::swap_ranges(a[col], a[col] + 9, a[piv]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (int k = col; k < 9; ++k) a[r][k] -= f * a[col][k];
        }
    }
    for (int i = 0; i < 8; ++i) h[i] = a[i][8] / a[i][i];
    h[8] = 1.0;
    return true;
}

bool convex_quad(const double xs[4], const double ys[4]) {
    // corner order: TL, TR, BR, BL
    double sign = 0.0;
    for (int i = 0; i < 4; ++i) {
        const int j = (i + 1) % 4, k = (i + 2) % 4;
        const double cross = (xs[j] - xs[i]) * (ys[k] - ys[j]) - (ys[j] - ys[i]) * (xs[k] - xs[j]);
        if (std::fabs(cross) < 1e-9) return false;
        if (sign == 0.0)
            sign = cross;
        else if (sign * cross < 0.0)
            return false;
    }
    return true;
}

}  // namespace

void AugmentConfig::validate() const {
    if (erase_prob < 0.0 || erase_prob > 1.0)
        throw std::invalid_argument("augment config: erase probability outside [0,1]");
    if (!(erase_area_lo > 0.0 && erase_area_lo <= erase_area_hi && erase_area_hi < 1.0))
        throw std::invalid_argument("augment config: erase area range ill-formed");
    if (erase_aspect_lo <= 0.0 || erase_aspect_lo > erase_aspect_hi)
        throw std::invalid_argument("augment config: erase aspect range ill-formed");
    if (blur_len_lo < 1 || blur_len_lo > blur_len_hi)
        throw std::invalid_argument("augment config: blur length range ill-formed");
    if (rotate_lo > rotate_hi || scale_lo > scale_hi || scale_lo < 1)
        throw std::invalid_argument("augment config: rotation or scale range ill-formed");
    if (perspective_jitter < 0.0 || perspective_jitter > 0.25)
        throw std::invalid_argument("augment config: perspective jitter outside [0, 0.25]");
}

SignImage random_erase(const SignImage& image, const AugmentConfig& config, std::uint64_t seed) {
    require_valid(image, "random_erase");
    Rng rng(mix_seed(seed, 0xe7a5e));
    SignImage out = image;
    if (rng.uniform() >= config.erase_prob) return out;

    const double lo_px = config.erase_area_lo * N * N, hi_px = config.erase_area_hi * N * N;
    for (int attempt = 0; attempt < 100; ++attempt) {
        const double area = rng.uniform(config.erase_area_lo, config.erase_area_hi) * N * N;
        const double aspect = rng.uniform(config.erase_aspect_lo, config.erase_aspect_hi);
        const int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
        const int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
        if (h < 1 || w < 1 || h > N || w > N) continue;
        if (h * w < lo_px || h * w > hi_px) continue;
        const int top = static_cast<int>(rng.below(N - h + 1));
        const int left = static_cast<int>(rng.below(N - w + 1));
        for (int c = 0; c < kImageChannels; ++c)
            for (int y = top; y < top + h; ++y)
                for (int x = left; x < left + w; ++x)
                    out.pixels[(static_cast<std::size_t>(c) * N + y) * N + x] = rng.uniform();
        out.tag = image.tag == CorruptionTag::motion_blur ? CorruptionTag::combined
                                                          : CorruptionTag::occluded;
        return out;
    }
    return out;  // all attempts rejected: keep the image unchanged
}

std::vector<double> motion_blur_kernel(double length, double angle_deg, int& size) {
    if (length < 1.0) throw std::invalid_argument("motion_blur: length must be >= 1");
    const int n = static_cast<int>(std::lround(length));
    const int r = (n - 1) / 2 + ((n - 1) % 2);   // ceil((n-1)/2)
    size = 2 * r + 1;
    std::vector<double> kernel(static_cast<std::size_t>(size) * size, 0.0);
    const double theta = angle_deg * kPi / 180.0;
    const double cx = std::cos(theta), cy = std::sin(theta);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = i - (n - 1) / 2.0;
        const int px = static_cast<int>(std::lround(t * cx));
        const int py = static_cast<int>(std::lround(t * cy));
        kernel[(py + r) * size + (px + r)] += 1.0;
        total += 1.0;
    }
    for (double& k : kernel) k /= total;
    return kernel;
}

SignImage motion_blur(const SignImage& image, double length, double angle_deg) {
    require_valid(image, "motion_blur");
    int size = 0;
    const auto kernel = motion_blur_kernel(length, angle_deg, size);
    const int r = size / 2;
    SignImage out = image;
    for (int c = 0; c < kImageChannels; ++c) {
        for (int y = 0; y < N; ++y) {
            for (int x = 0; x < N; ++x) {
                double acc = 0.0;
                for (int u = 0; u < size; ++u) {
                    for (int v = 0; v < size; ++v) {
                        const double k = kernel[u * size + v];
                        if (k == 0.0) continue;
                        acc += k * pixel_at(image.pixels, c, y + u - r, x + v - r, N, N);
                    }
                }
                out.pixels[(static_cast<std::size_t>(c) * N + y) * N + x] = clamp01(acc);
            }
        }
    }
    out.tag = image.tag == CorruptionTag::occluded ? CorruptionTag::combined
                                                   : CorruptionTag::motion_blur;
    return out;
}

SignImage rotate(const SignImage& image, double angle_deg) {
    require_valid(image, "rotate");
    if (angle_deg == 0.0) return image;
    const double theta = angle_deg * kPi / 180.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cc = (N - 1) / 2.0;
    SignImage out = image;
    for (int c = 0; c < kImageChannels; ++c) {
        for (int y = 0; y < N; ++y) {
            for (int x = 0; x < N; ++x) {
                const double sy = cc + (y - cc) * ct - (x - cc) * st;
                const double sx = cc + (y - cc) * st + (x - cc) * ct;
                out.pixels[(static_cast<std::size_t>(c) * N + y) * N + x] =
                    clamp01(sample_bilinear(image.pixels, c, sy, sx, N, N));
            }
        }
    }
    return out;
}

std::vector<double> resize_bilinear(const std::vector<double>& pixels, int channels, int h,
                                    int w, int target_h, int target_w) {
    if (h < 1 || w < 1) throw std::invalid_argument("resize: source extents must be >= 1");
    std::vector<double> out(static_cast<std::size_t>(channels) * target_h * target_w);
    const double sy = static_cast<double>(h) / target_h, sx = static_cast<double>(w) / target_w;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x)
                out[(static_cast<std::size_t>(c) * target_h + y) * target_w + x] = clamp01(
                    sample_bilinear(pixels, c, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5, h, w));
    return out;
}

SignImage scale_roundtrip(const SignImage& image, int intermediate) {
    require_valid(image, "scale_roundtrip");
    if (intermediate < 1) throw std::invalid_argument("scale_roundtrip: size must be >= 1");
    SignImage out = image;
    if (intermediate == N) return out;
    auto mid = resize_bilinear(image.pixels, kImageChannels, N, N, intermediate, intermediate);
    out.pixels = resize_bilinear(mid, kImageChannels, intermediate, intermediate, N, N);
    return out;
}

SignImage perspective_jitter(const SignImage& image, double jitter, std::uint64_t seed) {
    require_valid(image, "perspective_jitter");
    if (jitter < 0.0 || jitter > 0.25)
        throw std::invalid_argument("perspective_jitter: jitter outside [0, 0.25]");
    if (jitter == 0.0) return image;

    const double base_x[4] = {0, N - 1.0, N - 1.0, 0};
    const double base_y[4] = {0, 0, N - 1.0, N - 1.0};
    Rng rng(mix_seed(seed, 0x9e45));
    double jx[4], jy[4];
    bool ok = false;
    const double amp = jitter * N;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        for (int i = 0; i < 4; ++i) {
            jx[i] = base_x[i] + rng.uniform(-amp, amp);
            jy[i] = base_y[i] + rng.uniform(-amp, amp);
        }
        ok = convex_quad(jx, jy);
    }
    if (!ok) return image;

    // Inverse warp: for each output pixel find its source in the original.
    double hinv[9];
    if (!solve_homography(jx, jy, base_x, base_y, hinv)) return image;
    SignImage out = image;
    for (int y = 0; y < N; ++y) {
        for (int x = 0; x < N; ++x) {
            const double d = hinv[6] * x + hinv[7] * y + hinv[8];
            const double sx = (hinv[0] * x + hinv[1] * y + hinv[2]) / d;
            const double sy = (hinv[3] * x + hinv[4] * y + hinv[5]) / d;
            for (int c = 0; c < kImageChannels; ++c)
                out.pixels[(static_cast<std::size_t>(c) * N + y) * N + x] =
                    clamp01(sample_bilinear(image.pixels, c, sy, sx, N, N));
        }
    }
    return out;
}

SignImage compose_augment(const SignImage& image, const AugmentConfig& config,
                          std::uint64_t seed) {
    require_valid(image, "compose_augment");
    config.validate();
    Rng rng(mix_seed(seed, 0xc0135e));
    SignImage out = image;
    out.tag = CorruptionTag::clean;

    if (rng.uniform() < config.rotate_prob)
        out = rotate(out, rng.uniform(config.rotate_lo, config.rotate_hi));
    if (rng.uniform() < config.scale_prob)
        out = scale_roundtrip(out, rng.uniform_int(config.scale_lo, config.scale_hi));
    if (rng.uniform() < config.perspective_prob)
        out = perspective_jitter(out, config.perspective_jitter, rng.next());

    const bool blur = rng.uniform() < config.blur_prob;
    if (blur)
        out = motion_blur(out, rng.uniform_int(config.blur_len_lo, config.blur_len_hi),
                          rng.uniform(config.blur_angle_lo, config.blur_angle_hi));
    // Erasing draws its own coin from erase_prob inside random_erase.
    out = random_erase(out, config, rng.next());
    return out;
}

}  // namespace ieces
