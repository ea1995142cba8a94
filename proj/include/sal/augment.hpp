#pragma once
#include <array>
#include <cmath>
#include <utility>

#include "sal/rng.hpp"
#include "sal/volume.hpp"

namespace sal {

struct AugmentConfig {
    std::array<double, 2> crop_scale{0.7, 1.0}; // side-length fractions
    double flip_prob = 0.5;
    double intensity_jitter = 0.1; // std of multiplicative gain and additive shift
    std::array<int, 2> output_size{64, 64};
    bool shared_geometry = false; // both views reuse one crop/flip draw
    // Off by default: they weaken within-window matching.
    bool enable_rotation = false;
    double rotation_max_deg = 10.0;
    bool enable_elastic = false;
    double elastic_sigma = 2.0; // displacement amplitude in pixels
    int elastic_grid = 4;       // control points per axis

    void validate() const {
        require(crop_scale[0] > 0.0 && crop_scale[0] <= crop_scale[1] && crop_scale[1] <= 1.0,
                "AugmentConfig: crop_scale must satisfy 0 < low <= high <= 1, got [",
                crop_scale[0], ", ", crop_scale[1], "]");
        require(flip_prob >= 0.0 && flip_prob <= 1.0, "AugmentConfig: flip_prob outside [0,1]");
        require(intensity_jitter >= 0.0, "AugmentConfig: intensity_jitter must be nonnegative");
        require(output_size[0] >= 8 && output_size[1] >= 8,
                "AugmentConfig: output_size below minimum 8");
    }
};

// One augmented view; source slice metadata rides along untouched.
struct SliceView {
    Tensor<float> pixels; // (H_out, W_out)
    std::string subject_id;
    int slice_index = 0;
    int V = 0;
    int view_id = 0;
};

namespace detail {

inline float sample_bilinear(const Tensor<float>& img, double y, double x) {
    const int H = img.dim(0), W = img.dim(1);
    const double yc = std::clamp(y, 0.0, static_cast<double>(H - 1));
    const double xc = std::clamp(x, 0.0, static_cast<double>(W - 1));
    const int y0 = static_cast<int>(std::floor(yc));
    const int x0 = static_cast<int>(std::floor(xc));
    const int y1 = std::min(y0 + 1, H - 1);
    const int x1 = std::min(x0 + 1, W - 1);
    const double fy = yc - y0, fx = xc - x0;
    const double v00 = img.at(y0, x0), v01 = img.at(y0, x1);
    const double v10 = img.at(y1, x0), v11 = img.at(y1, x1);
    return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                              fy * ((1 - fx) * v10 + fx * v11));
}

} // namespace detail

// Same-size resize is an exact copy, so the identity pipeline is bit-identity.
inline Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w) {
    const int H = img.dim(0), W = img.dim(1);
    if (H == out_h && W == out_w) return img;
    Tensor<float> out({out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            out.at(y, x) = detail::sample_bilinear(img, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
    return out;
}

inline Tensor<float> flip_horizontal(const Tensor<float>& img) {
    const int H = img.dim(0), W = img.dim(1);
    Tensor<float> out({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            out.at(y, x) = img.at(y, W - 1 - x);
    return out;
}

inline Tensor<float> rotate_bilinear(const Tensor<float>& img, double degrees) {
    const int H = img.dim(0), W = img.dim(1);
    const double rad = degrees * M_PI / 180.0;
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double c = std::cos(rad), s = std::sin(rad);
    Tensor<float> out({H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double dy = y - cy, dx = x - cx;
            out.at(y, x) = detail::sample_bilinear(img, cy + c * dy - s * dx, cx + s * dy + c * dx);
        }
    }
    return out;
}

// Coarse random displacement field, bilinearly upsampled to pixel resolution.
inline Tensor<float> elastic_warp(const Tensor<float>& img, double sigma, int grid,
                                  RngStream& rng) {
    const int H = img.dim(0), W = img.dim(1);
    Tensor<float> dy({grid, grid}), dx({grid, grid});
    for (int i = 0; i < grid * grid; ++i) {
        dy[i] = static_cast<float>(rng.normal(0.0, sigma));
        dx[i] = static_cast<float>(rng.normal(0.0, sigma));
    }
    Tensor<float> out({H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double gy = (grid - 1) * static_cast<double>(y) / std::max(1, H - 1);
            const double gx = (grid - 1) * static_cast<double>(x) / std::max(1, W - 1);
            const double oy = detail::sample_bilinear(dy, gy, gx);
            const double ox = detail::sample_bilinear(dx, gy, gx);
            out.at(y, x) = detail::sample_bilinear(img, y + oy, x + ox);
        }
    }
    return out;
}

namespace detail {

struct GeometryDraw {
    int crop_h, crop_w, top, left;
    bool flip;
    double rot_deg = 0.0;
};

inline GeometryDraw draw_geometry(const Tensor<float>& px, const AugmentConfig& cfg,
                                  RngStream& rng) {
    const int H = px.dim(0), W = px.dim(1);
    GeometryDraw g{};
    const double scale = rng.uniform(cfg.crop_scale[0], cfg.crop_scale[1]);
    g.crop_h = static_cast<int>(std::lround(scale * H));
    g.crop_w = static_cast<int>(std::lround(scale * W));
    require(g.crop_h >= 8 && g.crop_w >= 8, "two_views: crop of ", g.crop_h, "x", g.crop_w,
            " from ", H, "x", W, " is below the 8x8 minimum");
    g.top = static_cast<int>(rng.randint(0, H - g.crop_h));
    g.left = static_cast<int>(rng.randint(0, W - g.crop_w));
    g.flip = rng.bernoulli(cfg.flip_prob);
    if (cfg.enable_rotation)
        g.rot_deg = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
    return g;
}

inline Tensor<float> apply_view(const Tensor<float>& px, const GeometryDraw& g,
                                const AugmentConfig& cfg, RngStream& rng) {
    Tensor<float> crop({g.crop_h, g.crop_w});
    for (int y = 0; y < g.crop_h; ++y)
        for (int x = 0; x < g.crop_w; ++x)
            crop.at(y, x) = px.at(g.top + y, g.left + x);

    Tensor<float> out = resize_bilinear(crop, cfg.output_size[0], cfg.output_size[1]);
    if (g.flip) out = flip_horizontal(out);
    if (cfg.enable_rotation && g.rot_deg != 0.0) out = rotate_bilinear(out, g.rot_deg);
    if (cfg.enable_elastic) out = elastic_warp(out, cfg.elastic_sigma, cfg.elastic_grid, rng);

    if (cfg.intensity_jitter > 0.0) {
        const double gain = 1.0 + rng.normal(0.0, cfg.intensity_jitter);
        const double shift = rng.normal(0.0, cfg.intensity_jitter);
        for (long long i = 0; i < out.numel(); ++i)
            out[i] = static_cast<float>(out[i] * gain + shift);
    }
    return out;
}

} // namespace detail

// Two stochastic views of one slice. Deterministic given the rng state;
// metadata is copied through unchanged.
inline std::pair<SliceView, SliceView> two_views(const SliceRecord& slice,
                                                 const AugmentConfig& cfg, RngStream& rng) {
    cfg.validate();
    detail::GeometryDraw g0 = detail::draw_geometry(slice.pixels, cfg, rng);
    detail::GeometryDraw g1 = cfg.shared_geometry ? g0
                                                  : detail::draw_geometry(slice.pixels, cfg, rng);
    SliceView a{detail::apply_view(slice.pixels, g0, cfg, rng),
                slice.subject_id, slice.slice_index, slice.V, 0};
    SliceView b{detail::apply_view(slice.pixels, g1, cfg, rng),
                slice.subject_id, slice.slice_index, slice.V, 1};
    return {std::move(a), std::move(b)};
}

} // namespace sal
