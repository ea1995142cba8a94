#pragma once
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sal/rng.hpp"
#include "sal/volume.hpp"

namespace sal {

// Synthetic phantom volumes: 2-4 ellipsoidal structures per subject (a body,
// a nested core, and up to two disjoint satellites), smooth intensity ramps,
// additive noise, and ground-truth class masks. Adjacent slices change
// smoothly, which is the premise the alignment losses rely on.
//
// Classes: 0 background, 1 body, 2 core, 3 bright satellite, 4 dark satellite.
inline constexpr int kPhantomNumClasses = 5;

namespace detail {

struct Ellipsoid {
    // Centers and semi-axes in voxel units, axes ordered (z, y, x).
    std::array<double, 3> center;
    std::array<double, 3> semi;
    int cls = 0;
    double intensity = 0.0;

    bool contains(double z, double y, double x) const {
        const double dz = (z - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dx = (x - center[2]) / semi[2];
        return dz * dz + dy * dy + dx * dx <= 1.0;
    }
};

inline bool disjoint(const Ellipsoid& a, const Ellipsoid& b, double margin) {
    // Conservative sphere bound on each ellipsoid.
    double ra = std::max({a.semi[0], a.semi[1], a.semi[2]});
    double rb = std::max({b.semi[0], b.semi[1], b.semi[2]});
    double d2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = a.center[i] - b.center[i];
        d2 += d * d;
    }
    return std::sqrt(d2) > ra + rb + margin;
}

} // namespace detail

inline Volume make_phantom_volume(const std::string& subject_id, int V, int H, int W,
                                  RngStream& rng) {
    using detail::Ellipsoid;

    const double hz = V / 2.0, hy = H / 2.0, hx = W / 2.0;
    const int num_structs = static_cast<int>(rng.randint(2, 4));

    std::vector<Ellipsoid> shapes;

    // Body: large, roughly centered, spans most of the z extent.
    Ellipsoid body;
    body.center = {hz + rng.uniform(-0.05, 0.05) * V,
                   hy + rng.uniform(-0.10, 0.10) * H,
                   hx + rng.uniform(-0.10, 0.10) * W};
    body.semi = {rng.uniform(0.62, 0.82) * hz,
                 rng.uniform(0.48, 0.62) * hy,
                 rng.uniform(0.48, 0.62) * hx};
    body.cls = 1;
    body.intensity = 0.45 * (1.0 + rng.uniform(-0.1, 0.1));
    shapes.push_back(body);

    // Core: nested inside the body with a bounded offset.
    Ellipsoid core;
    core.semi = {rng.uniform(0.45, 0.60) * body.semi[0],
                 rng.uniform(0.45, 0.60) * body.semi[1],
                 rng.uniform(0.45, 0.60) * body.semi[2]};
    for (int i = 0; i < 3; ++i) {
        const double slack = body.semi[i] - core.semi[i];
        core.center[i] = body.center[i] + rng.uniform(-0.35, 0.35) * slack;
    }
    core.cls = 2;
    core.intensity = 0.40 * (1.0 + rng.uniform(-0.1, 0.1));
    shapes.push_back(core);

    // Satellites: disjoint from the body (and from each other).
    const double sat_intensity[2] = {0.65, -0.30};
    for (int k = 0; k < num_structs - 2; ++k) {
        Ellipsoid sat;
        sat.cls = 3 + k;
        sat.intensity = sat_intensity[k] * (1.0 + rng.uniform(-0.1, 0.1));
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            sat.semi = {rng.uniform(0.28, 0.40) * hz,
                        rng.uniform(0.14, 0.22) * hy,
                        rng.uniform(0.14, 0.22) * hx};
            sat.center = {hz + rng.uniform(-0.25, 0.25) * V,
                          rng.uniform(sat.semi[1] + 1.0, H - sat.semi[1] - 1.0),
                          rng.uniform(sat.semi[2] + 1.0, W - sat.semi[2] - 1.0)};
            placed = detail::disjoint(sat, body, 1.5);
            for (std::size_t s = 2; placed && s < shapes.size(); ++s)
                placed = detail::disjoint(sat, shapes[s], 1.0);
        }
        if (placed) shapes.push_back(sat);
    }

    // Smooth intensity ramp along a random direction.
    double gdir[3] = {rng.normal(), rng.normal(), rng.normal()};
    const double gnorm = std::sqrt(gdir[0] * gdir[0] + gdir[1] * gdir[1] + gdir[2] * gdir[2]) + 1e-12;
    for (double& g : gdir) g /= gnorm;
    const double ramp_mag = rng.uniform(0.08, 0.16);
    const double noise_sigma = 0.03;

    Tensor<float> vox({V, H, W});
    Tensor<std::int32_t> lab({V, H, W}, 0);

    for (int z = 0; z < V; ++z) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double nz = (z - hz) / hz, ny = (y - hy) / hy, nx = (x - hx) / hx;
                double val = 0.10 + ramp_mag * (gdir[0] * nz + gdir[1] * ny + gdir[2] * nx);
                int cls = 0;
                for (const auto& e : shapes) {
                    if (e.contains(z + 0.5, y + 0.5, x + 0.5)) {
                        val += e.intensity;
                        cls = e.cls; // later shapes override (core over body)
                    }
                }
                val += rng.normal(0.0, noise_sigma);
                vox.at(z, y, x) = static_cast<float>(val);
                lab.at(z, y, x) = cls;
            }
        }
    }

    Volume vol(subject_id, std::move(vox));
    vol.set_labels(std::move(lab), kPhantomNumClasses);
    return vol;
}

inline std::vector<Volume> make_phantom_dataset(int num_subjects, int V, int H, int W,
                                                std::uint64_t seed) {
    require(num_subjects >= 2, "make_phantom_dataset: num_subjects=", num_subjects, " < 2");
    require(V >= 8 && H >= 8 && W >= 8,
            "make_phantom_dataset: dimensions (", V, ",", H, ",", W, ") below minimum 8");
    RngStream root(seed);
    std::vector<Volume> out;
    out.reserve(static_cast<std::size_t>(num_subjects));
    for (int i = 0; i < num_subjects; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "phantom%03d", i);
        RngStream sub = root.derive("subject", static_cast<std::uint64_t>(i));
        out.push_back(make_phantom_volume(name, V, H, W, sub));
    }
    return out;
}

inline Dataset make_phantom_dataset_in_memory(int num_subjects, int V, int H, int W,
                                              std::uint64_t seed, bool normalize = true) {
    Dataset ds;
    ds.num_classes = kPhantomNumClasses;
    ds.volumes = make_phantom_dataset(num_subjects, V, H, W, seed);
    if (normalize)
        for (auto& v : ds.volumes) normalize_volume(v);
    return ds;
}

} // namespace sal
