#include <algorithm>
#include <cmath>
#include <random>

#include "lsseg/volume.hpp"

namespace lsseg {

namespace {

void check_range(const Range& r, const char* name) {
    if (!(r.lo > 0) || !(r.hi >= r.lo))
        throw ConfigError(std::string("phantom ") + name + " range must satisfy 0 < lo <= hi");
}

double uniform(std::mt19937_64& rng, const Range& r) {
    return r.lo == r.hi ? r.lo : std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

constexpr int kLesionAttempts = 200;

}  // namespace

void PhantomConfig::validate() const {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1) throw ConfigError("phantom dims must be positive");
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw ConfigError("phantom spacing must be positive");
    check_range(liver_semi_axis_x_mm, "liver_semi_axis_x_mm");
    check_range(liver_semi_axis_y_mm, "liver_semi_axis_y_mm");
    check_range(liver_semi_axis_z_mm, "liver_semi_axis_z_mm");
    check_range(lesion_radius_mm, "lesion_radius_mm");
    if (center_jitter_mm < 0) throw ConfigError("phantom center_jitter_mm must be >= 0");
    if (lesion_count_min < 0 || lesion_count_max < lesion_count_min)
        throw ConfigError("phantom lesion count range must satisfy 0 <= min <= max");
    if (!(noise_sigma >= 0)) throw ConfigError("phantom noise_sigma must be >= 0");

    const double smallest_axis =
        std::min({liver_semi_axis_x_mm.lo, liver_semi_axis_y_mm.lo, liver_semi_axis_z_mm.lo});
    if (lesion_count_max > 0 && lesion_radius_mm.hi >= smallest_axis)
        throw ConfigError("phantom lesion radius " + std::to_string(lesion_radius_mm.hi) +
                          " mm does not fit inside the smallest liver semi-axis " + std::to_string(smallest_axis) + " mm");

    const double ex = dims.x * spacing.x / 2;
    const double ey = dims.y * spacing.y / 2;
    const double ez = dims.z * spacing.z / 2;
    if (liver_semi_axis_x_mm.hi + center_jitter_mm > ex || liver_semi_axis_y_mm.hi + center_jitter_mm > ey ||
        liver_semi_axis_z_mm.hi + center_jitter_mm > ez)
        throw ConfigError("phantom liver ellipsoid (with centre jitter) does not fit inside the volume extent");
}

Phantom generate_phantom(std::uint64_t seed, const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const Dims3 d = cfg.dims;
    const Spacing3 s = cfg.spacing;

    std::uniform_real_distribution<double> jitter(-cfg.center_jitter_mm, cfg.center_jitter_mm);
    const double cx = d.x * s.x / 2 + (cfg.center_jitter_mm > 0 ? jitter(rng) : 0.0);
    const double cy = d.y * s.y / 2 + (cfg.center_jitter_mm > 0 ? jitter(rng) : 0.0);
    const double cz = d.z * s.z / 2 + (cfg.center_jitter_mm > 0 ? jitter(rng) : 0.0);
    const double ax = uniform(rng, cfg.liver_semi_axis_x_mm);
    const double ay = uniform(rng, cfg.liver_semi_axis_y_mm);
    const double az = uniform(rng, cfg.liver_semi_axis_z_mm);

    Volume labels(d, s, VolumeKind::Labels, ScalarType::U8);
    auto px = [&](int i) { return (i + 0.5) * s.x; };
    auto py = [&](int j) { return (j + 0.5) * s.y; };
    auto pz = [&](int k) { return (k + 0.5) * s.z; };
    auto in_liver = [&](double x, double y, double z) {
        const double u = (x - cx) / ax, v = (y - cy) / ay, w = (z - cz) / az;
        return u * u + v * v + w * w <= 1.0;
    };
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i)
                if (in_liver(px(i), py(j), pz(k))) labels.at(i, j, k) = kLiver;

    const int lesions = std::uniform_int_distribution<int>(cfg.lesion_count_min, cfg.lesion_count_max)(rng);
    for (int n = 0; n < lesions; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < kLesionAttempts && !placed; ++attempt) {
            const double r = uniform(rng, cfg.lesion_radius_mm);
            // centre drawn inside the ellipsoid shrunk by r along every axis
            std::uniform_real_distribution<double> unit(-1.0, 1.0);
            double u, v, w;
            do {
                u = unit(rng);
                v = unit(rng);
                w = unit(rng);
            } while (u * u + v * v + w * w > 1.0);
            const double lx = cx + u * (ax - r), ly = cy + v * (ay - r), lz = cz + w * (az - r);

            // every voxel within one voxel of the sphere must already be liver,
            // so the lesion is enclosed by liver tissue on the grid as well
            const double reach = r + std::max({s.x, s.y, s.z});
            const int i0 = static_cast<int>(std::floor((lx - reach) / s.x));
            const int i1 = static_cast<int>(std::ceil((lx + reach) / s.x));
            const int j0 = static_cast<int>(std::floor((ly - reach) / s.y));
            const int j1 = static_cast<int>(std::ceil((ly + reach) / s.y));
            const int k0 = static_cast<int>(std::floor((lz - reach) / s.z));
            const int k1 = static_cast<int>(std::ceil((lz + reach) / s.z));
            std::vector<std::size_t> voxels;
            bool inside = true;
            for (int k = k0; k <= k1 && inside; ++k)
                for (int j = j0; j <= j1 && inside; ++j)
                    for (int i = i0; i <= i1; ++i) {
                        const double dx = px(i) - lx, dy = py(j) - ly, dz = pz(k) - lz;
                        const double d2 = dx * dx + dy * dy + dz * dz;
                        if (d2 > reach * reach) continue;
                        const bool on_grid = i >= 0 && j >= 0 && k >= 0 && i < d.x && j < d.y && k < d.z;
                        if (!on_grid || labels.at(i, j, k) == kBackground) {
                            inside = false;
                            break;
                        }
                        if (d2 <= r * r) voxels.push_back(labels.index(i, j, k));
                    }
            if (!inside || voxels.empty()) continue;
            for (auto idx : voxels) labels[idx] = kLesion;
            placed = true;
        }
        if (!placed)
            throw ConfigError("could not place lesion " + std::to_string(n + 1) + " inside the liver after " +
                              std::to_string(kLesionAttempts) + " attempts; reduce lesion_radius_mm");
    }

    Volume image(d, s, VolumeKind::Intensity, ScalarType::I16);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);
    const double means[3] = {cfg.background_hu, cfg.liver_hu, cfg.lesion_hu};
    for (std::size_t i = 0; i < image.size(); ++i) {
        double v = means[static_cast<int>(labels[i])];
        if (cfg.noise_sigma > 0) v += noise(rng);
        image[i] = static_cast<float>(std::clamp(std::nearbyint(v), -32768.0, 32767.0));
    }
    return {std::move(image), std::move(labels)};
}

}  // namespace lsseg
