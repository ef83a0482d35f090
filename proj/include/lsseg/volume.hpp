#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lsseg/tensor.hpp"

namespace lsseg {

struct Dims3 {
    int x = 0;
    int y = 0;
    int z = 0;

    std::size_t count() const { return static_cast<std::size_t>(x) * y * z; }
    friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Voxel size in millimetres.
struct Spacing3 {
    double x = 1.0;
    double y = 1.0;
    double z = 1.0;

    friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

enum class VolumeKind { Intensity, Labels };

/// On-disk scalar type; in memory every volume holds floats.
enum class ScalarType { I16, F32, U8 };

/// Label values.
inline constexpr int kBackground = 0;
inline constexpr int kLiver = 1;
inline constexpr int kLesion = 2;

/// Intensity window applied before anything else.
inline constexpr float kHuMin = -200.0f;
inline constexpr float kHuMax = 200.0f;
/// Clipped HU values are divided by this before entering a network.
inline constexpr float kHuScale = 200.0f;

/// 3-D scalar grid, x fastest, then y, then z.
class Volume {
public:
    Volume() = default;
    Volume(Dims3 dims, Spacing3 spacing, VolumeKind kind, ScalarType dtype, float fill = 0.0f);
    Volume(Dims3 dims, Spacing3 spacing, VolumeKind kind, ScalarType dtype, std::vector<float> data);

    /// Label volume (u8) with the grid of `ref`.
    static Volume labels_like(const Volume& ref, float fill = 0.0f);

    const Dims3& dims() const { return dims_; }
    const Spacing3& spacing() const { return spacing_; }
    VolumeKind kind() const { return kind_; }
    ScalarType dtype() const { return dtype_; }
    std::size_t size() const { return data_.size(); }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims_.y + y) * dims_.x + x;
    }
    float& at(int x, int y, int z) { return data_[index(x, y, z)]; }
    float at(int x, int y, int z) const { return data_[index(x, y, z)]; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool same_grid(const Volume& o) const { return dims_ == o.dims_; }

    /// Throws DataError unless every value of a label volume is 0, 1 or 2.
    void validate() const;

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    Dims3 dims_{};
    Spacing3 spacing_{};
    VolumeKind kind_ = VolumeKind::Intensity;
    ScalarType dtype_ = ScalarType::F32;
    std::vector<float> data_;
};

std::string to_string(VolumeKind k);
std::string to_string(ScalarType t);

/// k adjacent axial slices around center_z, stacked as channels.
struct SlabStack {
    Tensor<float> slices;  // (1, k, h, w)
    int center_z = 0;
};

/// In-plane rectangle; may extend past the volume (reads are edge-clamped).
struct Region2D {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;
};

// ---------------------------------------------------------------------------
// Preprocessing

/// Clamp intensities to [-200, 200] HU.
Volume clip_hu(const Volume& vol);

/// Network input scaling: clip_hu, then divide by kHuScale (values in [-1, 1]).
Volume normalize_hu(const Volume& vol);

/// Resample to a new voxel spacing. Intensities use trilinear interpolation,
/// labels nearest neighbour. New dims are round-half-up(old * spacing /
/// target), at least 1. Samples outside the source grid clamp to the border.
Volume resample_trilinear(const Volume& vol, const Spacing3& target);

/// Resample onto an explicit grid with the same physical origin.
Volume resample_to_grid(const Volume& vol, const Dims3& dims, const Spacing3& spacing);

Dims3 resampled_dims(const Dims3& dims, const Spacing3& from, const Spacing3& to);

/// Slices clamp(z + j - (k-1)/2, 0, nz-1) for j = 0..k-1 over the whole plane.
SlabStack extract_slab(const Volume& vol, int z, int k = 5);

/// Same, restricted to `region` (edge replication outside the volume).
SlabStack extract_slab(const Volume& vol, int z, int k, const Region2D& region);

/// Lesion folded into liver: 2 -> 1.
Volume merge_labels(const Volume& labels);

/// Inclusive z range of slices containing any label >= 1.
std::pair<int, int> liver_region_slices(const Volume& labels);

// ---------------------------------------------------------------------------
// Files

/// MVOL: five text header lines, a blank line, raw little-endian data.
void save_mvol(const Volume& vol, const std::filesystem::path& path);
Volume load_mvol(const std::filesystem::path& path);

/// Label mask as MVOL with dtype u8, kind labels.
void save_mask(const Volume& labels, const std::filesystem::path& path);

/// Uncompressed single-file NIfTI-1 (.nii), int16 or float32, no extensions.
Volume load_nifti(const std::filesystem::path& path, VolumeKind kind = VolumeKind::Intensity);

/// Dispatch on extension: .nii -> NIfTI, anything else -> MVOL.
Volume load_volume(const std::filesystem::path& path, VolumeKind kind = VolumeKind::Intensity);

// ---------------------------------------------------------------------------
// Synthetic phantoms

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct PhantomConfig {
    Dims3 dims{64, 64, 32};
    Spacing3 spacing{1.5, 1.5, 3.0};
    Range liver_semi_axis_x_mm{26.0, 34.0};
    Range liver_semi_axis_y_mm{20.0, 28.0};
    Range liver_semi_axis_z_mm{24.0, 34.0};
    double center_jitter_mm = 6.0;
    int lesion_count_min = 1;
    int lesion_count_max = 3;
    Range lesion_radius_mm{5.0, 9.0};
    double background_hu = -100.0;
    double liver_hu = 60.0;
    double lesion_hu = 0.0;
    double noise_sigma = 12.0;

    /// Throws ConfigError for infeasible settings.
    void validate() const;
};

struct Phantom {
    Volume image;   // intensity, i16
    Volume labels;  // labels, u8
};

/// Ellipsoidal liver with spherical lesions fully inside it; intensities are
/// class means plus Gaussian noise, rounded to integer HU.
Phantom generate_phantom(std::uint64_t seed, const PhantomConfig& cfg = {});

}  // namespace lsseg
