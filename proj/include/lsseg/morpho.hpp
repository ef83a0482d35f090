#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lsseg/volume.hpp"

namespace lsseg {

/// Connected components of a binary mask. labels: 0 background, 1..K
/// numbered in first-encounter scan order (x fastest, then y, then z).
struct ComponentMap {
    Dims3 dims;
    Spacing3 spacing;
    std::vector<std::int32_t> labels;
    std::vector<std::size_t> sizes;  // sizes[k - 1] = voxels of component k

    int count() const { return static_cast<int>(sizes.size()); }
};

/// Inclusive voxel index box.
struct Box3 {
    int x0 = 0, y0 = 0, z0 = 0;
    int x1 = -1, y1 = -1, z1 = -1;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    int depth() const { return z1 - z0 + 1; }
    bool contains(int x, int y, int z) const {
        return x >= x0 && x <= x1 && y >= y0 && y <= y1 && z >= z0 && z <= z1;
    }
    friend bool operator==(const Box3&, const Box3&) = default;
};

/// Any non-zero value counts as foreground. connectivity must be 6 or 26.
ComponentMap connected_components_3d(const Volume& mask, int connectivity = 26);
ComponentMap connected_components_3d(std::span<const std::uint8_t> mask, Dims3 dims, int connectivity = 26,
                                     Spacing3 spacing = {});

/// Binary (0/1, u8 labels) mask of the largest component; ties go to the
/// smallest label. Throws DataError when there is no foreground.
Volume largest_component(const ComponentMap& cm);

/// Tight box of the foreground, grown by ceil(margin_mm / spacing) voxels per
/// side and clamped to the grid. Throws DataError for an empty mask.
Box3 bounding_box(const Volume& mask, double margin_mm, const Spacing3& spacing);
Box3 bounding_box(const Volume& mask, double margin_mm = 0.0);

/// Foreground as bytes (value != 0).
std::vector<std::uint8_t> binary_mask(const Volume& v);

}  // namespace lsseg
