#include "lsseg/morpho.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lsseg {

namespace {

struct Run {
    int x0;
    int x1;  // inclusive
};

class DisjointSet {
public:
    explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0u); }

    std::uint32_t find(std::uint32_t a) {
        while (parent_[a] != a) {
            parent_[a] = parent_[parent_[a]];
            a = parent_[a];
        }
        return a;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // smaller index wins so roots stay stable in scan order
        if (a < b) parent_[b] = a;
        else parent_[a] = b;
    }

private:
    std::vector<std::uint32_t> parent_;
};

}  // namespace

std::vector<std::uint8_t> binary_mask(const Volume& v) {
    std::vector<std::uint8_t> m(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f;
    return m;
}

ComponentMap connected_components_3d(std::span<const std::uint8_t> mask, Dims3 dims, int connectivity,
                                     Spacing3 spacing) {
    if (connectivity != 6 && connectivity != 26)
        throw UsageError("connectivity must be 6 or 26, got " + std::to_string(connectivity));
    if (mask.size() != dims.count()) throw ShapeError("mask length does not match its dims");
    const int nx = dims.x, ny = dims.y, nz = dims.z;
    const std::size_t rows = static_cast<std::size_t>(ny) * nz;

    // Runs of foreground per row; row r = z * ny + y.
    std::vector<Run> runs;
    std::vector<std::size_t> row_start(rows + 1, 0);
    for (std::size_t r = 0; r < rows; ++r) {
        row_start[r] = runs.size();
        const std::uint8_t* p = mask.data() + r * nx;
        int x = 0;
        while (x < nx) {
            if (!p[x]) {
                ++x;
                continue;
            }
            const int start = x;
            while (x < nx && p[x]) ++x;
            runs.push_back({start, x - 1});
        }
    }
    row_start[rows] = runs.size();

    DisjointSet ds(runs.size());
    // Earlier rows adjacent to the current one; 26-connectivity also joins
    // diagonal x offsets, so runs overlap when extended by one voxel.
    const int reach = connectivity == 26 ? 1 : 0;
    std::vector<std::pair<int, int>> offsets;  // (dy, dz)
    if (connectivity == 6) offsets = {{-1, 0}, {0, -1}};
    else offsets = {{-1, 0}, {-1, -1}, {0, -1}, {1, -1}};

    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            const std::size_t r = static_cast<std::size_t>(z) * ny + y;
            if (row_start[r] == row_start[r + 1]) continue;
            for (auto [dy, dz] : offsets) {
                const int yy = y + dy, zz = z + dz;
                if (yy < 0 || yy >= ny || zz < 0) continue;
                const std::size_t q = static_cast<std::size_t>(zz) * ny + yy;
                std::size_t i = row_start[r], j = row_start[q];
                const std::size_t ie = row_start[r + 1], je = row_start[q + 1];
                while (i < ie && j < je) {
                    const Run& a = runs[i];
                    const Run& b = runs[j];
                    if (a.x1 + reach < b.x0) {
                        ++i;
                    } else if (b.x1 + reach < a.x0) {
                        ++j;
                    } else {
                        ds.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
                        if (a.x1 < b.x1) ++i;
                        else ++j;
                    }
                }
            }
        }
    }

    ComponentMap cm;
    cm.dims = dims;
    cm.spacing = spacing;
    cm.labels.assign(mask.size(), 0);
    std::vector<std::int32_t> root_label(runs.size(), 0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = row_start[r]; k < row_start[r + 1]; ++k) {
            const auto root = ds.find(static_cast<std::uint32_t>(k));
            if (root_label[root] == 0) {
                cm.sizes.push_back(0);
                root_label[root] = cm.count();
            }
            const std::int32_t label = root_label[root];
            const Run& run = runs[k];
            std::fill(cm.labels.begin() + r * nx + run.x0, cm.labels.begin() + r * nx + run.x1 + 1, label);
            cm.sizes[label - 1] += static_cast<std::size_t>(run.x1 - run.x0 + 1);
        }
    }
    return cm;
}

ComponentMap connected_components_3d(const Volume& mask, int connectivity) {
    const auto m = binary_mask(mask);
    return connected_components_3d(m, mask.dims(), connectivity, mask.spacing());
}

Volume largest_component(const ComponentMap& cm) {
    if (cm.sizes.empty()) throw DataError("largest_component: no foreground");
    const auto best = std::max_element(cm.sizes.begin(), cm.sizes.end()) - cm.sizes.begin();
    const std::int32_t label = static_cast<std::int32_t>(best) + 1;
    Volume out(cm.dims, cm.spacing, VolumeKind::Labels, ScalarType::U8);
    for (std::size_t i = 0; i < cm.labels.size(); ++i)
        if (cm.labels[i] == label) out[i] = 1.0f;
    return out;
}

Box3 bounding_box(const Volume& mask, double margin_mm, const Spacing3& spacing) {
    if (margin_mm < 0) throw UsageError("bounding box margin must be >= 0");
    const Dims3& d = mask.dims();
    Box3 b{d.x, d.y, d.z, -1, -1, -1};
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y) {
            const float* row = mask.data().data() + mask.index(0, y, z);
            for (int x = 0; x < d.x; ++x) {
                if (row[x] == 0.0f) continue;
                b.x0 = std::min(b.x0, x);
                b.x1 = std::max(b.x1, x);
                b.y0 = std::min(b.y0, y);
                b.y1 = std::max(b.y1, y);
                b.z0 = std::min(b.z0, z);
                b.z1 = std::max(b.z1, z);
            }
        }
    if (b.x1 < 0) throw DataError("bounding_box: empty mask");
    const int mx = static_cast<int>(std::ceil(margin_mm / spacing.x));
    const int my = static_cast<int>(std::ceil(margin_mm / spacing.y));
    const int mz = static_cast<int>(std::ceil(margin_mm / spacing.z));
    b.x0 = std::max(0, b.x0 - mx);
    b.y0 = std::max(0, b.y0 - my);
    b.z0 = std::max(0, b.z0 - mz);
    b.x1 = std::min(d.x - 1, b.x1 + mx);
    b.y1 = std::min(d.y - 1, b.y1 + my);
    b.z1 = std::min(d.z - 1, b.z1 + mz);
    return b;
}

Box3 bounding_box(const Volume& mask, double margin_mm) { return bounding_box(mask, margin_mm, mask.spacing()); }

}  // namespace lsseg
