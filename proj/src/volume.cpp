#include "lsseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace lsseg {

Volume::Volume(Dims3 dims, Spacing3 spacing, VolumeKind kind, ScalarType dtype, float fill)
    : Volume(dims, spacing, kind, dtype, std::vector<float>(dims.count(), fill)) {}

Volume::Volume(Dims3 dims, Spacing3 spacing, VolumeKind kind, ScalarType dtype, std::vector<float> data)
    : dims_(dims), spacing_(spacing), kind_(kind), dtype_(dtype), data_(std::move(data)) {
    if (dims.x < 0 || dims.y < 0 || dims.z < 0) throw ShapeError("negative volume dimension");
    if (data_.size() != dims.count())
        throw ShapeError("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                         std::to_string(dims.x) + "x" + std::to_string(dims.y) + "x" + std::to_string(dims.z));
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
        throw ConfigError("voxel spacing must be positive");
    validate();
}

Volume Volume::labels_like(const Volume& ref, float fill) {
    return Volume(ref.dims(), ref.spacing(), VolumeKind::Labels, ScalarType::U8, fill);
}

void Volume::validate() const {
    if (kind_ != VolumeKind::Labels) return;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        const float v = data_[i];
        if (v != 0.0f && v != 1.0f && v != 2.0f)
            throw DataError("label volume holds value " + std::to_string(v) + " at voxel " + std::to_string(i) +
                            " (allowed: 0, 1, 2)");
    }
}

std::string to_string(VolumeKind k) { return k == VolumeKind::Labels ? "labels" : "intensity"; }

std::string to_string(ScalarType t) {
    switch (t) {
        case ScalarType::I16: return "i16";
        case ScalarType::F32: return "f32";
        case ScalarType::U8: return "u8";
    }
    return "?";
}

// ---------------------------------------------------------------------------

Volume clip_hu(const Volume& vol) {
    if (vol.kind() != VolumeKind::Intensity) throw UsageError("clip_hu called on a label volume");
    Volume out = vol;
    for (float& v : out.data()) v = std::clamp(v, kHuMin, kHuMax);
    return out;
}

Volume normalize_hu(const Volume& vol) {
    Volume out = clip_hu(vol);
    Volume f(out.dims(), out.spacing(), VolumeKind::Intensity, ScalarType::F32, std::move(out.data()));
    for (float& v : f.data()) v /= kHuScale;
    return f;
}

Dims3 resampled_dims(const Dims3& dims, const Spacing3& from, const Spacing3& to) {
    if (!(to.x > 0 && to.y > 0 && to.z > 0)) throw ConfigError("target spacing must be positive");
    auto one = [](int n, double s, double t) { return std::max(1, static_cast<int>(std::floor(n * s / t + 0.5))); };
    return {one(dims.x, from.x, to.x), one(dims.y, from.y, to.y), one(dims.z, from.z, to.z)};
}

namespace {

// Source coordinate of each target voxel centre along one axis.
struct AxisMap {
    std::vector<int> i0;
    std::vector<int> i1;
    std::vector<double> frac;
    std::vector<int> nearest;
};

AxisMap axis_map(int n_out, double s_out, int n_in, double s_in) {
    AxisMap m;
    m.i0.resize(n_out);
    m.i1.resize(n_out);
    m.frac.resize(n_out);
    m.nearest.resize(n_out);
    for (int i = 0; i < n_out; ++i) {
        double src = (i + 0.5) * s_out / s_in - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
        const int lo = static_cast<int>(std::floor(src));
        m.i0[i] = lo;
        m.i1[i] = std::min(lo + 1, n_in - 1);
        m.frac[i] = src - lo;
        m.nearest[i] = std::min(static_cast<int>(std::floor(src + 0.5)), n_in - 1);
    }
    return m;
}

}  // namespace

Volume resample_to_grid(const Volume& vol, const Dims3& dims, const Spacing3& spacing) {
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw ConfigError("target spacing must be positive");
    if (dims.x < 1 || dims.y < 1 || dims.z < 1) throw ConfigError("target dims must be positive");
    if (vol.size() == 0) throw DataError("cannot resample an empty volume");
    const Dims3& src = vol.dims();
    const AxisMap mx = axis_map(dims.x, spacing.x, src.x, vol.spacing().x);
    const AxisMap my = axis_map(dims.y, spacing.y, src.y, vol.spacing().y);
    const AxisMap mz = axis_map(dims.z, spacing.z, src.z, vol.spacing().z);

    if (vol.kind() == VolumeKind::Labels) {
        Volume out(dims, spacing, VolumeKind::Labels, vol.dtype());
        for (int z = 0; z < dims.z; ++z)
            for (int y = 0; y < dims.y; ++y)
                for (int x = 0; x < dims.x; ++x)
                    out.at(x, y, z) = vol.at(mx.nearest[x], my.nearest[y], mz.nearest[z]);
        return out;
    }

    Volume out(dims, spacing, VolumeKind::Intensity, ScalarType::F32);
    for (int z = 0; z < dims.z; ++z) {
        const double fz = mz.frac[z];
        for (int y = 0; y < dims.y; ++y) {
            const double fy = my.frac[y];
            for (int x = 0; x < dims.x; ++x) {
                const double fx = mx.frac[x];
                auto v = [&](int xi, int yi, int zi) { return static_cast<double>(vol.at(xi, yi, zi)); };
                const double c00 = v(mx.i0[x], my.i0[y], mz.i0[z]) * (1 - fx) + v(mx.i1[x], my.i0[y], mz.i0[z]) * fx;
                const double c10 = v(mx.i0[x], my.i1[y], mz.i0[z]) * (1 - fx) + v(mx.i1[x], my.i1[y], mz.i0[z]) * fx;
                const double c01 = v(mx.i0[x], my.i0[y], mz.i1[z]) * (1 - fx) + v(mx.i1[x], my.i0[y], mz.i1[z]) * fx;
                const double c11 = v(mx.i0[x], my.i1[y], mz.i1[z]) * (1 - fx) + v(mx.i1[x], my.i1[y], mz.i1[z]) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.at(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return out;
}

Volume resample_trilinear(const Volume& vol, const Spacing3& target) {
    return resample_to_grid(vol, resampled_dims(vol.dims(), vol.spacing(), target), target);
}

SlabStack extract_slab(const Volume& vol, int z, int k) {
    return extract_slab(vol, z, k, Region2D{0, 0, vol.dims().x, vol.dims().y});
}

SlabStack extract_slab(const Volume& vol, int z, int k, const Region2D& region) {
    const Dims3& d = vol.dims();
    if (z < 0 || z >= d.z)
        throw UsageError("slab centre z=" + std::to_string(z) + " outside [0," + std::to_string(d.z - 1) + "]");
    if (k < 1 || k % 2 == 0) throw UsageError("slab size k must be odd and positive");
    if (region.width < 1 || region.height < 1) throw UsageError("slab region must be non-empty");
    SlabStack s;
    s.center_z = z;
    s.slices = Tensor<float>({1, k, region.height, region.width});
    std::vector<int> xs(region.width);
    for (int i = 0; i < region.width; ++i) xs[i] = std::clamp(region.x0 + i, 0, d.x - 1);
    for (int j = 0; j < k; ++j) {
        const int zi = std::clamp(z + j - (k - 1) / 2, 0, d.z - 1);
        float* dst = s.slices.plane(0, j);
        for (int r = 0; r < region.height; ++r) {
            const int yi = std::clamp(region.y0 + r, 0, d.y - 1);
            const float* row = vol.data().data() + vol.index(0, yi, zi);
            for (int i = 0; i < region.width; ++i) dst[r * region.width + i] = row[xs[i]];
        }
    }
    return s;
}

Volume merge_labels(const Volume& labels) {
    if (labels.kind() != VolumeKind::Labels) throw UsageError("merge_labels called on an intensity volume");
    Volume out = labels;
    for (float& v : out.data())
        if (v == static_cast<float>(kLesion)) v = static_cast<float>(kLiver);
    return out;
}

std::pair<int, int> liver_region_slices(const Volume& labels) {
    if (labels.kind() != VolumeKind::Labels) throw UsageError("liver_region_slices needs a label volume");
    const Dims3& d = labels.dims();
    const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
    int lo = -1;
    int hi = -1;
    for (int z = 0; z < d.z; ++z) {
        const float* p = labels.data().data() + plane * z;
        if (std::any_of(p, p + plane, [](float v) { return v >= 1.0f; })) {
            if (lo < 0) lo = z;
            hi = z;
        }
    }
    if (lo < 0) throw DataError("label volume contains no liver voxels");
    return {lo, hi};
}

// ---------------------------------------------------------------------------
// MVOL

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

template <class U>
void put_le(std::string& out, U v) {
    using Raw = std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                   std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>;
    const Raw r = std::bit_cast<Raw>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((r >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const char* p) {
    using Raw = std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                   std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>;
    Raw r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r |= static_cast<Raw>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<U>(r);
}

std::size_t scalar_bytes(ScalarType t) {
    switch (t) {
        case ScalarType::I16: return 2;
        case ScalarType::F32: return 4;
        case ScalarType::U8: return 1;
    }
    return 0;
}

}  // namespace

void save_mvol(const Volume& vol, const std::filesystem::path& path) {
    const Dims3& d = vol.dims();
    const Spacing3& s = vol.spacing();
    std::string out = "MVOL1\n";
    out += "dims " + std::to_string(d.x) + " " + std::to_string(d.y) + " " + std::to_string(d.z) + "\n";
    out += "spacing " + format_double(s.x) + " " + format_double(s.y) + " " + format_double(s.z) + "\n";
    out += "dtype " + to_string(vol.dtype()) + "\n";
    out += "kind " + to_string(vol.kind()) + "\n\n";
    out.reserve(out.size() + vol.size() * scalar_bytes(vol.dtype()));
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const float v = vol[i];
        switch (vol.dtype()) {
            case ScalarType::F32:
                put_le<float>(out, v);
                break;
            case ScalarType::I16:
                if (v != std::nearbyint(v) || v < -32768.0f || v > 32767.0f)
                    throw DataError("value " + std::to_string(v) + " at voxel " + std::to_string(i) +
                                    " is not representable as i16");
                put_le<std::int16_t>(out, static_cast<std::int16_t>(v));
                break;
            case ScalarType::U8:
                if (v != std::nearbyint(v) || v < 0.0f || v > 255.0f)
                    throw DataError("value " + std::to_string(v) + " at voxel " + std::to_string(i) +
                                    " is not representable as u8");
                put_le<std::uint8_t>(out, static_cast<std::uint8_t>(v));
                break;
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

void save_mask(const Volume& labels, const std::filesystem::path& path) {
    if (labels.kind() != VolumeKind::Labels) throw UsageError("save_mask needs a label volume");
    if (labels.dtype() == ScalarType::U8) {
        save_mvol(labels, path);
        return;
    }
    save_mvol(Volume(labels.dims(), labels.spacing(), VolumeKind::Labels, ScalarType::U8, labels.data()), path);
}

Volume load_mvol(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string file = path.string();

    std::size_t pos = 0;
    auto next_line = [&](const char* field) {
        const auto nl = data.find('\n', pos);
        if (nl == std::string::npos) throw FormatError(file + ": truncated header while reading " + field);
        std::string line = data.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    if (next_line("magic") != "MVOL1") throw FormatError(file + ": bad magic (expected MVOL1)");

    auto fields = [&](const std::string& line, const std::string& key, std::size_t n) {
        std::istringstream is(line);
        std::string k;
        is >> k;
        if (k != key) throw FormatError(file + ": expected '" + key + "' header line, got '" + line + "'");
        std::vector<std::string> v;
        std::string tok;
        while (is >> tok) v.push_back(tok);
        if (v.size() != n) throw FormatError(file + ": header field '" + key + "' needs " + std::to_string(n) + " values");
        return v;
    };
    auto to_int = [&](const std::string& s, const char* key) {
        int v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || v < 0)
            throw FormatError(file + ": bad integer '" + s + "' in field " + key);
        return v;
    };
    auto to_double = [&](const std::string& s, const char* key) {
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw FormatError(file + ": bad number '" + s + "' in field " + key);
        return v;
    };

    const auto dv = fields(next_line("dims"), "dims", 3);
    const Dims3 dims{to_int(dv[0], "dims"), to_int(dv[1], "dims"), to_int(dv[2], "dims")};
    const auto sv = fields(next_line("spacing"), "spacing", 3);
    const Spacing3 spacing{to_double(sv[0], "spacing"), to_double(sv[1], "spacing"), to_double(sv[2], "spacing")};
    const auto tv = fields(next_line("dtype"), "dtype", 1);
    ScalarType dtype;
    if (tv[0] == "i16") dtype = ScalarType::I16;
    else if (tv[0] == "f32") dtype = ScalarType::F32;
    else if (tv[0] == "u8") dtype = ScalarType::U8;
    else throw FormatError(file + ": unsupported dtype '" + tv[0] + "'");
    const auto kv = fields(next_line("kind"), "kind", 1);
    VolumeKind kind;
    if (kv[0] == "intensity") kind = VolumeKind::Intensity;
    else if (kv[0] == "labels") kind = VolumeKind::Labels;
    else throw FormatError(file + ": unsupported kind '" + kv[0] + "'");
    if (!next_line("separator").empty()) throw FormatError(file + ": expected blank line after header");

    const std::size_t n = dims.count();
    const std::size_t bytes = scalar_bytes(dtype);
    if (data.size() - pos != n * bytes)
        throw FormatError(file + ": data length " + std::to_string(data.size() - pos) + " bytes does not match header (" +
                          std::to_string(n * bytes) + " expected)");
    std::vector<float> values(n);
    const char* p = data.data() + pos;
    for (std::size_t i = 0; i < n; ++i, p += bytes) {
        switch (dtype) {
            case ScalarType::F32: values[i] = get_le<float>(p); break;
            case ScalarType::I16: values[i] = static_cast<float>(get_le<std::int16_t>(p)); break;
            case ScalarType::U8: values[i] = static_cast<float>(get_le<std::uint8_t>(p)); break;
        }
    }
    try {
        return Volume(dims, spacing, kind, dtype, std::move(values));
    } catch (const ConfigError& e) {
        throw FormatError(file + ": " + e.what());
    }
}

Volume load_volume(const std::filesystem::path& path, VolumeKind kind) {
    if (path.extension() == ".nii") return load_nifti(path, kind);
    if (path.extension() == ".gz") throw FormatError(path.string() + ": compressed NIfTI is not supported");
    Volume v = load_mvol(path);
    if (v.kind() != kind)
        throw DataError(path.string() + ": expected a " + to_string(kind) + " volume, file holds " + to_string(v.kind()));
    return v;
}

}  // namespace lsseg
