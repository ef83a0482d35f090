#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lsseg/volume.hpp"

namespace lsseg {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

std::string datatype_name(int code) {
    switch (code) {
        case 2: return "uint8";
        case 4: return "int16";
        case 8: return "int32";
        case 16: return "float32";
        case 64: return "float64";
        case 256: return "int8";
        case 512: return "uint16";
        case 768: return "uint32";
        default: return "code " + std::to_string(code);
    }
}

template <class U>
U byte_swap(U v) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = static_cast<U>((r << 8) | ((v >> (8 * i)) & 0xFF));
    return r;
}

class HeaderView {
public:
    HeaderView(const std::string& data, bool swap) : d_(data), swap_(swap) {}

    template <class U>
    U get(std::size_t off) const {
        using Raw = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint16_t>;
        Raw r;
        std::memcpy(&r, d_.data() + off, sizeof(Raw));
        if (swap_) r = byte_swap(r);
        return std::bit_cast<U>(r);
    }

private:
    const std::string& d_;
    bool swap_;
};

}  // namespace

Volume load_nifti(const std::filesystem::path& path, VolumeKind kind) {
    const std::string file = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + file);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (data.size() >= 2 && static_cast<unsigned char>(data[0]) == 0x1f && static_cast<unsigned char>(data[1]) == 0x8b)
        throw FormatError(file + ": unsupported compression (gzip); only uncompressed NIfTI-1 is read");
    if (data.size() < kHeaderSize) throw FormatError(file + ": file shorter than a NIfTI-1 header");

    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, data.data(), 4);
    bool swap = false;
    if (sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
        if (static_cast<std::int32_t>(byte_swap(static_cast<std::uint32_t>(sizeof_hdr))) != static_cast<std::int32_t>(kHeaderSize))
            throw FormatError(file + ": bad sizeof_hdr field (not a NIfTI-1 file)");
        swap = true;
    }
    const HeaderView h(data, swap);

    if (std::memcmp(data.data() + 344, "n+1\0", 4) != 0)
        throw FormatError(file + ": bad magic field (expected single-file NIfTI-1 'n+1')");

    const int ndim = h.get<std::int16_t>(40);
    if (ndim < 1 || ndim > 7) throw FormatError(file + ": invalid dim[0] field " + std::to_string(ndim));
    int dim[8] = {0, 1, 1, 1, 1, 1, 1, 1};
    for (int i = 1; i <= ndim; ++i) {
        dim[i] = h.get<std::int16_t>(40 + 2 * i);
        if (dim[i] < 1) throw FormatError(file + ": invalid dim[" + std::to_string(i) + "] field");
    }
    for (int i = 4; i <= ndim; ++i)
        if (dim[i] != 1) throw FormatError(file + ": dim field describes more than three dimensions");

    const int datatype = h.get<std::int16_t>(70);
    if (datatype != kDtInt16 && datatype != kDtFloat32)
        throw FormatError(file + ": unsupported datatype " + datatype_name(datatype) +
                          " (datatype field; int16 and float32 are supported)");

    Spacing3 spacing;
    const float px = h.get<float>(80);
    const float py = h.get<float>(84);
    const float pz = h.get<float>(88);
    spacing.x = ndim >= 1 ? std::fabs(px) : 1.0;
    spacing.y = ndim >= 2 ? std::fabs(py) : 1.0;
    spacing.z = ndim >= 3 ? std::fabs(pz) : 1.0;
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
        throw FormatError(file + ": pixdim field holds a non-positive voxel spacing");

    const float vox_offset = h.get<float>(108);
    if (!(vox_offset >= static_cast<float>(kHeaderSize)) || vox_offset != std::floor(vox_offset))
        throw FormatError(file + ": invalid vox_offset field");
    const auto offset = static_cast<std::size_t>(vox_offset);
    if (offset > kHeaderSize) {
        // 4-byte extender; a non-zero first byte announces header extensions
        if (data.size() >= kHeaderSize + 4 && data[kHeaderSize] != 0)
            throw FormatError(file + ": header extensions are not supported (extension field)");
    }

    float slope = h.get<float>(112);
    const float inter = h.get<float>(116);
    if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

    const Dims3 dims{dim[1], dim[2], dim[3]};
    const std::size_t n = dims.count();
    const std::size_t bytes = datatype == kDtInt16 ? 2 : 4;
    if (offset > data.size() || data.size() - offset != n * bytes)
        throw FormatError(file + ": data length " + std::to_string(data.size() > offset ? data.size() - offset : 0) +
                          " bytes does not match header (" + std::to_string(n * bytes) + " expected)");

    std::vector<float> values(n);
    const bool scaled = slope != 1.0f || inter != 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        float v;
        if (datatype == kDtInt16) v = static_cast<float>(h.get<std::int16_t>(offset + 2 * i));
        else v = h.get<float>(offset + 4 * i);
        values[i] = scaled ? v * slope + inter : v;
    }
    ScalarType dtype = datatype == kDtInt16 && !scaled ? ScalarType::I16 : ScalarType::F32;
    if (kind == VolumeKind::Labels) dtype = ScalarType::U8;
    return Volume(dims, spacing, kind, dtype, std::move(values));
}

}  // namespace lsseg
