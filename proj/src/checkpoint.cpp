#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "lsseg/network.hpp"

namespace lsseg {

namespace {

constexpr const char* kSpecEntry = "__spec__";
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint8_t kDtypeBytes = 2;

class Writer {
public:
    template <class U>
    void put(U v) {
        using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                       std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                          std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
        const Raw r = std::bit_cast<Raw>(v);
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((r >> (8 * i)) & 0xFF));
    }
    void bytes(const std::string& s) { buf_ += s; }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string data, std::string file) : data_(std::move(data)), file_(std::move(file)) {}

    template <class U>
    U get() {
        need(sizeof(U));
        using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                       std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                          std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
        Raw r = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            r |= static_cast<Raw>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return std::bit_cast<U>(r);
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool at_end() const { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& what, std::size_t offset) const {
        throw FormatError(file_ + ": " + what + " at byte offset " + std::to_string(offset));
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            fail("truncated checkpoint (needed " + std::to_string(n) + " more bytes)", pos_);
    }

    std::string data_;
    std::string file_;
    std::size_t pos_ = 0;
};

template <class T>
constexpr std::uint8_t dtype_code() {
    return sizeof(T) == 4 ? kDtypeF32 : kDtypeF64;
}

}  // namespace

template <class T>
void save_checkpoint(const Network<T>& net_const, const std::filesystem::path& path) {
    auto& net = const_cast<Network<T>&>(net_const);  // parameters() hands out mutable views only
    auto params = net.parameters();
    auto stats = net.running_stats();

    Writer w;
    w.bytes(std::string(kCheckpointMagic, 6));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(1 + params.size() + stats.size()));

    auto header = [&](const std::string& name, std::uint8_t dtype, const std::vector<std::uint32_t>& dims) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.put<std::uint8_t>(dtype);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
        for (auto d : dims) w.put<std::uint32_t>(d);
    };

    const std::string spec = net.spec().serialize();
    header(kSpecEntry, kDtypeBytes, {static_cast<std::uint32_t>(spec.size())});
    w.bytes(spec);

    for (const auto& p : params) {
        const Shape4& s = p.param->value.shape();
        std::vector<std::uint32_t> dims;
        if (p.rank == 4)
            dims = {std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.h), std::uint32_t(s.w)};
        else
            dims = {static_cast<std::uint32_t>(p.param->value.size())};
        header(p.name, dtype_code<T>(), dims);
        for (T v : p.param->value.data()) w.put<T>(v);
    }
    for (const auto& s : stats) {
        header(s.name, dtype_code<T>(), {static_cast<std::uint32_t>(s.values->size())});
        for (T v : *s.values) w.put<T>(v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data), path.string());

    if (r.bytes(6) != std::string(kCheckpointMagic, 6)) r.fail("bad magic (expected LSNET1)", 0);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        r.fail("unsupported checkpoint version " + std::to_string(version), 6);
    const auto count = r.get<std::uint32_t>();
    std::vector<CheckpointEntry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t start = r.pos();
        CheckpointEntry e;
        const auto len = r.get<std::uint16_t>();
        e.name = r.bytes(len);
        e.dtype = r.get<std::uint8_t>();
        const auto ndim = r.get<std::uint8_t>();
        std::uint64_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            e.dims.push_back(r.get<std::uint32_t>());
            numel *= e.dims.back();
        }
        switch (e.dtype) {
            case kDtypeF32:
                e.values.reserve(numel);
                for (std::uint64_t k = 0; k < numel; ++k) e.values.push_back(r.get<float>());
                break;
            case kDtypeF64:
                e.values.reserve(numel);
                for (std::uint64_t k = 0; k < numel; ++k) e.values.push_back(r.get<double>());
                break;
            case kDtypeBytes:
                e.bytes = r.bytes(numel);
                break;
            default:
                r.fail("unknown dtype code " + std::to_string(e.dtype) + " for '" + e.name + "'", start);
        }
        entries.push_back(std::move(e));
    }
    if (!r.at_end()) r.fail("unexpected trailing data", r.pos());
    return entries;
}

template <class T>
Network<T> load_checkpoint(const std::filesystem::path& path) {
    auto entries = read_checkpoint_entries(path);
    const std::string file = path.string();
    if (entries.empty() || entries.front().name != kSpecEntry || entries.front().dtype != kDtypeBytes)
        throw FormatError(file + ": missing leading network spec entry at byte offset 14");
    NetSpec spec;
    try {
        spec = NetSpec::parse(entries.front().bytes);
        spec.validate();
    } catch (const ConfigError& e) {
        throw FormatError(file + ": invalid network spec: " + e.what());
    }
    Network<T> net = Network<T>::build(spec, 0);

    std::map<std::string, const CheckpointEntry*> by_name;
    for (std::size_t i = 1; i < entries.size(); ++i)
        if (!by_name.emplace(entries[i].name, &entries[i]).second)
            throw FormatError(file + ": duplicate tensor '" + entries[i].name + "'");

    std::set<std::string> used;
    auto take = [&](const std::string& name, std::size_t expected) -> const CheckpointEntry& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError(file + ": missing tensor '" + name + "'");
        const CheckpointEntry& e = *it->second;
        if (e.dtype == kDtypeBytes || e.values.size() != expected)
            throw FormatError(file + ": tensor '" + name + "' has " + std::to_string(e.values.size()) +
                              " values, expected " + std::to_string(expected));
        used.insert(name);
        return e;
    };
    for (auto& p : net.parameters()) {
        const auto& e = take(p.name, p.param->value.size());
        for (std::size_t i = 0; i < e.values.size(); ++i) p.param->value[i] = static_cast<T>(e.values[i]);
    }
    for (auto& s : net.running_stats()) {
        const auto& e = take(s.name, s.values->size());
        for (std::size_t i = 0; i < e.values.size(); ++i) (*s.values)[i] = static_cast<T>(e.values[i]);
    }
    if (used.size() != by_name.size())
        for (const auto& [name, _] : by_name)
            if (!used.count(name)) throw FormatError(file + ": unexpected tensor '" + name + "'");
    return net;
}

template void save_checkpoint(const Network<float>&, const std::filesystem::path&);
template void save_checkpoint(const Network<double>&, const std::filesystem::path&);
template Network<float> load_checkpoint(const std::filesystem::path&);
template Network<double> load_checkpoint(const std::filesystem::path&);

}  // namespace lsseg
