#include "lsseg/network.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace lsseg {

namespace {

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("net spec key '" + key + "': '" + item + "' is not an integer");
        }
    }
    return out;
}

int parse_int(const std::string& key, const std::string& value) {
    auto v = parse_int_list(key, value);
    if (v.size() != 1) throw ConfigError("net spec key '" + key + "' expects one integer");
    return v[0];
}

}  // namespace

void NetSpec::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid network spec: " + what); };
    if (in_slices < 1 || in_slices % 2 == 0) fail("in_slices must be a positive odd number");
    if (num_classes < 2) fail("num_classes must be at least 2");
    if (level_channels.empty()) fail("level_channels must not be empty");
    if (encoder_convs.size() != level_channels.size())
        fail("len(encoder_convs) must equal len(level_channels)");
    if (decoder_convs.size() + 1 != level_channels.size())
        fail("len(decoder_convs) must equal len(level_channels) - 1");
    for (int c : level_channels)
        if (c < 1) fail("level_channels entries must be positive");
    for (int e : encoder_convs)
        if (e < 1) fail("encoder_convs entries must be at least 1");
    for (int d : decoder_convs)
        if (d < 1) fail("decoder_convs entries must be at least 1");
    if (levels() > 12) fail("at most 12 levels are supported");
    if (crop_train < 1 || crop_train % size_multiple() != 0)
        fail("crop_train " + std::to_string(crop_train) + " must be divisible by " +
             std::to_string(size_multiple()));
}

std::string NetSpec::serialize() const {
    std::ostringstream os;
    os << "in_slices=" << in_slices << "\n"
       << "num_classes=" << num_classes << "\n"
       << "level_channels=" << join(level_channels) << "\n"
       << "encoder_convs=" << join(encoder_convs) << "\n"
       << "decoder_convs=" << join(decoder_convs) << "\n"
       << "downsample=strided_conv\n"
       << "crop_train=" << crop_train << "\n";
    return os.str();
}

NetSpec NetSpec::parse(const std::string& text) {
    NetSpec s;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("net spec line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "in_slices") s.in_slices = parse_int(key, value);
        else if (key == "num_classes") s.num_classes = parse_int(key, value);
        else if (key == "level_channels") s.level_channels = parse_int_list(key, value);
        else if (key == "encoder_convs") s.encoder_convs = parse_int_list(key, value);
        else if (key == "decoder_convs") s.decoder_convs = parse_int_list(key, value);
        else if (key == "crop_train") s.crop_train = parse_int(key, value);
        else if (key == "downsample") {
            if (value != "strided_conv")
                throw ConfigError("net spec downsample '" + value + "' unsupported (only strided_conv)");
        } else {
            throw ConfigError("unknown net spec key '" + key + "'");
        }
    }
    return s;
}

int weighted_layer_count(const NetSpec& spec) {
    spec.validate();
    const int enc = std::accumulate(spec.encoder_convs.begin(), spec.encoder_convs.end(), 0);
    const int dec = std::accumulate(spec.decoder_convs.begin(), spec.decoder_convs.end(), 0);
    const int transitions = spec.levels() - 1;
    return enc + transitions + dec + transitions + 1;
}

std::size_t parameter_count(const NetSpec& spec) {
    std::size_t total = 0;
    for (const auto& u : Network<float>::build(spec, 0).units()) {
        total += u.weight.value.size() + u.bias.value.size();
        if (u.normalized()) total += u.gamma.value.size() + u.beta.value.size() + u.slope.value.size();
    }
    return total;
}

// ---------------------------------------------------------------------------

template <class T>
Network<T> Network<T>::build(const NetSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net;
    net.spec_ = spec;
    std::mt19937_64 rng(seed);
    const double a = ops::kPreluInitialSlope;

    auto add = [&](std::string name, UnitKind kind, int ci, int co) {
        ConvUnit<T> u;
        u.name = std::move(name);
        u.kind = kind;
        u.in_channels = ci;
        u.out_channels = co;
        const bool up = kind == UnitKind::Up;
        const Shape4 ws = up ? Shape4{ci, co, 2, 2} : Shape4{co, ci, 3, 3};
        const double fan_in = up ? ci : ci * 9.0;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / ((1.0 + a * a) * fan_in)));
        Tensor<T> w(ws);
        for (auto& v : w.data()) v = static_cast<T>(dist(rng));
        u.weight = Param<T>(std::move(w));
        u.bias = Param<T>(Tensor<T>({co, 1, 1, 1}));
        if (kind != UnitKind::Head) {
            u.gamma = Param<T>(Tensor<T>({co, 1, 1, 1}, T(1)));
            u.beta = Param<T>(Tensor<T>({co, 1, 1, 1}));
            u.slope = Param<T>(Tensor<T>({co, 1, 1, 1}, static_cast<T>(a)));
            u.stats = ops::BatchNormStats<T>::initial(co);
        }
        net.units_.push_back(std::move(u));
        return static_cast<int>(net.units_.size()) - 1;
    };

    const int L = spec.levels();
    const auto& ch = spec.level_channels;
    net.down_.assign(L, -1);
    net.enc_block_.assign(L, {});
    for (int l = 0; l < L; ++l) {
        const std::string p = "enc" + std::to_string(l) + ".";
        int first_block_conv = 0;
        if (l == 0) {
            net.first_ = add(p + "conv0", UnitKind::Conv, spec.in_slices, ch[0]);
            first_block_conv = 1;
        } else {
            net.down_[l] = add(p + "down", UnitKind::Down, ch[l - 1], ch[l]);
        }
        for (int k = first_block_conv; k < spec.encoder_convs[l]; ++k)
            net.enc_block_[l].push_back(add(p + "conv" + std::to_string(k), UnitKind::Conv, ch[l], ch[l]));
    }
    net.up_.assign(L - 1, -1);
    net.dec_block_.assign(L - 1, {});
    for (int l = L - 2; l >= 0; --l) {
        const std::string p = "dec" + std::to_string(l) + ".";
        net.up_[l] = add(p + "up", UnitKind::Up, ch[l + 1], ch[l]);
        for (int k = 0; k < spec.decoder_convs[l]; ++k)
            net.dec_block_[l].push_back(
                add(p + "conv" + std::to_string(k), UnitKind::Conv, k == 0 ? 2 * ch[l] : ch[l], ch[l]));
    }
    net.head_ = add("head", UnitKind::Head, ch[0], spec.num_classes);
    return net;
}

template <class T>
void Network<T>::check_input(const Tensor<T>& input) const {
    if (input.c() != spec_.in_slices)
        throw ShapeError("network expects " + std::to_string(spec_.in_slices) + " input slices, got " +
                         to_string(input.shape()));
    const int m = spec_.size_multiple();
    if (input.h() % m != 0 || input.w() % m != 0 || input.h() == 0 || input.w() == 0) {
        auto nearest = [m](int v) { return std::max(m, (v + m / 2) / m * m); };
        throw ShapeError("network input " + to_string(input.shape()) + " must have spatial dims divisible by " +
                         std::to_string(m) + "; nearest valid size is " + std::to_string(nearest(input.h())) +
                         "x" + std::to_string(nearest(input.w())));
    }
}

template <class T>
Tensor<T> Network<T>::unit_forward(int id, const Tensor<T>& x, ops::Mode mode, ActivationCache<T>* cache) {
    ConvUnit<T>& u = units_[id];
    UnitCache<T>* c = cache ? &cache->units[id] : nullptr;
    const std::span<const T> bias = u.bias.value.data();
    Tensor<T> y;
    switch (u.kind) {
        case UnitKind::Conv:
        case UnitKind::Head:
            y = ops::conv2d_forward(x, u.weight.value, bias, 1, 1, c ? &c->conv : nullptr);
            break;
        case UnitKind::Down:
            y = ops::conv2d_forward(x, u.weight.value, bias, 2, 1, c ? &c->conv : nullptr);
            break;
        case UnitKind::Up:
            y = ops::transposed_conv2d_forward(x, u.weight.value, bias, 2, c ? &c->up : nullptr);
            break;
    }
    if (!u.normalized()) return y;
    if (mode == ops::Mode::Train)
        y = ops::batchnorm_forward_train<T>(y, u.gamma.value.data(), u.beta.value.data(), u.stats,
                                            ops::kBatchNormMomentum, ops::kBatchNormEpsilon,
                                            c ? &c->bn : nullptr);
    else
        y = ops::batchnorm_forward_eval<T>(y, u.gamma.value.data(), u.beta.value.data(), u.stats);
    return ops::prelu_forward<T>(y, u.slope.value.data(), c ? &c->prelu : nullptr);
}

template <class T>
Tensor<T> Network<T>::run(const Tensor<T>& input, ops::Mode mode, ActivationCache<T>* cache,
                          std::vector<Tensor<T>>* features) {
    check_input(input);
    if (mode != ops::Mode::Train) cache = nullptr;
    if (cache) {
        cache->units.assign(units_.size(), UnitCache<T>{});
        cache->owner = this;
        cache->version = version_;
        cache->valid = false;
    }
    const int L = spec_.levels();
    std::vector<Tensor<T>> enc(L);
    for (int l = 0; l < L; ++l) {
        Tensor<T> h = l == 0 ? unit_forward(first_, input, mode, cache)
                             : unit_forward(down_[l], enc[l - 1], mode, cache);
        if (!enc_block_[l].empty()) {
            Tensor<T> b = h;
            for (int id : enc_block_[l]) b = unit_forward(id, b, mode, cache);
            h = ops::add_elementwise(h, b);
        }
        enc[l] = std::move(h);
    }
    if (features) {
        *features = enc;
        return {};
    }
    Tensor<T> d = enc[L - 1];
    for (int l = L - 2; l >= 0; --l) {
        Tensor<T> u = unit_forward(up_[l], d, mode, cache);
        Tensor<T> b = ops::concat_channels(u, enc[l]);
        for (int id : dec_block_[l]) b = unit_forward(id, b, mode, cache);
        d = ops::add_elementwise(u, b);
    }
    Tensor<T> logits = unit_forward(head_, d, mode, cache);
    if (cache) cache->valid = true;
    return logits;
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& input) const {
    // Eval mode reads parameters and running statistics only.
    return const_cast<Network*>(this)->run(input, ops::Mode::Eval, nullptr, nullptr);
}

template <class T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, ops::Mode mode, ActivationCache<T>* cache) {
    return run(input, mode, cache, nullptr);
}

template <class T>
std::vector<Tensor<T>> Network<T>::encoder_features(const Tensor<T>& input) const {
    std::vector<Tensor<T>> f;
    const_cast<Network*>(this)->run(input, ops::Mode::Eval, nullptr, &f);
    return f;
}

namespace {

template <class T>
void accumulate(Tensor<T>& dst, std::span<const T> src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <class T>
void accumulate(Tensor<T>& dst, const std::vector<T>& src) {
    accumulate(dst, std::span<const T>(src));
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <class T>
Tensor<T> Network<T>::unit_backward(int id, UnitCache<T>& c, const Tensor<T>& grad, bool need_input_grad) {
    ConvUnit<T>& u = units_[id];
    Tensor<T> g = grad;
    if (u.normalized()) {
        auto pg = ops::prelu_backward(c.prelu, g);
        accumulate(u.slope.grad, pg.slope);
        auto bg = ops::batchnorm_backward(c.bn, pg.input);
        accumulate(u.gamma.grad, bg.gamma);
        accumulate(u.beta.grad, bg.beta);
        g = std::move(bg.input);
    }
    ops::ConvGrads<T> cg = u.kind == UnitKind::Up ? ops::transposed_conv2d_backward(c.up, g)
                                                  : ops::conv2d_backward(c.conv, g, need_input_grad);
    accumulate(u.weight.grad, std::span<const T>(cg.weight.data()));
    accumulate(u.bias.grad, cg.bias);
    c = UnitCache<T>{};
    return std::move(cg.input);
}

template <class T>
void Network<T>::backward(ActivationCache<T>& cache, const Tensor<T>& grad_logits) {
    if (!cache.valid || cache.owner != this || cache.units.size() != units_.size())
        throw UsageError("backward needs a cache from a train-mode forward of this network");
    if (cache.version != version_)
        throw UsageError("stale activation cache: parameters changed since the forward pass");
    const int L = spec_.levels();
    cache.valid = false;

    Tensor<T> gd = unit_backward(head_, cache.units[head_], grad_logits, true);
    std::vector<Tensor<T>> enc_grad(L);
    for (int l = 0; l <= L - 2; ++l) {
        Tensor<T> gu = gd;
        Tensor<T> gb = gd;
        const auto& block = dec_block_[l];
        for (auto it = block.rbegin(); it != block.rend(); ++it)
            gb = unit_backward(*it, cache.units[*it], gb, true);
        auto [gu2, genc] = ops::split_channels(gb, spec_.level_channels[l]);
        add_into(gu, gu2);
        add_into(enc_grad[l], genc);
        gd = unit_backward(up_[l], cache.units[up_[l]], gu, true);
    }
    add_into(enc_grad[L - 1], gd);
    for (int l = L - 1; l >= 0; --l) {
        Tensor<T> g = std::move(enc_grad[l]);
        const auto& block = enc_block_[l];
        if (!block.empty()) {
            Tensor<T> gb = g;
            for (auto it = block.rbegin(); it != block.rend(); ++it)
                gb = unit_backward(*it, cache.units[*it], gb, true);
            add_into(g, gb);
        }
        if (l == 0) {
            unit_backward(first_, cache.units[first_], g, false);
        } else {
            add_into(enc_grad[l - 1], unit_backward(down_[l], cache.units[down_[l]], g, true));
        }
    }
    cache.units.clear();
}

template <class T>
std::vector<NamedParam<T>> Network<T>::parameters() {
    std::vector<NamedParam<T>> out;
    for (auto& u : units_) {
        out.push_back({u.name + ".weight", &u.weight, 4});
        out.push_back({u.name + ".bias", &u.bias, 1});
        if (u.normalized()) {
            out.push_back({u.name + ".bn.gamma", &u.gamma, 1});
            out.push_back({u.name + ".bn.beta", &u.beta, 1});
            out.push_back({u.name + ".prelu.slope", &u.slope, 1});
        }
    }
    return out;
}

template <class T>
std::vector<NamedStats<T>> Network<T>::running_stats() {
    std::vector<NamedStats<T>> out;
    for (auto& u : units_) {
        if (!u.normalized()) continue;
        out.push_back({u.name + ".bn.running_mean", &u.stats.mean});
        out.push_back({u.name + ".bn.running_var", &u.stats.var});
    }
    return out;
}

template <class T>
void Network<T>::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

template <class T>
template <class U>
Network<U> Network<T>::cast() const {
    Network<U> out;
    out.spec_ = spec_;
    out.first_ = first_;
    out.down_ = down_;
    out.enc_block_ = enc_block_;
    out.up_ = up_;
    out.dec_block_ = dec_block_;
    out.head_ = head_;
    for (const auto& u : units_) {
        ConvUnit<U> v;
        v.name = u.name;
        v.kind = u.kind;
        v.in_channels = u.in_channels;
        v.out_channels = u.out_channels;
        v.weight = Param<U>(u.weight.value.template cast<U>());
        v.bias = Param<U>(u.bias.value.template cast<U>());
        if (u.normalized()) {
            v.gamma = Param<U>(u.gamma.value.template cast<U>());
            v.beta = Param<U>(u.beta.value.template cast<U>());
            v.slope = Param<U>(u.slope.value.template cast<U>());
            v.stats.mean.assign(u.stats.mean.begin(), u.stats.mean.end());
            v.stats.var.assign(u.stats.var.begin(), u.stats.var.end());
        }
        out.units_.push_back(std::move(v));
    }
    return out;
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;

}  // namespace lsseg
