#include "lsseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace lsseg {

void RunConfig::validate() const {
    NetSpec probe = net;
    probe.crop_train = train.crop;
    probe.validate();
    train.validate();
    if (class_weights) {
        for (double w : class_weights->values())
            if (!(w > 0)) throw ConfigError("train.class_weights entries must be > 0");
    }
    cascade.validate();
    phantom.validate();
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (cascade.window % net.size_multiple() != 0)
        throw ConfigError("cascade.window must be a multiple of " + std::to_string(net.size_multiple()));
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

class ValueError : public std::exception {};

template <class N>
N number(const std::string& s) {
    N v{};
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e || s.empty()) throw ValueError();
    return v;
}

template <class N>
std::vector<N> numbers(const std::string& s, std::size_t expected = 0) {
    std::vector<N> out;
    for (const auto& item : split_list(s)) out.push_back(number<N>(item));
    if (out.empty() || (expected && out.size() != expected)) throw ValueError();
    return out;
}

bool boolean(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValueError();
}

std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

template <class N>
std::string fmt_list(const std::vector<N>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_floating_point_v<N>) s += fmt(v[i]);
        else s += std::to_string(v[i]);
    }
    return s;
}

struct Key {
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

Spacing3 spacing3(const std::string& s) {
    const auto v = numbers<double>(s, 3);
    return {v[0], v[1], v[2]};
}
Range range(const std::string& s) {
    const auto v = numbers<double>(s, 2);
    return {v[0], v[1]};
}
std::string fmt3(const Spacing3& s) { return fmt(s.x) + "," + fmt(s.y) + "," + fmt(s.z); }
std::string fmt_range(const Range& r) { return fmt(r.lo) + "," + fmt(r.hi); }

const std::vector<Key>& keys() {
    static const std::vector<Key> k = {
        {"net.in_slices", [](RunConfig& c, const std::string& v) { c.net.in_slices = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.net.in_slices); }},
        {"net.level_channels", [](RunConfig& c, const std::string& v) { c.net.level_channels = numbers<int>(v); },
         [](const RunConfig& c) { return fmt_list(c.net.level_channels); }},
        {"net.encoder_convs", [](RunConfig& c, const std::string& v) { c.net.encoder_convs = numbers<int>(v); },
         [](const RunConfig& c) { return fmt_list(c.net.encoder_convs); }},
        {"net.decoder_convs", [](RunConfig& c, const std::string& v) { c.net.decoder_convs = numbers<int>(v); },
         [](const RunConfig& c) { return fmt_list(c.net.decoder_convs); }},
        {"net.seed", [](RunConfig& c, const std::string& v) { c.net_seed = number<std::uint64_t>(v); },
         [](const RunConfig& c) { return std::to_string(c.net_seed); }},

        {"train.lr0", [](RunConfig& c, const std::string& v) { c.train.lr0 = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.train.lr0); }},
        {"train.lr_gamma", [](RunConfig& c, const std::string& v) { c.train.lr_gamma = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.train.lr_gamma); }},
        {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
        {"train.weight_decay", [](RunConfig& c, const std::string& v) { c.train.weight_decay = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.train.weight_decay); }},
        {"train.momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.train.momentum); }},
        {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
        {"train.crop", [](RunConfig& c, const std::string& v) { c.train.crop = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.crop); }},
        {"train.flip_prob", [](RunConfig& c, const std::string& v) { c.train.flip_prob = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.train.flip_prob); }},
        {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = number<std::uint64_t>(v); },
         [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        {"train.class_weights",
         [](RunConfig& c, const std::string& v) {
             if (v == "auto") c.class_weights.reset();
             else c.class_weights = ClassWeights(numbers<double>(v));
         },
         [](const RunConfig& c) { return c.class_weights ? fmt_list(c.class_weights->values()) : std::string("auto"); }},

        {"cascade.coarse_spacing", [](RunConfig& c, const std::string& v) { c.cascade.coarse_spacing = spacing3(v); },
         [](const RunConfig& c) { return fmt3(c.cascade.coarse_spacing); }},
        {"cascade.window", [](RunConfig& c, const std::string& v) { c.cascade.window = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.cascade.window); }},
        {"cascade.window_overlap", [](RunConfig& c, const std::string& v) { c.cascade.window_overlap = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.cascade.window_overlap); }},
        {"cascade.roi_margin_mm", [](RunConfig& c, const std::string& v) { c.cascade.roi_margin_mm = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.cascade.roi_margin_mm); }},
        {"cascade.lesion_prob_threshold",
         [](RunConfig& c, const std::string& v) { c.cascade.lesion_prob_threshold = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.cascade.lesion_prob_threshold); }},
        {"cascade.connectivity", [](RunConfig& c, const std::string& v) { c.cascade.connectivity = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.cascade.connectivity); }},

        {"phantom.dims",
         [](RunConfig& c, const std::string& v) {
             const auto d = numbers<int>(v, 3);
             c.phantom.dims = {d[0], d[1], d[2]};
         },
         [](const RunConfig& c) {
             return std::to_string(c.phantom.dims.x) + "," + std::to_string(c.phantom.dims.y) + "," +
                    std::to_string(c.phantom.dims.z);
         }},
        {"phantom.spacing", [](RunConfig& c, const std::string& v) { c.phantom.spacing = spacing3(v); },
         [](const RunConfig& c) { return fmt3(c.phantom.spacing); }},
        {"phantom.liver_semi_axis_x_mm",
         [](RunConfig& c, const std::string& v) { c.phantom.liver_semi_axis_x_mm = range(v); },
         [](const RunConfig& c) { return fmt_range(c.phantom.liver_semi_axis_x_mm); }},
        {"phantom.liver_semi_axis_y_mm",
         [](RunConfig& c, const std::string& v) { c.phantom.liver_semi_axis_y_mm = range(v); },
         [](const RunConfig& c) { return fmt_range(c.phantom.liver_semi_axis_y_mm); }},
        {"phantom.liver_semi_axis_z_mm",
         [](RunConfig& c, const std::string& v) { c.phantom.liver_semi_axis_z_mm = range(v); },
         [](const RunConfig& c) { return fmt_range(c.phantom.liver_semi_axis_z_mm); }},
        {"phantom.center_jitter_mm",
         [](RunConfig& c, const std::string& v) { c.phantom.center_jitter_mm = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.phantom.center_jitter_mm); }},
        {"phantom.lesion_count",
         [](RunConfig& c, const std::string& v) {
             const auto n = numbers<int>(v, 2);
             c.phantom.lesion_count_min = n[0];
             c.phantom.lesion_count_max = n[1];
         },
         [](const RunConfig& c) {
             return std::to_string(c.phantom.lesion_count_min) + "," + std::to_string(c.phantom.lesion_count_max);
         }},
        {"phantom.lesion_radius_mm", [](RunConfig& c, const std::string& v) { c.phantom.lesion_radius_mm = range(v); },
         [](const RunConfig& c) { return fmt_range(c.phantom.lesion_radius_mm); }},
        {"phantom.background_hu", [](RunConfig& c, const std::string& v) { c.phantom.background_hu = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.phantom.background_hu); }},
        {"phantom.liver_hu", [](RunConfig& c, const std::string& v) { c.phantom.liver_hu = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.phantom.liver_hu); }},
        {"phantom.lesion_hu", [](RunConfig& c, const std::string& v) { c.phantom.lesion_hu = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.phantom.lesion_hu); }},
        {"phantom.noise_sigma", [](RunConfig& c, const std::string& v) { c.phantom.noise_sigma = number<double>(v); },
         [](const RunConfig& c) { return fmt(c.phantom.noise_sigma); }},

        {"threads", [](RunConfig& c, const std::string& v) { c.threads = number<int>(v); },
         [](const RunConfig& c) { return std::to_string(c.threads); }},
        {"emit_probs", [](RunConfig& c, const std::string& v) { c.emit_probs = boolean(v); },
         [](const RunConfig& c) { return std::string(c.emit_probs ? "true" : "false"); }},
    };
    return k;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    std::map<std::string, const Key*> by_name;
    for (const auto& k : keys()) by_name[k.name] = &k;

    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = by_name.find(key);
        if (it == by_name.end()) throw ConfigError(where + ": unknown config key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' given twice");
        try {
            it->second->set(cfg, value);
        } catch (const ValueError&) {
            throw ConfigError(where + ": invalid value '" + value + "' for key '" + key + "'");
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": key '" + key + "': " + e.what());
        }
    }
    cfg.net.crop_train = cfg.train.crop;
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string());
}

std::string format_run_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& k : keys()) {
        const auto dot = k.name.find('.');
        const std::string s = dot == std::string::npos ? "" : k.name.substr(0, dot);
        if (s != section && !out.empty()) out += "\n";
        section = s;
        out += k.name + " = " + k.get(cfg) + "\n";
    }
    return out;
}

}  // namespace lsseg
