#include "lsseg/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "lsseg/cascade.hpp"
#include "lsseg/config.hpp"
#include "lsseg/metrics.hpp"
#include "lsseg/parallel.hpp"
#include "lsseg/trainer.hpp"

namespace fs = std::filesystem;

namespace lsseg {

std::string case_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%04d", index);
    return buf;
}

std::uint64_t case_seed(std::uint64_t seed, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

namespace {

constexpr const char* kManifest = "manifest.txt";

RunConfig config_from(const std::string& path) {
    if (path.empty()) {
        RunConfig cfg;
        cfg.net.crop_train = cfg.train.crop;
        return cfg;
    }
    if (!fs::is_regular_file(path)) throw IoError("config file not found: " + path);
    return load_run_config(path);
}

void apply_threads(const RunConfig& cfg) {
    int n = cfg.threads;
    if (n == 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    set_num_threads(n);
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) throw IoError(std::string(what) + " directory not found: " + path);
}

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path);
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void require_parent_dir(const fs::path& file) {
    const fs::path parent = file.parent_path().empty() ? fs::path(".") : file.parent_path();
    if (!fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
}

/// Moves finished temporary files into place; outputs appear only once all
/// of them have been written.
class StagedFiles {
public:
    ~StagedFiles() {
        for (const auto& [tmp, dst] : files_) {
            std::error_code ec;
            fs::remove(tmp, ec);
        }
    }
    fs::path stage(const fs::path& dst) {
        fs::path tmp = dst;
        tmp += ".partial";
        files_.emplace_back(tmp, dst);
        return tmp;
    }
    void commit() {
        for (const auto& [tmp, dst] : files_) {
            std::error_code ec;
            fs::rename(tmp, dst, ec);
            if (ec) throw IoError("cannot move " + tmp.string() + " to " + dst.string() + ": " + ec.message());
        }
        files_.clear();
    }

private:
    std::vector<std::pair<fs::path, fs::path>> files_;
};

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Files named <case><suffix><ext> in `dir`, keyed by case name.
std::map<std::string, fs::path> find_cases(const fs::path& dir, const std::string& suffix,
                                           const std::vector<std::string>& exts) {
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        for (const auto& ext : exts) {
            const std::string tail = suffix + ext;
            if (has_suffix(name, tail) && name.size() > tail.size()) {
                const std::string key = name.substr(0, name.size() - tail.size());
                if (out.count(key)) throw DataError("case " + key + " has more than one " + suffix + " file in " + dir.string());
                out[key] = entry.path();
            }
        }
    }
    return out;
}

std::string join(const std::vector<std::string>& names) {
    std::string s;
    for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
    return s;
}

/// Input stem: file name without extension and without a trailing "_img".
std::string volume_stem(const fs::path& p) {
    std::string s = p.filename().string();
    for (const char* ext : {".mvol", ".nii"})
        if (has_suffix(s, ext)) {
            s.resize(s.size() - std::string(ext).size());
            break;
        }
    if (has_suffix(s, "_img") && s.size() > 4) s.resize(s.size() - 4);
    return s;
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
    std::string out;
    int count = 1;
    std::uint64_t seed = 0;
    std::string config;
};

void cmd_phantom(const PhantomArgs& a, std::ostream& out) {
    if (a.count < 0) throw UsageError("--count must be >= 0");
    const RunConfig cfg = config_from(a.config);
    make_dir(a.out);

    StagedFiles staged;
    std::ostringstream manifest;
    manifest << "# case image labels seed\n";
    for (int i = 1; i <= a.count; ++i) {
        const std::string name = case_name(i);
        const std::uint64_t seed = case_seed(a.seed, i);
        const Phantom p = generate_phantom(seed, cfg.phantom);
        const std::string img = name + "_img.mvol";
        const std::string lab = name + "_lab.mvol";
        save_mvol(p.image, staged.stage(fs::path(a.out) / img));
        save_mvol(p.labels, staged.stage(fs::path(a.out) / lab));
        manifest << name << ' ' << img << ' ' << lab << ' ' << seed << '\n';
    }
    const fs::path mpath = staged.stage(fs::path(a.out) / kManifest);
    {
        std::ofstream m(mpath, std::ios::binary);
        m << manifest.str();
        if (!m) throw IoError("cannot write " + (fs::path(a.out) / kManifest).string());
    }
    staged.commit();
    out << "wrote " << a.count << " phantom case(s) to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string stage;
    std::string config;
    std::string out;
};

std::vector<CasePair> load_training_cases(const fs::path& dir) {
    const std::vector<std::string> exts{".mvol", ".nii"};
    const auto images = find_cases(dir, "_img", exts);
    const auto labels = find_cases(dir, "_lab", exts);
    std::vector<std::string> missing;
    for (const auto& [name, path] : images)
        if (!labels.count(name)) missing.push_back(name);
    if (!missing.empty()) throw DataError("cases without a label volume in " + dir.string() + ": " + join(missing));

    std::vector<CasePair> cases;
    for (const auto& [name, path] : images) {
        Volume img = load_volume(path, VolumeKind::Intensity);
        Volume lab = load_volume(labels.at(name), VolumeKind::Labels);
        if (!img.same_grid(lab)) throw DataError("case " + name + ": image and label grids differ");
        cases.push_back({std::move(img), std::move(lab)});
    }
    return cases;
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
    const RunConfig cfg = config_from(a.config);
    require_dir(a.data, "data");
    require_parent_dir(a.out);
    apply_threads(cfg);

    const bool liver = a.stage == "liver";
    with_error_prefix("stage " + a.stage + ": ", [&] {
        std::vector<CasePair> cases = load_training_cases(a.data);
        if (cases.empty()) throw DataError("no training cases (<case>_img.mvol with <case>_lab.mvol) in " + a.data);
        const TrainingSet set = liver ? make_liver_dataset(cases, cfg.cascade.coarse_spacing) : make_lesion_dataset(cases);
        cases.clear();
        if (set.positions() == 0) throw DataError("no eligible training slices in " + a.data);

        NetSpec spec = cfg.net;
        spec.num_classes = set.num_classes;
        spec.crop_train = cfg.train.crop;
        TrainConfig tc = cfg.train;
        tc.class_weights = cfg.class_weights ? *cfg.class_weights
                                             : (liver ? ClassWeights::two_class() : ClassWeights::three_class());
        Network<float> net = Network<float>::build(spec, cfg.net_seed);

        StagedFiles staged;
        const fs::path log_path = fs::path(a.out).string() + ".log";
        std::ofstream log(staged.stage(log_path), std::ios::binary);
        if (!log) throw IoError("cannot write training log " + log_path.string());
        out << "stage " << a.stage << ": " << set.cases.size() << " case(s), " << set.positions()
            << " slice(s) per epoch\n";
        train_model(net, set, tc, [&](const EpochReport& r) {
            const std::string line = format_epoch_line(r);
            out << line << "\n" << std::flush;
            log << line << "\n" << std::flush;
        });
        log.close();
        if (!log) throw IoError("failed writing training log " + log_path.string());
        save_checkpoint(net, staged.stage(a.out));
        staged.commit();
        out << "wrote checkpoint " << a.out << "\n";
        return 0;
    });
}

// ---------------------------------------------------------------------------

struct InferArgs {
    std::string liver_ckpt;
    std::string lesion_ckpt;
    std::string in;
    std::string out;
    std::string config;
};

Network<float> load_stage_network(const std::string& path, int classes, const char* role) {
    Network<float> net = load_checkpoint<float>(path);
    if (net.spec().num_classes != classes)
        throw ConfigError(path + ": " + role + " checkpoint has " + std::to_string(net.spec().num_classes) +
                          " output classes, expected " + std::to_string(classes));
    return net;
}

void cmd_infer(const InferArgs& a, std::ostream& out) {
    const RunConfig cfg = config_from(a.config);
    require_file(a.liver_ckpt, "liver checkpoint");
    require_file(a.lesion_ckpt, "lesion checkpoint");
    require_file(a.in, "input volume");
    apply_threads(cfg);

    const Network<float> net_a = load_stage_network(a.liver_ckpt, 2, "liver");
    const Network<float> net_b = load_stage_network(a.lesion_ckpt, 3, "lesion");
    for (const Network<float>* n : {&net_a, &net_b})
        if (cfg.cascade.window % n->spec().size_multiple() != 0)
            throw ConfigError("cascade.window " + std::to_string(cfg.cascade.window) + " is not a multiple of " +
                              std::to_string(n->spec().size_multiple()) + " required by the checkpoint");
    const Volume raw = load_volume(a.in, VolumeKind::Intensity);

    const CascadeResult r = run_cascade(net_a, net_b, raw, cfg.cascade);

    make_dir(a.out);
    const std::string stem = volume_stem(a.in);
    const fs::path dir(a.out);
    StagedFiles staged;
    save_mask(r.liver, staged.stage(dir / (stem + "_liver.mvol")));
    save_mask(r.lesion, staged.stage(dir / (stem + "_lesion.mvol")));
    save_mask(combine_masks({r.liver, r.lesion}), staged.stage(dir / (stem + "_seg.mvol")));
    if (cfg.emit_probs) save_mvol(r.probs.channel(kLesion), staged.stage(dir / (stem + "_lesion_prob.mvol")));
    staged.commit();

    std::size_t liver_voxels = 0, lesion_voxels = 0;
    for (std::size_t i = 0; i < r.liver.size(); ++i) {
        liver_voxels += r.liver[i] != 0.0f;
        lesion_voxels += r.lesion[i] != 0.0f;
    }
    out << stem << ": liver " << liver_voxels << " voxel(s), lesion " << lesion_voxels << " voxel(s) -> " << a.out
        << "\n";
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred;
    std::string ref;
    std::string out;
    std::string target = "lesion";
};

Volume target_mask(const Volume& labels, bool lesion) {
    Volume m = Volume::labels_like(labels);
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = lesion ? (labels[i] == kLesion ? 1.0f : 0.0f) : (labels[i] != kBackground ? 1.0f : 0.0f);
    return m;
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
    require_dir(a.pred, "prediction");
    require_dir(a.ref, "reference");
    require_parent_dir(a.out);

    const auto preds = find_cases(a.pred, "_seg", {".mvol"});
    const auto refs = find_cases(a.ref, "_lab", {".mvol", ".nii"});
    std::vector<std::string> no_pred, no_ref;
    for (const auto& [name, p] : refs)
        if (!preds.count(name)) no_pred.push_back(name);
    for (const auto& [name, p] : preds)
        if (!refs.count(name)) no_ref.push_back(name);
    if (preds.empty() && refs.empty())
        throw DataError("no cases found (<case>_seg.mvol in " + a.pred + ", <case>_lab.mvol in " + a.ref + ")");
    if (!no_pred.empty() || !no_ref.empty()) {
        std::string msg = "unmatched cases;";
        if (!no_pred.empty()) msg += " missing predictions: " + join(no_pred) + ";";
        if (!no_ref.empty()) msg += " missing references: " + join(no_ref) + ";";
        msg.pop_back();
        throw DataError(msg);
    }

    const bool lesion = a.target == "lesion";
    std::vector<ReportRow> rows;
    for (const auto& [name, ref_path] : refs) {
        const Volume ref = load_volume(ref_path, VolumeKind::Labels);
        const Volume pred = load_volume(preds.at(name), VolumeKind::Labels);
        if (pred.dims() != ref.dims())
            throw DataError("case " + name + ": prediction and reference dimensions differ");
        const CaseReport rep = with_error_prefix("case " + name + ": ", [&] {
            return evaluate_case(target_mask(pred, lesion), target_mask(ref, lesion), ref.spacing(), true);
        });
        rows.push_back({name, rep});
    }
    write_report_csv(rows, a.out);
    const CaseReport mean = aggregate([&] {
        std::vector<CaseReport> v;
        for (const auto& r : rows) v.push_back(r.report);
        return v;
    }());
    char line[160];
    std::snprintf(line, sizeof(line), "%s: %zu case(s), mean dice %.4f voe %.4f rvd %.4f assd %.3f mm mssd %.3f mm\n",
                  a.target.c_str(), rows.size(), mean.dice, mean.voe, mean.rvd, mean.assd_mm, mean.mssd_mm);
    out << line;
}

int exit_code_for(const Error& e) { return dynamic_cast<const UsageError*>(&e) ? kExitUsage : kExitRuntime; }

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Liver and lesion segmentation: phantoms, training, cascade inference, evaluation", "lsseg"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    PhantomArgs pa;
    auto* phantom = app.add_subcommand("phantom", "Generate synthetic (image, label) volume pairs");
    phantom->add_option("--out", pa.out, "Output directory")->required();
    phantom->add_option("--count", pa.count, "Number of cases")->capture_default_str();
    phantom->add_option("--seed", pa.seed, "Base random seed")->capture_default_str();
    phantom->add_option("--config", pa.config, "Config file (phantom.* keys)");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train one cascade stage");
    train->add_option("--data", ta.data, "Directory of <case>_img / <case>_lab volumes")->required();
    train->add_option("--stage", ta.stage, "Cascade stage")->required()->check(CLI::IsMember({"liver", "lesion"}));
    train->add_option("--config", ta.config, "Config file");
    train->add_option("--out", ta.out, "Checkpoint path (log written next to it with .log appended)")->required();

    InferArgs ia;
    auto* infer = app.add_subcommand("infer", "Run the two-stage cascade on one volume");
    infer->add_option("--liver-ckpt", ia.liver_ckpt, "Liver-stage checkpoint")->required();
    infer->add_option("--lesion-ckpt", ia.lesion_ckpt, "Lesion-stage checkpoint")->required();
    infer->add_option("--in", ia.in, "Input volume (.mvol or uncompressed .nii)")->required();
    infer->add_option("--out", ia.out, "Output directory")->required();
    infer->add_option("--config", ia.config, "Config file");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Score predicted segmentations against references");
    eval->add_option("--pred", ea.pred, "Directory of <case>_seg.mvol predictions")->required();
    eval->add_option("--ref", ea.ref, "Directory of <case>_lab.mvol references")->required();
    eval->add_option("--out", ea.out, "CSV report path")->required();
    eval->add_option("--target", ea.target, "Structure to score")
        ->capture_default_str()
        ->check(CLI::IsMember({"lesion", "liver"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    const CLI::App* cmd = app.get_subcommands().front();
    try {
        if (cmd == phantom) cmd_phantom(pa, out);
        else if (cmd == train) cmd_train(ta, out);
        else if (cmd == infer) cmd_infer(ia, out);
        else cmd_eval(ea, out);
    } catch (const Error& e) {
        err << "lsseg " << cmd->get_name() << ": error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "lsseg " << cmd->get_name() << ": error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"lsseg"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace lsseg
