// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance                 run every criterion
//   acceptance --criterion N   run criterion N only
//   acceptance --keep DIR      keep work files of criteria 5 and 6 in DIR
//
// Exit status is 0 only if every selected criterion passes.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lsseg/cascade.hpp"
#include "lsseg/cli.hpp"
#include "lsseg/metrics.hpp"
#include "lsseg/morpho.hpp"
#include "lsseg/network.hpp"
#include "lsseg/ops.hpp"
#include "lsseg/trainer.hpp"
#include "oracles.hpp"

using namespace lsseg;
using namespace lsseg::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what) {
        if (!ok) pass = false;
        notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    }
    void info(const std::string& what) { notes.push_back("info " + what); }
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path g_keep_dir;

struct WorkDir {
    fs::path path;
    bool keep = false;
    explicit WorkDir(const std::string& tag) {
        if (!g_keep_dir.empty()) {
            path = g_keep_dir / tag;
            keep = true;
        } else {
            path = fs::temp_directory_path() / ("lsseg_acceptance_" + tag + "_" + std::to_string(::getpid()));
        }
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~WorkDir() {
        if (!keep) fs::remove_all(path);
    }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::vector<std::string>& args, Outcome& o, bool echo = false) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (echo)
        for (std::istringstream lines(out.str()); !lines.eof();) {
            std::string l;
            std::getline(lines, l);
            if (!l.empty()) o.info("  " + l);
        }
    if (code != 0) o.info("lsseg " + args.front() + " exited " + std::to_string(code) + ": " + err.str());
    return code;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void assign(Tensor<double>& t, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
}

// Relative error between an analytic gradient and central differences of
// `loss` with respect to every entry of `x`.
double grad_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& loss) {
    auto v = to_doubles(x.data());
    auto fd = finite_difference(v, [&] {
        assign(x, v);
        return loss();
    });
    assign(x, v);
    return relative_error(to_doubles(analytic.data()), fd);
}

double grad_error(std::vector<double>& x, const std::vector<double>& analytic, const std::function<double()>& loss) {
    return relative_error(analytic, finite_difference(x, loss));
}

// ---------------------------------------------------------------------------

Outcome criterion_1() {
    using namespace lsseg::ops;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    constexpr double tol = 1e-5;
    std::mt19937_64 rng(101);
    auto report = [&](const std::string& what, double err) { o.check(err < tol, fmt("%s: rel err %.2e < 1e-5", what.c_str(), err)); };

    for (int stride : {1, 2}) {
        auto x = random_tensor<double>({4, 4, 8, 8}, rng);
        auto w = random_tensor<double>({4, 4, 3, 3}, rng);
        std::vector<double> b{0.1, -0.2, 0.3, 0.05};
        ConvCache<double> cache;
        auto y = conv2d_forward<double>(x, w, b, stride, 1, &cache);
        auto r = random_tensor<double>(y.shape(), rng);
        auto g = conv2d_backward(cache, r);
        auto loss = [&] { return dot(conv2d_forward<double>(x, w, b, stride, 1), r); };
        const std::string tag = "conv stride " + std::to_string(stride);
        report(tag + " d/input", grad_error(x, g.input, loss));
        report(tag + " d/weight", grad_error(w, g.weight, loss));
        report(tag + " d/bias", grad_error(b, g.bias, loss));
    }
    {
        auto x = random_tensor<double>({4, 4, 4, 4}, rng);
        auto w = random_tensor<double>({4, 3, 2, 2}, rng);
        std::vector<double> b{0.2, -0.1, 0.4};
        TransposedConvCache<double> cache;
        auto y = transposed_conv2d_forward<double>(x, w, b, 2, &cache);
        auto r = random_tensor<double>(y.shape(), rng);
        auto g = transposed_conv2d_backward(cache, r);
        auto loss = [&] { return dot(transposed_conv2d_forward<double>(x, w, b), r); };
        report("transposed conv d/input", grad_error(x, g.input, loss));
        report("transposed conv d/weight", grad_error(w, g.weight, loss));
        report("transposed conv d/bias", grad_error(b, g.bias, loss));
    }
    {
        auto x = random_tensor<double>({4, 4, 8, 8}, rng, -2, 2);
        std::vector<double> gamma{1.3, 0.7, 1.0, 0.5}, beta{0.1, -0.4, 0.0, 0.2};
        BatchNormStats<double> stats;
        BatchNormCache<double> cache;
        auto y = batchnorm_forward_train<double>(x, gamma, beta, stats, kBatchNormMomentum, kBatchNormEpsilon, &cache);
        auto r = random_tensor<double>(y.shape(), rng);
        auto g = batchnorm_backward(cache, r);
        auto loss = [&] {
            BatchNormStats<double> s;
            return dot(batchnorm_forward_train<double>(x, gamma, beta, s), r);
        };
        report("batch norm d/input", grad_error(x, g.input, loss));
        report("batch norm d/gamma", grad_error(gamma, g.gamma, loss));
        report("batch norm d/beta", grad_error(beta, g.beta, loss));
    }
    {
        auto x = random_tensor<double>({4, 4, 8, 8}, rng);
        // keep inputs at least 10*eps from the kink at 0, where a central
        // difference straddles two slopes
        for (auto& v : x.data())
            if (std::abs(v) < 1e-2) v = v < 0 ? v - 1e-2 : v + 1e-2;
        std::vector<double> slope{0.25, 0.1, -0.3, 0.6};
        PreluCache<double> cache;
        auto y = prelu_forward<double>(x, slope, &cache);
        auto r = random_tensor<double>(y.shape(), rng);
        auto g = prelu_backward(cache, r);
        auto loss = [&] { return dot(prelu_forward<double>(x, slope), r); };
        report("prelu d/input", grad_error(x, g.input, loss));
        report("prelu d/slope", grad_error(slope, g.slope, loss));
    }
    {
        auto logits = random_tensor<double>({4, 3, 8, 8}, rng, -2, 2);
        LabelMap lab(4, 8, 8);
        std::uniform_int_distribution<int> cls(0, 2);
        for (auto& v : lab.labels) v = cls(rng);
        const auto w = ClassWeights::three_class();
        auto r = weighted_ce_loss(softmax_channels(logits), lab, w);
        report("softmax + weighted CE d/logits", grad_error(logits, r.grad_logits, [&] {
                   return weighted_ce_loss(softmax_channels(logits), lab, w).loss;
               }));
    }
    {
        NetSpec s;
        s.in_slices = 3;
        s.num_classes = 3;
        s.level_channels = {4, 6};
        s.encoder_convs = {2, 1};
        s.decoder_convs = {1};
        s.crop_train = 16;
        auto net = Network<double>::build(s, 7);
        auto x = random_tensor<double>({2, 3, 16, 16}, rng);
        LabelMap lab(2, 16, 16);
        std::uniform_int_distribution<int> cls(0, 2);
        for (auto& v : lab.labels) v = cls(rng);
        const auto w = ClassWeights::three_class();
        auto loss = [&] {
            return ops::weighted_ce_loss(ops::softmax_channels(net.forward(x, Mode::Train, nullptr)), lab, w).loss;
        };
        ActivationCache<double> cache;
        auto lr = weighted_ce_loss(softmax_channels(net.forward(x, Mode::Train, &cache)), lab, w);
        net.zero_grad();
        net.backward(cache, lr.grad_logits);
        std::vector<double> analytic, numeric;
        const double eps = 1e-6;
        for (auto& p : net.parameters())
            for (std::size_t i = 0; i < p.param->value.size(); ++i) {
                double& v = p.param->value[i];
                const double orig = v;
                v = orig + eps;
                const double fp = loss();
                v = orig - eps;
                const double fm = loss();
                v = orig;
                analytic.push_back(p.param->grad[i]);
                numeric.push_back((fp - fm) / (2 * eps));
            }
        const double err = relative_error(analytic, numeric);
        o.check(err < 1e-4, fmt("whole 2-level network (16x16 input, %zu parameters): rel err %.2e < 1e-4",
                                 analytic.size(), err));
    }
    const double t = seconds_since(t0);
    o.check(t < 120.0, fmt("runtime %.1f s < 120 s", t));
    return o;
}

// ---------------------------------------------------------------------------

Volume random_blob_mask(Dims3 d, Spacing3 s, std::mt19937_64& rng) {
    Volume m(d, s, VolumeKind::Labels, ScalarType::U8);
    std::uniform_int_distribution<int> nbox(1, 3);
    const int boxes = nbox(rng);
    for (int b = 0; b < boxes; ++b) {
        auto span = [&](int n) {
            std::uniform_int_distribution<int> a(0, n - 1);
            int lo = a(rng), hi = a(rng);
            if (lo > hi) std::swap(lo, hi);
            return std::pair{lo, hi};
        };
        auto [x0, x1] = span(d.x);
        auto [y0, y1] = span(d.y);
        auto [z0, z1] = span(d.z);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) m.at(x, y, z) = 1;
    }
    std::bernoulli_distribution salt(0.05);
    for (auto& v : m.data())
        if (salt(rng)) v = 1 - v;
    return m;
}

std::vector<std::uint8_t> mask_bytes(const Volume& v) {
    std::vector<std::uint8_t> b(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) b[i] = v[i] != 0;
    return b;
}

Outcome criterion_2() {
    Outcome o;
    std::mt19937_64 rng(202);
    {
        std::uniform_int_distribution<int> nb(1, 2), ch(1, 4), sp(1, 12), st(1, 2);
        double worst_conv = 0.0, worst_tconv = 0.0;
        for (int i = 0; i < 200; ++i) {
            const int n = nb(rng), ci = ch(rng), co = ch(rng), h = sp(rng), w = sp(rng);
            std::vector<float> bias(co);
            for (auto& b : bias) b = std::uniform_real_distribution<float>(-1, 1)(rng);
            double diff = 0.0;
            if (i % 2 == 0) {
                const int stride = st(rng);
                auto x = random_tensor<float>({n, ci, h, w}, rng);
                auto k = random_tensor<float>({co, ci, 3, 3}, rng);
                auto y = ops::conv2d_forward<float>(x, k, bias, stride, 1);
                auto ref = direct_conv2d(x, k, bias, stride, 1);
                if (y.shape() != ref.shape()) diff = std::numeric_limits<double>::infinity();
                else
                    for (std::size_t j = 0; j < y.size(); ++j) diff = std::max(diff, std::abs(double(y[j]) - ref[j]));
                worst_conv = std::max(worst_conv, diff);
            } else {
                auto x = random_tensor<float>({n, ci, h, w}, rng);
                auto k = random_tensor<float>({ci, co, 2, 2}, rng);
                auto y = ops::transposed_conv2d_forward<float>(x, k, bias);
                auto ref = direct_transposed_conv2d(x, k, bias);
                if (y.shape() != ref.shape()) diff = std::numeric_limits<double>::infinity();
                else
                    for (std::size_t j = 0; j < y.size(); ++j) diff = std::max(diff, std::abs(double(y[j]) - ref[j]));
                worst_tconv = std::max(worst_tconv, diff);
            }
        }
        o.check(worst_conv <= 1e-6, fmt("conv2d, 100 random shapes (32-bit): max |diff| %.2e <= 1e-6", worst_conv));
        o.check(worst_tconv <= 1e-6,
                fmt("transposed conv, 100 random shapes (32-bit): max |diff| %.2e <= 1e-6", worst_tconv));
    }
    {
        int identical = 0;
        std::uniform_real_distribution<double> density(0.05, 0.6);
        for (int i = 0; i < 100; ++i) {
            const int conn = i % 2 == 0 ? 26 : 6;
            std::bernoulli_distribution fg(density(rng));
            std::vector<std::uint8_t> m(16 * 16 * 16);
            for (auto& v : m) v = fg(rng);
            const auto cm = connected_components_3d(m, {16, 16, 16}, conn);
            identical += cm.labels == flood_fill_labels(m, 16, 16, 16, conn);
        }
        o.check(identical == 100, fmt("3-D CCL vs flood fill, 100 random 16^3 masks (6 and 26): %d/100 identical", identical));
    }
    {
        double worst = 0.0;
        std::uniform_int_distribution<int> side(2, 20);
        std::uniform_real_distribution<double> spacing(0.5, 3.0);
        int pairs = 0;
        while (pairs < 50) {
            const Dims3 d{side(rng), side(rng), side(rng)};
            const Spacing3 s{spacing(rng), spacing(rng), spacing(rng)};
            Volume a = random_blob_mask(d, s, rng), b = random_blob_mask(d, s, rng);
            const auto ba = mask_bytes(a), bb = mask_bytes(b);
            const auto sa = brute_surface(ba, d.x, d.y, d.z), sb = brute_surface(bb, d.x, d.y, d.z);
            if (sa.empty() || sb.empty()) continue;
            ++pairs;
            const auto [assd_ref, mssd_ref] = brute_surface_distances(sa, sb, s.x, s.y, s.z);
            const auto got = surface_distances(a, b, s);
            worst = std::max({worst, std::abs(got.assd_mm - assd_ref), std::abs(got.mssd_mm - mssd_ref)});
        }
        o.check(worst <= 1e-9, fmt("ASSD/MSSD vs all-pairs brute force, 50 random <=20^3 pairs: max |diff| %.2e <= 1e-9", worst));
    }
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_3() {
    Outcome o;
    {
        TrainConfig cfg;
        int ok = 0, worst_ulps = 0;
        for (int k = 0; k < 50; ++k) {
            long double ref = cfg.lr0;
            for (int i = 0; i < k; ++i) ref *= static_cast<long double>(cfg.lr_gamma);
            const double expected = static_cast<double>(ref);
            const double got = lr_at_epoch(cfg, k);
            int ulps = 0;
            for (double v = std::min(got, expected); v < std::max(got, expected) && ulps < 100; ++ulps)
                v = std::nextafter(v, 1.0);
            worst_ulps = std::max(worst_ulps, ulps);
            ok += ulps <= 1;
        }
        o.check(ok == 50, fmt("lr_at_epoch = 0.001*0.9^k for k=0..49: %d/50 within 1 ulp (worst %d)", ok, worst_ulps));
        o.check(lr_at_epoch(cfg, 0) == 0.001 && std::abs(lr_at_epoch(cfg, 1) - 0.0009) < 1e-18,
                fmt("lr(0) = %.17g, lr(1) = %.17g", lr_at_epoch(cfg, 0), lr_at_epoch(cfg, 1)));
    }
    {
        const auto w = ClassWeights::three_class();
        Tensor<double> p1({1, 3, 1, 1}, std::vector<double>{0.2, 0.3, 0.5});
        const double l1 = ops::weighted_ce_loss(p1, LabelMap(1, 1, 1, 2), w).loss;
        o.check(std::abs(l1 - (-2.2 * std::log(0.5))) < 1e-6 && std::abs(l1 - 1.52493) < 1e-5,
                fmt("lesion pixel, P=(0.2,0.3,0.5): loss %.6f (hand value -2.2 ln 0.5 ~ 1.52493)", l1));
        Tensor<double> p2({1, 3, 1, 1}, 1.0 / 3.0);
        const double l2 = ops::weighted_ce_loss(p2, LabelMap(1, 1, 1, 1), w).loss;
        o.check(std::abs(l2 - (-1.2 * std::log(1.0 / 3.0))) < 1e-6 && std::abs(l2 - 1.31833) < 1e-5,
                fmt("liver pixel, uniform P: loss %.6f (hand value -1.2 ln 1/3 ~ 1.31833)", l2));
        Tensor<double> p3({1, 3, 1, 2}, std::vector<double>{1, 0, 0, 0, 0, 1});
        LabelMap y3(1, 1, 2);
        y3.at(0, 0, 0) = 0;
        y3.at(0, 0, 1) = 2;
        const double l3 = ops::weighted_ce_loss(p3, y3, w).loss;
        o.check(l3 == 0.0, fmt("P of the true class = 1 everywhere: loss %.3g", l3));
    }
    {
        const Dims3 d{20, 10, 6};
        Volume lesion(d, {1, 1, 1}, VolumeKind::Labels, ScalarType::U8);
        ProbVolume probs(d, {1, 1, 1}, 3);
        const float low[3] = {0.21f, 0.0f, 0.79f};
        const float high[3] = {0.2f, 0.0f, 0.8f};
        const float weak[3] = {0.4f, 0.0f, 0.6f};
        const float bg[3] = {1.0f, 0.0f, 0.0f};
        for (int z = 0; z < d.z; ++z)
            for (int y = 0; y < d.y; ++y)
                for (int x = 0; x < d.x; ++x) {
                    const std::size_t i = lesion.index(x, y, z);
                    const bool a = x >= 2 && x < 6 && y >= 2 && y < 6 && z >= 1 && z < 4;
                    const bool b = x >= 12 && x < 16 && y >= 2 && y < 6 && z >= 1 && z < 4;
                    if (a || b) lesion[i] = 1;
                    // component a peaks at 0.79, component b at exactly 0.80
                    const float* v = a ? (x == 3 && y == 3 && z == 2 ? low : weak)
                                       : b ? (x == 13 && y == 3 && z == 2 ? high : weak) : bg;
                    probs.add(i, v, 1);
                }
        probs.finalize();
        const Volume kept = suppress_low_confidence_lesions(lesion, probs, 0.80, 26);
        const bool a_gone = kept.at(3, 3, 2) == 0.0f && kept.at(2, 2, 1) == 0.0f;
        const bool b_kept = kept.at(13, 3, 2) == 1.0f && kept.at(12, 2, 1) == 1.0f;
        o.check(a_gone, "component with max lesion probability 0.79 removed at threshold 0.80");
        o.check(b_kept, "component with max lesion probability 0.80 kept at threshold 0.80");
        o.check(suppress_low_confidence_lesions(kept, probs, 0.80, 26) == kept, "suppression is idempotent");
    }
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_4() {
    Outcome o;
    const NetSpec spec;
    o.check(weighted_layer_count(spec) == 32,
            fmt("default spec weighted layers: %d (expected 32)", weighted_layer_count(spec)));

    auto net = Network<float>::build(spec, 4);
    std::mt19937_64 rng(404);
    {
        auto x = random_tensor<float>({1, spec.in_slices, 320, 320}, rng);
        const auto feats = net.encoder_features(x);
        const bool ok = feats.size() >= 2 && feats[1].shape() == Shape4{1, 128, 160, 160};
        o.check(ok, fmt("level-1 encoder features for a 320^2 input: %dx%dx%d (expected 160x160x128)",
                        feats.size() >= 2 ? feats[1].h() : 0, feats.size() >= 2 ? feats[1].w() : 0,
                        feats.size() >= 2 ? feats[1].c() : 0));
    }
    {
        // one SGD step on a 320^2 crop, then the same parameters at two sizes
        auto x = random_tensor<float>({1, spec.in_slices, spec.crop_train, spec.crop_train}, rng);
        LabelMap lab(1, spec.crop_train, spec.crop_train);
        std::uniform_int_distribution<int> cls(0, spec.num_classes - 1);
        for (auto& v : lab.labels) v = cls(rng);
        ActivationCache<float> cache;
        auto logits = net.forward(x, ops::Mode::Train, &cache);
        auto loss = ops::weighted_ce_loss(ops::softmax_channels(logits), lab, ClassWeights::three_class());
        net.zero_grad();
        net.backward(cache, loss.grad_logits);
        const TrainConfig tc;
        sgd_step(net, lr_at_epoch(tc, 0), tc.momentum, tc.weight_decay);
        for (int side : {320, 480}) {
            auto in = random_tensor<float>({1, spec.in_slices, side, side}, rng);
            const auto out = net.forward(in);
            bool finite = true;
            for (float v : out.data()) finite = finite && std::isfinite(v);
            o.check(out.shape() == Shape4{1, spec.num_classes, side, side} && finite,
                    fmt("trained parameters on %dx%d input: output %dx%dx%d, finite=%d", side, side, out.h(), out.w(),
                        out.c(), finite));
        }
    }
    return o;
}

// ---------------------------------------------------------------------------

struct PhantomScores {
    double liver_dice = 0, lesion_dice = 0;
    bool single_component = false, lesion_in_liver = false;
    double p_in = 0, p_out = 0;
};

const char* kExperimentConfig =
    "# reduced network for the desk-scale phantom experiment\n"
    "net.level_channels = 16,32,64\n"
    "net.encoder_convs = 2,2,2\n"
    "net.decoder_convs = 2,2\n"
    "train.epochs = 10\n"
    "train.crop = 64\n"
    "emit_probs = true\n";

Outcome criterion_5() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    WorkDir w("phantom_experiment");
    {
        std::ofstream(w / "experiment.cfg") << kExperimentConfig;
    }
    const std::string cfg = w / "experiment.cfg";
    if (cli({"phantom", "--out", w / "all", "--count", "25", "--seed", "2024", "--config", cfg}, o) != 0) {
        o.check(false, "phantom generation");
        return o;
    }
    fs::create_directories(w / "train");
    fs::create_directories(w / "test");
    for (int i = 1; i <= 25; ++i) {
        const std::string dst = i <= 20 ? "train/" : "test/";
        for (const char* kind : {"_img.mvol", "_lab.mvol"}) {
            const std::string f = case_name(i) + kind;
            fs::rename(w / ("all/" + f), w / (dst + f));
        }
    }
    o.info("25 phantoms 64x64x32 at 1.5x1.5x3 mm: 20 train, 5 held out");

    for (const char* stage : {"liver", "lesion"}) {
        const auto ts = std::chrono::steady_clock::now();
        const std::string ckpt = w / (std::string(stage) + ".ckpt");
        if (cli({"train", "--data", w / "train", "--stage", stage, "--config", cfg, "--out", ckpt}, o, true) != 0) {
            o.check(false, std::string("training stage ") + stage);
            return o;
        }
        o.info(fmt("stage %s trained in %.0f s", stage, seconds_since(ts)));
    }

    std::vector<PhantomScores> scores;
    bool all_ran = true;
    for (int i = 21; i <= 25; ++i) {
        const std::string name = case_name(i);
        const int code = cli({"infer", "--liver-ckpt", w / "liver.ckpt", "--lesion-ckpt", w / "lesion.ckpt", "--in",
                              w / ("test/" + name + "_img.mvol"), "--out", w / "pred", "--config", cfg},
                             o);
        if (code != 0) {
            all_ran = false;
            continue;
        }
        const Volume ref = load_mvol(w / ("test/" + name + "_lab.mvol"));
        const Volume liver = load_mvol(w / ("pred/" + name + "_liver.mvol"));
        const Volume lesion = load_mvol(w / ("pred/" + name + "_lesion.mvol"));
        const Volume prob = load_mvol(w / ("pred/" + name + "_lesion_prob.mvol"));
        Volume ref_liver = Volume::labels_like(ref), ref_lesion = Volume::labels_like(ref);
        PhantomScores s;
        double sum_in = 0, sum_out = 0;
        std::size_t n_in = 0, n_out = 0;
        s.lesion_in_liver = true;
        for (std::size_t v = 0; v < ref.size(); ++v) {
            ref_liver[v] = ref[v] != kBackground;
            ref_lesion[v] = ref[v] == kLesion;
            if (lesion[v] != 0.0f && liver[v] == 0.0f) s.lesion_in_liver = false;
            if (ref[v] == kLesion) sum_in += prob[v], ++n_in;
            else sum_out += prob[v], ++n_out;
        }
        s.liver_dice = dice(liver, ref_liver);
        s.lesion_dice = dice(lesion, ref_lesion);
        s.single_component = connected_components_3d(liver, 26).count() == 1;
        s.p_in = n_in ? sum_in / n_in : 0;
        s.p_out = n_out ? sum_out / n_out : 0;
        o.info(fmt("%s: liver dice %.4f, lesion dice %.4f, liver components %d, lesion prob in/out %.3f/%.3f",
                   name.c_str(), s.liver_dice, s.lesion_dice, connected_components_3d(liver, 26).count(), s.p_in,
                   s.p_out));
        scores.push_back(s);
    }
    o.check(all_ran, "cascade ran on all 5 held-out phantoms");
    if (scores.empty()) return o;

    fs::create_directories(w / "ref");
    for (int i = 21; i <= 25; ++i)
        fs::copy_file(w / ("test/" + case_name(i) + "_lab.mvol"), w / ("ref/" + case_name(i) + "_lab.mvol"),
                      fs::copy_options::overwrite_existing);
    if (all_ran) {
        cli({"eval", "--pred", w / "pred", "--ref", w / "ref", "--out", w / "lesion_report.csv"}, o, true);
        cli({"eval", "--pred", w / "pred", "--ref", w / "ref", "--out", w / "liver_report.csv", "--target", "liver"}, o,
            true);
    }

    double liver = 0, lesion = 0;
    bool single = true, inside = true;
    for (const auto& s : scores) {
        liver += s.liver_dice / scores.size();
        lesion += s.lesion_dice / scores.size();
        single = single && s.single_component;
        inside = inside && s.lesion_in_liver;
    }
    o.check(liver >= 0.85, fmt("mean liver dice %.4f >= 0.85", liver));
    o.check(lesion >= 0.60, fmt("mean lesion dice %.4f >= 0.60", lesion));
    o.check(single, "final liver is a single 26-connected component in every case");
    o.check(inside, "lesion mask is inside the liver mask in every case");
    o.info(fmt("wall time %.0f s on %u hardware thread(s) (target <= 30 min on a 4-core desktop)", seconds_since(t0),
               std::thread::hardware_concurrency()));
    return o;
}

// ---------------------------------------------------------------------------

const char* kDeterminismConfig =
    "net.level_channels = 8,16\n"
    "net.encoder_convs = 1,1\n"
    "net.decoder_convs = 1\n"
    "train.epochs = 3\n"
    "train.crop = 32\n"
    "train.lr0 = 0.01\n"
    "threads = 1\n";

Outcome criterion_6() {
    Outcome o;
    WorkDir w("determinism");
    std::ofstream(w / "det.cfg") << kDeterminismConfig;
    const std::string cfg = w / "det.cfg";
    if (cli({"phantom", "--out", w / "data", "--count", "3", "--seed", "11", "--config", cfg}, o) != 0) {
        o.check(false, "phantom generation");
        return o;
    }
    for (const char* run : {"run1", "run2"}) {
        const std::string r = run;
        fs::create_directories(w / r);
        const int a = cli({"train", "--data", w / "data", "--stage", "liver", "--config", cfg, "--out", w / (r + "/liver.ckpt")}, o);
        const int b = cli({"train", "--data", w / "data", "--stage", "lesion", "--config", cfg, "--out", w / (r + "/lesion.ckpt")}, o);
        const int c = cli({"infer", "--liver-ckpt", w / (r + "/liver.ckpt"), "--lesion-ckpt", w / (r + "/lesion.ckpt"),
                           "--in", w / "data/case_0001_img.mvol", "--out", w / (r + "/pred"), "--config", cfg},
                          o);
        o.check(a == 0 && b == 0 && c == 0, r + ": train liver, train lesion and infer succeeded");
    }
    for (const char* f : {"liver.ckpt", "lesion.ckpt", "liver.ckpt.log", "pred/case_0001_liver.mvol",
                          "pred/case_0001_lesion.mvol", "pred/case_0001_seg.mvol"}) {
        const std::string a = slurp(w / (std::string("run1/") + f)), b = slurp(w / (std::string("run2/") + f));
        o.check(!a.empty() && a == b, fmt("%s byte-identical across runs (%zu bytes)", f, a.size()));
    }
    return o;
}

// ---------------------------------------------------------------------------

Outcome criterion_7() {
    Outcome o;
    std::mt19937_64 rng(707);
    {
        double worst = 0.0;
        int pairs = 0;
        while (pairs < 1000) {
            Volume a = random_blob_mask({7, 6, 5}, {1, 1, 1}, rng), b = random_blob_mask({7, 6, 5}, {1, 1, 1}, rng);
            const double d = dice(a, b);
            ++pairs;
            worst = std::max(worst, std::abs(voe(a, b) - (1.0 - d / (2.0 - d))));
        }
        o.check(worst <= 1e-9, fmt("voe = 1 - dice/(2 - dice) on 1000 random pairs: max |diff| %.2e <= 1e-9", worst));
    }
    {
        Volume m = random_blob_mask({12, 10, 8}, {0.8, 0.8, 2.5}, rng);
        const CaseReport r = evaluate_case(m, m, m.spacing());
        o.check(r == CaseReport{1, 0, 0, 0, 0}, fmt("perfect prediction: (%g, %g, %g, %g, %g)", r.dice, r.voe, r.rvd,
                                                    r.assd_mm, r.mssd_mm));
    }
    {
        const std::string text =
            "case,dice,voe,rvd,assd_mm,mssd_mm\n"
            "case_0001,0.670,0.450,0.040,6.660,57.930\n";
        const auto rows = parse_report_csv(text);
        const CaseReport expected{0.670, 0.450, 0.040, 6.660, 57.930};
        const bool parsed = rows.size() == 1 && rows[0].name == "case_0001" && rows[0].report == expected;
        o.check(parsed, "reference results row parses to (0.670, 0.450, 0.040, 6.660, 57.930)");
        const std::string written = format_report_csv(rows);
        const auto again = parse_report_csv(written);
        const bool round_trip = again.size() == 2 && again[0].name == "case_0001" && again[0].report == expected &&
                                again[1].name == "mean" && again[1].report == expected;
        o.check(round_trip, "row round-trips through the CSV writer (mean row equals the single row)");
        o.check(!again.empty() && format_report_csv({again[0]}) == written,
                "writer output is stable across a second round trip");
    }
    return o;
}

struct Criterion {
    int id;
    const char* title;
    Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "gradient fidelity", criterion_1},
    {2, "oracle equivalence", criterion_2},
    {3, "exact hyperparameter reproduction", criterion_3},
    {4, "architecture contract", criterion_4},
    {5, "end-to-end phantom experiment", criterion_5},
    {6, "determinism", criterion_6},
    {7, "metric identities", criterion_7},
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else if (a == "--keep" && i + 1 < argc) {
            g_keep_dir = argv[++i];
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N] [--keep DIR]\n", argv[0]);
            return 2;
        }
    }
    if (only < 0 || only > 7) {
        std::fprintf(stderr, "criterion must be 1..7\n");
        return 2;
    }

    bool all = true;
    for (const auto& c : kCriteria) {
        if (only && c.id != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.check(false, std::string("unexpected exception: ") + e.what());
        }
        for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
        std::printf("%s AC%d %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, seconds_since(t0));
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
