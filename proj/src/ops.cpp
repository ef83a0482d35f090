#include "lsseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace lsseg::ops {

namespace {

// Upper bound on im2col buffer elements; larger problems are processed in
// column chunks.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

[[noreturn]] void shape_mismatch(const std::string& what, const Shape4& a, const Shape4& b) {
    throw ShapeError(what + ": " + to_string(a) + " vs " + to_string(b));
}

int conv_out_dim(int in, int pad, int stride) { return (in + 2 * pad - 3) / stride + 1; }

struct ConvGeom {
    int ci, h, w, ho, wo, stride, pad;
};

// col is (ci*9) x pc, covering output pixels [p0, p0 + pc).
template <class T>
void im2col(const ConvGeom& g, const T* in, int p0, int pc, T* col) {
    for (int c = 0; c < g.ci; ++c) {
        const T* src = in + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * pc;
                int oy = p0 / g.wo;
                int ox = p0 % g.wo;
                for (int q = 0; q < pc; ++q) {
                    const int iy = oy * g.stride + ky - g.pad;
                    const int ix = ox * g.stride + kx - g.pad;
                    dst[q] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : T(0);
                    if (++ox == g.wo) {
                        ox = 0;
                        ++oy;
                    }
                }
            }
        }
    }
}

// colT is pc x (ci*9).
template <class T>
void im2col_transposed(const ConvGeom& g, const T* in, int p0, int pc, T* colT) {
    const int K = g.ci * 9;
    int oy = p0 / g.wo;
    int ox = p0 % g.wo;
    for (int q = 0; q < pc; ++q) {
        T* dst = colT + static_cast<std::size_t>(q) * K;
        for (int c = 0; c < g.ci; ++c) {
            const T* src = in + static_cast<std::size_t>(c) * g.h * g.w;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * g.stride + ky - g.pad;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * g.stride + kx - g.pad;
                    *dst++ = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : T(0);
                }
            }
        }
        if (++ox == g.wo) {
            ox = 0;
            ++oy;
        }
    }
}

template <class T>
void col2im_accumulate(const ConvGeom& g, const T* col, int p0, int pc, T* grad_in) {
    for (int c = 0; c < g.ci; ++c) {
        T* dst = grad_in + static_cast<std::size_t>(c) * g.h * g.w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col + static_cast<std::size_t>((c * 3 + ky) * 3 + kx) * pc;
                int oy = p0 / g.wo;
                int ox = p0 % g.wo;
                for (int q = 0; q < pc; ++q) {
                    const int iy = oy * g.stride + ky - g.pad;
                    const int ix = ox * g.stride + kx - g.pad;
                    if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) dst[iy * g.w + ix] += src[q];
                    if (++ox == g.wo) {
                        ox = 0;
                        ++oy;
                    }
                }
            }
        }
    }
}

template <class T>
std::vector<T> transpose(const T* a, int rows, int cols) {
    std::vector<T> t(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            t[static_cast<std::size_t>(c) * rows + r] = a[static_cast<std::size_t>(r) * cols + c];
    return t;
}

int column_chunk(int K, int P) {
    const std::size_t per = static_cast<std::size_t>(std::max(K, 1));
    return static_cast<int>(std::clamp<std::size_t>(kColBudget / per, 1, static_cast<std::size_t>(P)));
}

template <class T>
std::vector<T> channel_sums(const Tensor<T>& t) {
    std::vector<T> s(t.c(), T(0));
    const std::size_t hw = t.shape().plane();
    for (int c = 0; c < t.c(); ++c) {
        double acc = 0.0;
        for (int n = 0; n < t.n(); ++n) {
            const T* p = t.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        }
        s[c] = static_cast<T>(acc);
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight,
                         std::span<const T> bias, int stride, int pad, ConvCache<T>* cache) {
    const Shape4& ws = weight.shape();
    if (ws.h != 3 || ws.w != 3)
        throw ShapeError("conv2d weight must be (co,ci,3,3), got " + to_string(ws));
    if (input.c() != ws.c) shape_mismatch("conv2d input/weight channel mismatch", input.shape(), ws);
    if (stride != 1 && stride != 2) throw UsageError("conv2d stride must be 1 or 2");
    if (pad < 0) throw UsageError("conv2d padding must be non-negative");
    if (!bias.empty() && static_cast<int>(bias.size()) != ws.n)
        throw ShapeError("conv2d bias length " + std::to_string(bias.size()) +
                         " does not match output channels " + std::to_string(ws.n));
    if (input.h() + 2 * pad < 3 || input.w() + 2 * pad < 3)
        throw ShapeError("conv2d input too small for a 3x3 kernel: " + to_string(input.shape()));

    const ConvGeom g{input.c(), input.h(), input.w(), conv_out_dim(input.h(), pad, stride),
                     conv_out_dim(input.w(), pad, stride), stride, pad};
    const int co = ws.n;
    const int K = g.ci * 9;
    const int P = g.ho * g.wo;
    Tensor<T> out({input.n(), co, g.ho, g.wo});
    const int chunk = column_chunk(K, P);
    std::vector<T> col(static_cast<std::size_t>(K) * chunk);
    for (int n = 0; n < input.n(); ++n) {
        const T* in = input.plane(n, 0);
        T* o = out.plane(n, 0);
        for (int p0 = 0; p0 < P; p0 += chunk) {
            const int pc = std::min(chunk, P - p0);
            im2col(g, in, p0, pc, col.data());
            detail::gemm(co, pc, K, weight.data().data(), K, col.data(), pc, o + p0, P, false);
        }
        if (!bias.empty())
            for (int c = 0; c < co; ++c) {
                T* p = o + static_cast<std::size_t>(c) * P;
                for (int i = 0; i < P; ++i) p[i] += bias[c];
            }
    }
    if (cache) {
        cache->input = input;
        cache->weight = weight;
        cache->stride = stride;
        cache->pad = pad;
        cache->valid = true;
    }
    return out;
}

template <class T>
ConvGrads<T> conv2d_backward(const ConvCache<T>& cache, const Tensor<T>& grad_out,
                             bool need_input_grad) {
    if (!cache.valid) throw UsageError("conv2d_backward called without a forward cache");
    const Tensor<T>& input = cache.input;
    const Shape4& ws = cache.weight.shape();
    const ConvGeom g{input.c(), input.h(), input.w(), conv_out_dim(input.h(), cache.pad, cache.stride),
                     conv_out_dim(input.w(), cache.pad, cache.stride), cache.stride, cache.pad};
    const int co = ws.n;
    const Shape4 expected{input.n(), co, g.ho, g.wo};
    if (grad_out.shape() != expected)
        shape_mismatch("conv2d_backward grad_out does not match forward output", grad_out.shape(),
                       expected);

    const int K = g.ci * 9;
    const int P = g.ho * g.wo;
    ConvGrads<T> grads;
    grads.weight = Tensor<T>(ws);
    grads.bias = channel_sums(grad_out);
    if (need_input_grad) grads.input = Tensor<T>(input.shape());

    const int chunk = column_chunk(K, P);
    std::vector<T> buf(static_cast<std::size_t>(K) * chunk);
    const std::vector<T> wt = transpose(cache.weight.data().data(), co, K);  // K x co
    for (int n = 0; n < input.n(); ++n) {
        const T* in = input.plane(n, 0);
        const T* go = grad_out.plane(n, 0);
        for (int p0 = 0; p0 < P; p0 += chunk) {
            const int pc = std::min(chunk, P - p0);
            im2col_transposed(g, in, p0, pc, buf.data());
            detail::gemm(co, K, pc, go + p0, P, buf.data(), K, grads.weight.data().data(), K, true);
            if (need_input_grad) {
                detail::gemm(K, pc, co, wt.data(), co, go + p0, P, buf.data(), pc, false);
                col2im_accumulate(g, buf.data(), p0, pc, grads.input.plane(n, 0));
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> transposed_conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight,
                                    std::span<const T> bias, int stride,
                                    TransposedConvCache<T>* cache) {
    const Shape4& ws = weight.shape();
    if (stride != 2) throw UsageError("transposed conv supports stride 2 only");
    if (ws.h != 2 || ws.w != 2)
        throw ShapeError("transposed conv weight must be (ci,co,2,2), got " + to_string(ws));
    if (input.c() != ws.n)
        shape_mismatch("transposed conv input/weight channel mismatch", input.shape(), ws);
    const int ci = ws.n;
    const int co = ws.c;
    if (!bias.empty() && static_cast<int>(bias.size()) != co)
        throw ShapeError("transposed conv bias length " + std::to_string(bias.size()) +
                         " does not match output channels " + std::to_string(co));

    const int h = input.h();
    const int w = input.w();
    const int P = h * w;
    const int R = co * 4;
    Tensor<T> out({input.n(), co, 2 * h, 2 * w});
    const std::vector<T> wt = transpose(weight.data().data(), ci, R);  // R x ci
    std::vector<T> y(static_cast<std::size_t>(R) * P);
    for (int n = 0; n < input.n(); ++n) {
        detail::gemm(R, P, ci, wt.data(), ci, input.plane(n, 0), P, y.data(), P, false);
        for (int o = 0; o < co; ++o) {
            T* dst = out.plane(n, o);
            const T b = bias.empty() ? T(0) : bias[o];
            for (int a = 0; a < 2; ++a)
                for (int bx = 0; bx < 2; ++bx) {
                    const T* src = y.data() + static_cast<std::size_t>(o * 4 + a * 2 + bx) * P;
                    for (int yy = 0; yy < h; ++yy)
                        for (int xx = 0; xx < w; ++xx)
                            dst[(2 * yy + a) * (2 * w) + 2 * xx + bx] = src[yy * w + xx] + b;
                }
        }
    }
    if (cache) {
        cache->input = input;
        cache->weight = weight;
        cache->valid = true;
    }
    return out;
}

template <class T>
ConvGrads<T> transposed_conv2d_backward(const TransposedConvCache<T>& cache,
                                        const Tensor<T>& grad_out) {
    if (!cache.valid) throw UsageError("transposed_conv2d_backward called without a forward cache");
    const Tensor<T>& input = cache.input;
    const Shape4& ws = cache.weight.shape();
    const int ci = ws.n;
    const int co = ws.c;
    const int h = input.h();
    const int w = input.w();
    const Shape4 expected{input.n(), co, 2 * h, 2 * w};
    if (grad_out.shape() != expected)
        shape_mismatch("transposed_conv2d_backward grad_out does not match forward output",
                       grad_out.shape(), expected);

    const int P = h * w;
    const int R = co * 4;
    ConvGrads<T> grads;
    grads.input = Tensor<T>(input.shape());
    grads.weight = Tensor<T>(ws);
    grads.bias = channel_sums(grad_out);

    std::vector<T> gy(static_cast<std::size_t>(R) * P);   // R x P
    std::vector<T> gyt(static_cast<std::size_t>(P) * R);  // P x R
    for (int n = 0; n < input.n(); ++n) {
        for (int o = 0; o < co; ++o) {
            const T* src = grad_out.plane(n, o);
            for (int a = 0; a < 2; ++a)
                for (int bx = 0; bx < 2; ++bx) {
                    const int r = o * 4 + a * 2 + bx;
                    T* dst = gy.data() + static_cast<std::size_t>(r) * P;
                    for (int yy = 0; yy < h; ++yy)
                        for (int xx = 0; xx < w; ++xx) {
                            const T v = src[(2 * yy + a) * (2 * w) + 2 * xx + bx];
                            const int p = yy * w + xx;
                            dst[p] = v;
                            gyt[static_cast<std::size_t>(p) * R + r] = v;
                        }
                }
        }
        detail::gemm(ci, P, R, cache.weight.data().data(), R, gy.data(), P, grads.input.plane(n, 0), P,
                     false);
        detail::gemm(ci, R, P, input.plane(n, 0), P, gyt.data(), R, grads.weight.data().data(), R,
                     true);
    }
    return grads;
}

// ---------------------------------------------------------------------------

template <class T>
BatchNormStats<T> BatchNormStats<T>::initial(int channels) {
    BatchNormStats s;
    s.mean.assign(channels, T(0));
    s.var.assign(channels, T(1));
    return s;
}

namespace {

template <class T>
void check_bn_args(const Tensor<T>& input, std::span<const T> gamma, std::span<const T> beta,
                   double epsilon) {
    if (static_cast<int>(gamma.size()) != input.c() || static_cast<int>(beta.size()) != input.c())
        throw ShapeError("batchnorm gamma/beta length must equal channels " +
                         std::to_string(input.c()));
    if (!(epsilon > 0.0)) throw UsageError("batchnorm epsilon must be positive");
}

}  // namespace

template <class T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& input, std::span<const T> gamma,
                                  std::span<const T> beta, BatchNormStats<T>& stats,
                                  double momentum, double epsilon, BatchNormCache<T>* cache) {
    check_bn_args(input, gamma, beta, epsilon);
    const int C = input.c();
    if (stats.empty()) stats = BatchNormStats<T>::initial(C);
    if (static_cast<int>(stats.mean.size()) != C)
        throw ShapeError("batchnorm running stats have " + std::to_string(stats.mean.size()) +
                         " channels, input has " + std::to_string(C));
    const std::size_t hw = input.shape().plane();
    const double count = static_cast<double>(hw) * input.n();
    if (count <= 0) throw ShapeError("batchnorm on empty tensor " + to_string(input.shape()));

    Tensor<T> out(input.shape());
    Tensor<T> xhat(input.shape());
    std::vector<T> inv_std(C);
    for (int c = 0; c < C; ++c) {
        double sum = 0.0;
        for (int n = 0; n < input.n(); ++n) {
            const T* p = input.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) sum += p[i];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < input.n(); ++n) {
            const T* p = input.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / count;
        const double istd = 1.0 / std::sqrt(var + epsilon);
        inv_std[c] = static_cast<T>(istd);
        for (int n = 0; n < input.n(); ++n) {
            const T* p = input.plane(n, c);
            T* xh = xhat.plane(n, c);
            T* o = out.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = static_cast<T>((p[i] - mean) * istd);
                o[i] = gamma[c] * xh[i] + beta[c];
            }
        }
        const double unbiased = count > 1 ? sq / (count - 1) : var;
        stats.mean[c] = static_cast<T>((1.0 - momentum) * stats.mean[c] + momentum * mean);
        stats.var[c] = static_cast<T>((1.0 - momentum) * stats.var[c] + momentum * unbiased);
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->gamma.assign(gamma.begin(), gamma.end());
        cache->valid = true;
    }
    return out;
}

template <class T>
Tensor<T> batchnorm_forward_eval(const Tensor<T>& input, std::span<const T> gamma,
                                 std::span<const T> beta, const BatchNormStats<T>& stats,
                                 double epsilon) {
    check_bn_args(input, gamma, beta, epsilon);
    if (stats.empty()) throw UsageError("batchnorm eval mode requires running statistics");
    const int C = input.c();
    if (static_cast<int>(stats.mean.size()) != C || static_cast<int>(stats.var.size()) != C)
        throw ShapeError("batchnorm running stats do not match channels " + std::to_string(C));
    const std::size_t hw = input.shape().plane();
    Tensor<T> out(input.shape());
    for (int c = 0; c < C; ++c) {
        const double scale = gamma[c] / std::sqrt(static_cast<double>(stats.var[c]) + epsilon);
        const T a = static_cast<T>(scale);
        const T b = static_cast<T>(beta[c] - scale * stats.mean[c]);
        for (int n = 0; n < input.n(); ++n) {
            const T* p = input.plane(n, c);
            T* o = out.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) o[i] = a * p[i] + b;
        }
    }
    return out;
}

template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, std::span<const T> gamma,
                            std::span<const T> beta, BatchNormStats<T>& stats, Mode mode,
                            double momentum, double epsilon, BatchNormCache<T>* cache) {
    if (mode == Mode::Train)
        return batchnorm_forward_train(input, gamma, beta, stats, momentum, epsilon, cache);
    return batchnorm_forward_eval(input, gamma, beta, stats, epsilon);
}

template <class T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& grad_out) {
    if (!cache.valid) throw UsageError("batchnorm_backward called without a forward cache");
    if (grad_out.shape() != cache.xhat.shape())
        shape_mismatch("batchnorm_backward grad_out does not match forward output", grad_out.shape(),
                       cache.xhat.shape());
    const int C = grad_out.c();
    const std::size_t hw = grad_out.shape().plane();
    const double count = static_cast<double>(hw) * grad_out.n();
    BatchNormGrads<T> g;
    g.input = Tensor<T>(grad_out.shape());
    g.gamma.assign(C, T(0));
    g.beta.assign(C, T(0));
    for (int c = 0; c < C; ++c) {
        double sg = 0.0;
        double sgx = 0.0;
        for (int n = 0; n < grad_out.n(); ++n) {
            const T* gy = grad_out.plane(n, c);
            const T* xh = cache.xhat.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                sg += gy[i];
                sgx += static_cast<double>(gy[i]) * xh[i];
            }
        }
        g.beta[c] = static_cast<T>(sg);
        g.gamma[c] = static_cast<T>(sgx);
        const double k = static_cast<double>(cache.gamma[c]) * cache.inv_std[c] / count;
        for (int n = 0; n < grad_out.n(); ++n) {
            const T* gy = grad_out.plane(n, c);
            const T* xh = cache.xhat.plane(n, c);
            T* gx = g.input.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i)
                gx[i] = static_cast<T>(k * (count * gy[i] - sg - xh[i] * sgx));
        }
    }
    return g;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> prelu_forward(const Tensor<T>& input, std::span<const T> slope, PreluCache<T>* cache) {
    if (static_cast<int>(slope.size()) != input.c())
        throw ShapeError("prelu slope length " + std::to_string(slope.size()) +
                         " does not match channels " + std::to_string(input.c()));
    Tensor<T> out(input.shape());
    const std::size_t hw = input.shape().plane();
    for (int n = 0; n < input.n(); ++n)
        for (int c = 0; c < input.c(); ++c) {
            const T* p = input.plane(n, c);
            T* o = out.plane(n, c);
            const T a = slope[c];
            for (std::size_t i = 0; i < hw; ++i) o[i] = p[i] >= T(0) ? p[i] : a * p[i];
        }
    if (cache) {
        cache->input = input;
        cache->slope.assign(slope.begin(), slope.end());
        cache->valid = true;
    }
    return out;
}

template <class T>
PreluGrads<T> prelu_backward(const PreluCache<T>& cache, const Tensor<T>& grad_out) {
    if (!cache.valid) throw UsageError("prelu_backward called without a forward cache");
    if (grad_out.shape() != cache.input.shape())
        shape_mismatch("prelu_backward grad_out does not match forward output", grad_out.shape(),
                       cache.input.shape());
    PreluGrads<T> g;
    g.input = Tensor<T>(grad_out.shape());
    g.slope.assign(grad_out.c(), T(0));
    const std::size_t hw = grad_out.shape().plane();
    for (int c = 0; c < grad_out.c(); ++c) {
        double ds = 0.0;
        const T a = cache.slope[c];
        for (int n = 0; n < grad_out.n(); ++n) {
            const T* x = cache.input.plane(n, c);
            const T* gy = grad_out.plane(n, c);
            T* gx = g.input.plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) {
                if (x[i] >= T(0)) {
                    gx[i] = gy[i];
                } else {
                    gx[i] = a * gy[i];
                    ds += static_cast<double>(x[i]) * gy[i];
                }
            }
        }
        g.slope[c] = static_cast<T>(ds);
    }
    return g;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    if (logits.c() < 2) throw ShapeError("softmax needs at least 2 channels, got " + to_string(logits.shape()));
    Tensor<T> out(logits.shape());
    const std::size_t hw = logits.shape().plane();
    const int C = logits.c();
    std::vector<double> e(C);
    for (int n = 0; n < logits.n(); ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.plane(n, c)[i]));
            double sum = 0.0;
            for (int c = 0; c < C; ++c) {
                e[c] = std::exp(static_cast<double>(logits.plane(n, c)[i]) - mx);
                sum += e[c];
            }
            for (int c = 0; c < C; ++c) out.plane(n, c)[i] = static_cast<T>(e[c] / sum);
        }
    return out;
}

template <class T>
LossResult<T> weighted_ce_loss(const Tensor<T>& probs, const LabelMap& labels,
                               const ClassWeights& weights) {
    const int C = probs.c();
    if (labels.n != probs.n() || labels.h != probs.h() || labels.w != probs.w())
        throw ShapeError("label map (" + std::to_string(labels.n) + "," + std::to_string(labels.h) +
                         "," + std::to_string(labels.w) + ") does not match probabilities " +
                         to_string(probs.shape()));
    if (static_cast<int>(weights.size()) != C)
        throw ShapeError("class weight count " + std::to_string(weights.size()) +
                         " does not match classes " + std::to_string(C));
    const std::size_t hw = probs.shape().plane();
    const std::size_t N = labels.size();
    LossResult<T> r;
    r.grad_logits = Tensor<T>(probs.shape());
    if (N == 0) return r;
    const double invN = 1.0 / static_cast<double>(N);
    double loss = 0.0;
    for (int n = 0; n < probs.n(); ++n)
        for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t vi = static_cast<std::size_t>(n) * hw + i;
            const std::int32_t y = labels.labels[vi];
            if (y < 0 || y >= C)
                throw DataError("label " + std::to_string(y) + " at voxel index " + std::to_string(vi) +
                                " outside [0," + std::to_string(C - 1) + "]");
            const double wy = weights[y];
            const double py = probs.plane(n, y)[i];
            loss -= wy * std::log(std::max(py, std::numeric_limits<double>::min()));
            for (int c = 0; c < C; ++c) {
                const double p = probs.plane(n, c)[i];
                r.grad_logits.plane(n, c)[i] = static_cast<T>(wy * invN * (p - (c == y ? 1.0 : 0.0)));
            }
        }
    r.loss = loss * invN;
    return r;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) shape_mismatch("add_elementwise shape mismatch", a.shape(), b.shape());
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
        shape_mismatch("concat_channels needs equal n,h,w", a.shape(), b.shape());
    Tensor<T> out({a.n(), a.c() + b.c(), a.h(), a.w()});
    const std::size_t ba = static_cast<std::size_t>(a.c()) * a.shape().plane();
    const std::size_t bb = static_cast<std::size_t>(b.c()) * b.shape().plane();
    for (int n = 0; n < a.n(); ++n) {
        std::copy_n(a.plane(n, 0), ba, out.plane(n, 0));
        std::copy_n(b.plane(n, 0), bb, out.plane(n, 0) + ba);
    }
    return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int channels_a) {
    if (channels_a < 0 || channels_a > t.c())
        throw ShapeError("split_channels at " + std::to_string(channels_a) + " for " + to_string(t.shape()));
    Tensor<T> a({t.n(), channels_a, t.h(), t.w()});
    Tensor<T> b({t.n(), t.c() - channels_a, t.h(), t.w()});
    const std::size_t ba = static_cast<std::size_t>(a.c()) * t.shape().plane();
    const std::size_t bb = static_cast<std::size_t>(b.c()) * t.shape().plane();
    for (int n = 0; n < t.n(); ++n) {
        std::copy_n(t.plane(n, 0), ba, a.plane(n, 0));
        std::copy_n(t.plane(n, 0) + ba, bb, b.plane(n, 0));
    }
    return {std::move(a), std::move(b)};
}

#define LSSEG_INSTANTIATE_OPS(T)                                                                   \
    template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int,  \
                                      int, ConvCache<T>*);                                         \
    template ConvGrads<T> conv2d_backward(const ConvCache<T>&, const Tensor<T>&, bool);             \
    template Tensor<T> transposed_conv2d_forward(const Tensor<T>&, const Tensor<T>&,                \
                                                 std::span<const T>, int, TransposedConvCache<T>*); \
    template ConvGrads<T> transposed_conv2d_backward(const TransposedConvCache<T>&,                 \
                                                     const Tensor<T>&);                            \
    template struct BatchNormStats<T>;                                                             \
    template Tensor<T> batchnorm_forward_train(const Tensor<T>&, std::span<const T>,               \
                                               std::span<const T>, BatchNormStats<T>&, double,      \
                                               double, BatchNormCache<T>*);                        \
    template Tensor<T> batchnorm_forward_eval(const Tensor<T>&, std::span<const T>,                \
                                              std::span<const T>, const BatchNormStats<T>&,         \
                                              double);                                             \
    template Tensor<T> batchnorm_forward(const Tensor<T>&, std::span<const T>, std::span<const T>, \
                                         BatchNormStats<T>&, Mode, double, double,                 \
                                         BatchNormCache<T>*);                                      \
    template BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>&, const Tensor<T>&);      \
    template Tensor<T> prelu_forward(const Tensor<T>&, std::span<const T>, PreluCache<T>*);        \
    template PreluGrads<T> prelu_backward(const PreluCache<T>&, const Tensor<T>&);                  \
    template Tensor<T> softmax_channels(const Tensor<T>&);                                         \
    template LossResult<T> weighted_ce_loss(const Tensor<T>&, const LabelMap&, const ClassWeights&); \
    template Tensor<T> add_elementwise(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                         \
    template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);

LSSEG_INSTANTIATE_OPS(float)
LSSEG_INSTANTIATE_OPS(double)

#undef LSSEG_INSTANTIATE_OPS

}  // namespace lsseg::ops
