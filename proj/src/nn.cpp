#include "subbench/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "subbench/error.hpp"

namespace subbench::nn {

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    data.assign(n, fill);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    std::size_t n = 1;
    for (int v : shape) n *= static_cast<std::size_t>(v);
    if (n != data.size()) throw DataError("tensor data does not match shape " + shape_string());
}

std::string Tensor::shape_string() const {
    std::ostringstream s;
    s << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
    s << ')';
    return s.str();
}

double init_scale(int fan_in) { return std::sqrt(2.0 / std::max(1, fan_in)); }

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* who) {
    if (x.shape.size() != rank) {
        throw DataError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " + x.shape_string());
    }
}

Parameter make_param(std::string name, std::vector<int> shape, bool trainable = true) {
    Parameter p;
    p.name = std::move(name);
    p.value = Tensor(shape);
    p.grad = Tensor(std::move(shape));
    p.trainable = trainable;
    return p;
}

void fill_normal(Tensor& t, Rng& rng, double scale) {
    for (auto& v : t.data) v = rng.normal() * scale;
}

// C = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, const double* b, double beta,
          double* c) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
                ta ? m : k, b, tb ? k : n, beta, c, n);
}

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// (C, H, W) -> (C*k*k, Ho*Wo)
void im2col(const double* x, int c, int h, int w, int k, int s, int p, int ho, int wo, double* col) {
    const int hw = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                double* row = col + static_cast<std::size_t>((ch * k + ki) * k + kj) * hw;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s - p + ki;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s - p + kj;
                        row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                ? x[(static_cast<std::size_t>(ch) * h + iy) * w + ix]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates into x.
void col2im(const double* col, int c, int h, int w, int k, int s, int p, int ho, int wo, double* x) {
    const int hw = ho * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const double* row = col + static_cast<std::size_t>((ch * k + ki) * k + kj) * hw;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s - p + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s - p + kj;
                        if (ix >= 0 && ix < w) x[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng)
    : in_(in_channels), out_(out_channels), k_(kernel), s_(stride), p_(padding),
      weight_(make_param("weight", {out_channels, in_channels, kernel, kernel})),
      bias_(make_param("bias", {out_channels})) {
    fill_normal(weight_.value, rng, init_scale(in_channels * kernel * kernel));
}

Tensor Conv2d::forward(const Tensor& x) {
    require_rank(x, 4, "conv2d");
    if (x.dim(1) != in_) throw DataError("conv2d: channel mismatch, got " + x.shape_string());
    input_ = x;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = conv_out(h, k_, s_, p_), wo = conv_out(w, k_, s_, p_);
    if (ho <= 0 || wo <= 0) throw DataError("conv2d: input too small " + x.shape_string());
    const int ckk = in_ * k_ * k_;
    Tensor y({n, out_, ho, wo});
    std::vector<double> col(static_cast<std::size_t>(ckk) * ho * wo);
    for (int b = 0; b < n; ++b) {
        im2col(x.data.data() + b * x.stride0(), in_, h, w, k_, s_, p_, ho, wo, col.data());
        double* yb = y.data.data() + b * y.stride0();
        for (int o = 0; o < out_; ++o) std::fill_n(yb + static_cast<std::size_t>(o) * ho * wo, ho * wo, bias_.value[o]);
        gemm(false, false, out_, ho * wo, ckk, 1.0, weight_.value.data.data(), col.data(), 1.0, yb);
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& g) {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const int ho = g.dim(2), wo = g.dim(3);
    const int ckk = in_ * k_ * k_;
    Tensor dx(input_.shape);
    std::vector<double> col(static_cast<std::size_t>(ckk) * ho * wo);
    std::vector<double> dcol(col.size());
    for (int b = 0; b < n; ++b) {
        const double* gb = g.data.data() + b * g.stride0();
        im2col(input_.data.data() + b * input_.stride0(), in_, h, w, k_, s_, p_, ho, wo, col.data());
        gemm(false, true, out_, ckk, ho * wo, 1.0, gb, col.data(), 1.0, weight_.grad.data.data());
        for (int o = 0; o < out_; ++o) {
            const double* go = gb + static_cast<std::size_t>(o) * ho * wo;
            bias_.grad[o] += std::accumulate(go, go + ho * wo, 0.0);
        }
        gemm(true, false, ckk, ho * wo, out_, 1.0, weight_.value.data.data(), gb, 0.0, dcol.data());
        col2im(dcol.data(), in_, h, w, k_, s_, p_, ho, wo, dx.data.data() + b * dx.stride0());
    }
    return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng)
    : in_(in_channels), out_(out_channels), k_(kernel), s_(stride), p_(padding),
      weight_(make_param("weight", {in_channels, out_channels, kernel, kernel})),
      bias_(make_param("bias", {out_channels})) {
    fill_normal(weight_.value, rng, init_scale(std::max(1, in_channels * kernel * kernel / (stride * stride))));
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    require_rank(x, 4, "conv_transpose2d");
    if (x.dim(1) != in_) throw DataError("conv_transpose2d: channel mismatch, got " + x.shape_string());
    input_ = x;
    const int n = x.dim(0), hi = x.dim(2), wi = x.dim(3);
    const int ho = (hi - 1) * s_ - 2 * p_ + k_, wo = (wi - 1) * s_ - 2 * p_ + k_;
    const int okk = out_ * k_ * k_;
    Tensor y({n, out_, ho, wo});
    std::vector<double> col(static_cast<std::size_t>(okk) * hi * wi);
    for (int b = 0; b < n; ++b) {
        gemm(true, false, okk, hi * wi, in_, 1.0, weight_.value.data.data(), x.data.data() + b * x.stride0(), 0.0,
             col.data());
        double* yb = y.data.data() + b * y.stride0();
        for (int o = 0; o < out_; ++o) std::fill_n(yb + static_cast<std::size_t>(o) * ho * wo, ho * wo, bias_.value[o]);
        col2im(col.data(), out_, ho, wo, k_, s_, p_, hi, wi, yb);
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& g) {
    const int n = input_.dim(0), hi = input_.dim(2), wi = input_.dim(3);
    const int ho = g.dim(2), wo = g.dim(3);
    const int okk = out_ * k_ * k_;
    Tensor dx(input_.shape);
    std::vector<double> dcol(static_cast<std::size_t>(okk) * hi * wi);
    for (int b = 0; b < n; ++b) {
        const double* gb = g.data.data() + b * g.stride0();
        for (int o = 0; o < out_; ++o) {
            const double* go = gb + static_cast<std::size_t>(o) * ho * wo;
            bias_.grad[o] += std::accumulate(go, go + ho * wo, 0.0);
        }
        im2col(gb, out_, ho, wo, k_, s_, p_, hi, wi, dcol.data());
        gemm(false, false, in_, hi * wi, okk, 1.0, weight_.value.data.data(), dcol.data(), 0.0,
             dx.data.data() + b * dx.stride0());
        gemm(false, true, in_, okk, hi * wi, 1.0, input_.data.data() + b * input_.stride0(), dcol.data(), 1.0,
             weight_.grad.data.data());
    }
    return dx;
}

void ConvTranspose2d::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, Rng& rng, double gain)
    : in_(in_features), out_(out_features), weight_(make_param("weight", {out_features, in_features})),
      bias_(make_param("bias", {out_features})) {
    fill_normal(weight_.value, rng, gain * init_scale(in_features));
}

Tensor Linear::forward(const Tensor& x) {
    if (x.shape.empty() || x.stride0() != static_cast<std::size_t>(in_)) {
        throw DataError("linear: expected " + std::to_string(in_) + " features per item, got " + x.shape_string());
    }
    input_shape_ = x.shape;
    input_ = Tensor({x.batch(), in_}, x.data);
    const int n = x.batch();
    Tensor y({n, out_});
    for (int b = 0; b < n; ++b) std::copy(bias_.value.data.begin(), bias_.value.data.end(), y.data.begin() + b * out_);
    gemm(false, true, n, out_, in_, 1.0, input_.data.data(), weight_.value.data.data(), 1.0, y.data.data());
    return y;
}

Tensor Linear::backward(const Tensor& g) {
    const int n = input_.batch();
    gemm(true, false, out_, in_, n, 1.0, g.data.data(), input_.data.data(), 1.0, weight_.grad.data.data());
    for (int b = 0; b < n; ++b) {
        for (int o = 0; o < out_; ++o) bias_.grad[o] += g[static_cast<std::size_t>(b) * out_ + o];
    }
    Tensor dx(input_shape_);
    gemm(false, false, n, in_, out_, 1.0, g.data.data(), weight_.value.data.data(), 0.0, dx.data.data());
    return dx;
}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, double momentum, double eps)
    : c_(channels), momentum_(momentum), eps_(eps), gamma_(make_param("gamma", {channels})),
      beta_(make_param("beta", {channels})), running_mean_(make_param("running_mean", {channels}, false)),
      running_var_(make_param("running_var", {channels}, false)) {
    std::fill(gamma_.value.data.begin(), gamma_.value.data.end(), 1.0);
    std::fill(running_var_.value.data.begin(), running_var_.value.data.end(), 1.0);
}

Tensor BatchNorm::forward(const Tensor& x) {
    if ((x.shape.size() != 4 && x.shape.size() != 2) || x.dim(1) != c_) {
        throw DataError("batchnorm: unexpected input " + x.shape_string());
    }
    shape_ = x.shape;
    const int n = x.dim(0);
    const std::size_t spatial = x.shape.size() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
    const double m = static_cast<double>(n) * spatial;
    Tensor y(x.shape);
    xhat_ = Tensor(x.shape);
    inv_std_.assign(c_, 0.0);
    for (int c = 0; c < c_; ++c) {
        double mean, var;
        if (training_) {
            double sum = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* p = x.data.data() + (static_cast<std::size_t>(b) * c_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
            }
            mean = sum / m;
            double sq = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* p = x.data.data() + (static_cast<std::size_t>(b) * c_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            var = sq / m;
            const double unbiased = m > 1 ? sq / (m - 1) : var;
            running_mean_.value[c] = (1 - momentum_) * running_mean_.value[c] + momentum_ * mean;
            running_var_.value[c] = (1 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
        } else {
            mean = running_mean_.value[c];
            var = running_var_.value[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double xh = (x[off + i] - mean) * inv;
                xhat_[off + i] = xh;
                y[off + i] = gamma_.value[c] * xh + beta_.value[c];
            }
        }
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& g) {
    const int n = shape_[0];
    const std::size_t spatial = shape_.size() == 4 ? static_cast<std::size_t>(shape_[2]) * shape_[3] : 1;
    const double m = static_cast<double>(n) * spatial;
    Tensor dx(shape_);
    for (int c = 0; c < c_; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_g += g[off + i];
                sum_gx += g[off + i] * xhat_[off + i];
            }
        }
        gamma_.grad[c] += sum_gx;
        beta_.grad[c] += sum_g;
        const double k = gamma_.value[c] * inv_std_[c];
        for (int b = 0; b < n; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * c_ + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                dx[off + i] = training_ ? k / m * (m * g[off + i] - sum_g - xhat_[off + i] * sum_gx) : k * g[off + i];
            }
        }
    }
    return dx;
}

void BatchNorm::collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

// ----------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x) {
    input_ = x;
    Tensor y = x;
    for (auto& v : y.data) v = std::max(v, 0.0);
    return y;
}

Tensor ReLU::backward(const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (input_[i] <= 0.0) dx[i] = 0.0;
    }
    return dx;
}

Tensor LeakyReLU::forward(const Tensor& x) {
    input_ = x;
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0 ? v : slope_ * v;
    return y;
}

Tensor LeakyReLU::backward(const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (input_[i] <= 0.0) dx[i] *= slope_;
    }
    return dx;
}

Tensor Tanh::forward(const Tensor& x) {
    output_ = x;
    for (auto& v : output_.data) v = std::tanh(v);
    return output_;
}

Tensor Tanh::backward(const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - output_[i] * output_[i];
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    output_ = x;
    for (auto& v : output_.data) v = 1.0 / (1.0 + std::exp(-v));
    return output_;
}

Tensor Sigmoid::backward(const Tensor& g) {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (1.0 - output_[i]);
    return dx;
}

// --------------------------------------------------------------- pooling

Tensor MaxPool2d::forward(const Tensor& x) {
    require_rank(x, 4, "maxpool2d");
    input_shape_ = x.shape;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw DataError("maxpool2d: input too small " + x.shape_string());
    Tensor y({n, c, ho, wo});
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int bc = 0; bc < n * c; ++bc) {
        const std::size_t base = static_cast<std::size_t>(bc) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++o) {
                std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t i = base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
                        if (x[i] > x[best]) best = i;
                    }
                }
                argmax_[o] = best;
                y[o] = x[best];
            }
        }
    }
    return y;
}

Tensor MaxPool2d::backward(const Tensor& g) {
    Tensor dx(input_shape_);
    for (std::size_t o = 0; o < g.size(); ++o) dx[argmax_[o]] += g[o];
    return dx;
}

Tensor AvgPool2d::forward(const Tensor& x) {
    require_rank(x, 4, "avgpool2d");
    input_shape_ = x.shape;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw DataError("avgpool2d: input too small " + x.shape_string());
    Tensor y({n, c, ho, wo});
    std::size_t o = 0;
    for (int bc = 0; bc < n * c; ++bc) {
        const double* p = x.data.data() + static_cast<std::size_t>(bc) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++o) {
                const double* q = p + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                y[o] = 0.25 * (q[0] + q[1] + q[w] + q[w + 1]);
            }
        }
    }
    return y;
}

Tensor AvgPool2d::backward(const Tensor& g) {
    Tensor dx(input_shape_);
    const int c = input_shape_[1], h = input_shape_[2], w = input_shape_[3];
    const int ho = h / 2, wo = w / 2;
    std::size_t o = 0;
    for (int bc = 0; bc < input_shape_[0] * c; ++bc) {
        double* p = dx.data.data() + static_cast<std::size_t>(bc) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++o) {
                double* q = p + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                const double v = 0.25 * g[o];
                q[0] += v;
                q[1] += v;
                q[w] += v;
                q[w + 1] += v;
            }
        }
    }
    return dx;
}

Tensor Upsample2d::forward(const Tensor& x) {
    require_rank(x, 4, "upsample2d");
    input_shape_ = x.shape;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c, 2 * h, 2 * w});
    for (int bc = 0; bc < n * c; ++bc) {
        const double* p = x.data.data() + static_cast<std::size_t>(bc) * h * w;
        double* q = y.data.data() + static_cast<std::size_t>(bc) * 4 * h * w;
        for (int yy = 0; yy < 2 * h; ++yy) {
            for (int xx = 0; xx < 2 * w; ++xx) q[static_cast<std::size_t>(yy) * 2 * w + xx] = p[(yy / 2) * w + xx / 2];
        }
    }
    return y;
}

Tensor Upsample2d::backward(const Tensor& g) {
    Tensor dx(input_shape_);
    const int c = input_shape_[1], h = input_shape_[2], w = input_shape_[3];
    for (int bc = 0; bc < input_shape_[0] * c; ++bc) {
        double* p = dx.data.data() + static_cast<std::size_t>(bc) * h * w;
        const double* q = g.data.data() + static_cast<std::size_t>(bc) * 4 * h * w;
        for (int yy = 0; yy < 2 * h; ++yy) {
            for (int xx = 0; xx < 2 * w; ++xx) p[(yy / 2) * w + xx / 2] += q[static_cast<std::size_t>(yy) * 2 * w + xx];
        }
    }
    return dx;
}

// ------------------------------------------------------------- PixelNorm

Tensor PixelNorm::forward(const Tensor& x) {
    if (x.shape.size() != 4 && x.shape.size() != 2) throw DataError("pixelnorm: unexpected input " + x.shape_string());
    input_ = x;
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t spatial = x.shape.size() == 4 ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : 1;
    scale_.assign(static_cast<std::size_t>(n) * spatial, 0.0);
    Tensor y(x.shape);
    for (int b = 0; b < n; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
            double sq = 0.0;
            for (int ch = 0; ch < c; ++ch) sq += x[base + ch * spatial + i] * x[base + ch * spatial + i];
            const double s = 1.0 / std::sqrt(sq / c + eps_);
            scale_[b * spatial + i] = s;
            for (int ch = 0; ch < c; ++ch) y[base + ch * spatial + i] = x[base + ch * spatial + i] * s;
        }
    }
    return y;
}

Tensor PixelNorm::backward(const Tensor& g) {
    const int n = input_.dim(0), c = input_.dim(1);
    const std::size_t spatial = input_.shape.size() == 4 ? static_cast<std::size_t>(input_.dim(2)) * input_.dim(3) : 1;
    Tensor dx(input_.shape);
    for (int b = 0; b < n; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * c * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
            const double s = scale_[b * spatial + i];
            double dot = 0.0;
            for (int ch = 0; ch < c; ++ch) dot += g[base + ch * spatial + i] * input_[base + ch * spatial + i];
            const double k = s * s * s * dot / c;
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t j = base + ch * spatial + i;
                dx[j] = s * g[j] - k * input_[j];
            }
        }
    }
    return dx;
}

// ------------------------------------------------------- MinibatchStdDev

Tensor MinibatchStdDev::forward(const Tensor& x) {
    require_rank(x, 4, "minibatch_stddev");
    input_ = x;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t f = x.stride0();
    mean_.assign(f, 0.0);
    std_.assign(f, 0.0);
    for (int b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < f; ++i) mean_[i] += x[b * f + i];
    }
    for (auto& m : mean_) m /= n;
    double avg = 0.0;
    for (std::size_t i = 0; i < f; ++i) {
        double var = 0.0;
        for (int b = 0; b < n; ++b) var += (x[b * f + i] - mean_[i]) * (x[b * f + i] - mean_[i]);
        std_[i] = std::sqrt(var / n + eps_);
        avg += std_[i];
    }
    avg /= static_cast<double>(f);

    Tensor y({n, c + 1, h, w});
    const std::size_t fo = y.stride0();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        std::copy_n(x.data.begin() + b * f, f, y.data.begin() + b * fo);
        std::fill_n(y.data.begin() + b * fo + f, hw, avg);
    }
    return y;
}

Tensor MinibatchStdDev::backward(const Tensor& g) {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const std::size_t f = input_.stride0();
    const std::size_t fo = g.stride0();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    double g_avg = 0.0;
    for (int b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < hw; ++i) g_avg += g[b * fo + f + i];
    }
    Tensor dx(input_.shape);
    for (int b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < f; ++i) {
            const double dstd = (input_[b * f + i] - mean_[i]) / (n * std_[i]);
            dx[b * f + i] = g[b * fo + i] + g_avg * dstd / static_cast<double>(f);
        }
    }
    return dx;
}

// --------------------------------------------------------------- Reshape

Tensor Reshape::forward(const Tensor& x) {
    input_shape_ = x.shape;
    std::vector<int> shape{x.batch()};
    shape.insert(shape.end(), item_shape_.begin(), item_shape_.end());
    return Tensor(std::move(shape), x.data);
}

Tensor Reshape::backward(const Tensor& g) { return Tensor(input_shape_, g.data); }

// ------------------------------------------------------------ Sequential

Sequential& Sequential::add(ModulePtr m) {
    layers_.push_back(std::move(m));
    return *this;
}

Tensor Sequential::forward(const Tensor& x) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

Tensor Sequential::backward(const Tensor& g) {
    Tensor d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
}

void Sequential::collect(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l->collect(out);
}

void Sequential::set_training(bool t) {
    for (auto& l : layers_) l->set_training(t);
}

std::vector<Parameter*> parameters_of(Module& m) {
    std::vector<Parameter*> out;
    m.collect(out);
    return out;
}

void zero_grad(const std::vector<Parameter*>& params) {
    for (auto* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

void export_parameters(const std::string& prefix, const std::vector<Parameter*>& params, std::vector<NamedArray>& out) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        NamedArray a;
        a.name = prefix + "." + std::to_string(i) + "." + params[i]->name;
        a.shape = params[i]->value.shape;
        a.data.assign(params[i]->value.data.begin(), params[i]->value.data.end());
        out.push_back(std::move(a));
    }
}

void import_parameters(const std::string& prefix, const std::vector<Parameter*>& params, const Container& c) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& a = c.array(prefix + "." + std::to_string(i) + "." + params[i]->name);
        if (a.shape != params[i]->value.shape) throw DataError("parameter shape mismatch for " + a.name);
        std::copy(a.data.begin(), a.data.end(), params[i]->value.data.begin());
    }
}

// ------------------------------------------------------------------ Adam

Adam::Adam(std::vector<Parameter*> params, AdamOptions opts) : opts_(opts) {
    for (auto* p : params) {
        if (!p->trainable) continue;
        params_.push_back(p);
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = opts_.beta1 * m[i] + (1 - opts_.beta1) * g;
            v[i] = opts_.beta2 * v[i] + (1 - opts_.beta2) * g * g;
            p.value[i] -= opts_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
        }
    }
}

void Adam::zero_grad() { nn::zero_grad(params_); }

// ---------------------------------------------------------------- losses

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 2, "softmax");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor p(logits.shape);
    for (int b = 0; b < n; ++b) {
        const double* z = logits.data.data() + static_cast<std::size_t>(b) * k;
        const double mx = *std::max_element(z, z + k);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += p[b * k + j] = std::exp(z[j] - mx);
        for (int j = 0; j < k; ++j) p[b * k + j] /= sum;
    }
    return p;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const Tensor p = softmax(logits);
    const int n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != static_cast<std::size_t>(n)) throw DataError("softmax_cross_entropy: label count mismatch");
    LossAndGrad out;
    out.grad = p;
    for (int b = 0; b < n; ++b) {
        const int y = labels[b];
        if (y < 0 || y >= k) throw DataError("softmax_cross_entropy: label out of range");
        out.loss -= std::log(std::max(p[b * k + y], 1e-300));
        out.grad[b * k + y] -= 1.0;
    }
    out.loss /= n;
    for (auto& g : out.grad.data) g /= n;
    return out;
}

}  // namespace subbench::nn
