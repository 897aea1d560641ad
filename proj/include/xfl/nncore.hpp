#ifndef XFL_NNCORE_HPP
#define XFL_NNCORE_HPP

/// @file nncore.hpp Minimal trainable network engine: dense/conv layers with
/// batch norm, dropout and pooling, SGD with momentum and a cosine schedule,
/// per-layer freezing for fine-tuning studies, and bit-stable checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xfl/dataforge.hpp"
#include "xfl/error.hpp"
#include "xfl/numkit.hpp"

namespace xfl::nncore {

using numkit::RngStream;

/* Tensors
 * -------
 */

struct Shape {
    std::size_t n = 0, h = 0, w = 0, c = 0; // batch, height, width, channels (NHWC)

    std::size_t features() const { return h * w * c; }
    std::size_t total() const { return n * h * w * c; }
    bool same_features(const Shape &o) const { return h == o.h && w == o.w && c == o.c; }
};

struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), v(s.total(), 0.0) {}

    double *row(std::size_t n) { return v.data() + n * shape.features(); }
    const double *row(std::size_t n) const { return v.data() + n * shape.features(); }
};

enum class Mode { Train, Eval };
enum class LayerKind : std::uint32_t {
    Dense = 0,
    Conv2d = 1,
    BatchNorm = 2,
    ReLU = 3,
    Dropout = 4,
    MaxPool2x2 = 5,
    Flatten = 6,
    SoftmaxOutput = 7
};

inline const char *layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::MaxPool2x2: return "maxpool2x2";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::SoftmaxOutput: return "softmax_output";
    }
    return "?";
}

/// Declarative layer description used to build networks and to encode
/// checkpoints. `units` doubles as the filter count for Conv2d.
struct LayerSpec {
    LayerKind kind;
    std::size_t units = 0;
    double rate = 0.0; // dropout keep-out probability, in [0,1)

    static LayerSpec dense(std::size_t units) { return {LayerKind::Dense, units, 0.0}; }
    static LayerSpec conv(std::size_t filters) { return {LayerKind::Conv2d, filters, 0.0}; }
    static LayerSpec batchnorm() { return {LayerKind::BatchNorm, 0, 0.0}; }
    static LayerSpec relu() { return {LayerKind::ReLU, 0, 0.0}; }
    static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, rate}; }
    static LayerSpec maxpool() { return {LayerKind::MaxPool2x2, 0, 0.0}; }
    static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0.0}; }
    static LayerSpec softmax_output(std::size_t classes) {
        return {LayerKind::SoftmaxOutput, classes, 0.0};
    }
};

/* Small GEMM kernels (row-major, accumulate into C)
 * -------------------------------------------------
 */

namespace detail {

// C[MxN] += A[MxK] * B[KxN]
inline void gemm(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *ai = a + i * k;
        double *ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double aip = ai[p];
            if (aip == 0.0) continue;
            const double *bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C[KxN] += A^T[KxM] * B[MxN], with A stored MxK
inline void gemm_at_b(const double *a, const double *b, double *c, std::size_t m,
                      std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *ai = a + i * k;
        const double *bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double aip = ai[p];
            if (aip == 0.0) continue;
            double *cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

// C[MxK] += A[MxN] * B^T[NxK], with B stored KxN
inline void gemm_a_bt(const double *a, const double *b, double *c, std::size_t m,
                      std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *ai = a + i * n;
        double *ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double *bp = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] += acc;
        }
    }
}

inline void fan_in_uniform(std::vector<double> &w, std::size_t fan_in, RngStream &rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double &x : w) x = (2.0 * rng.next_double() - 1.0) * bound;
}

} // namespace detail

/* Layers
 * ------
 */

class Layer {
public:
    virtual ~Layer() = default;
    virtual LayerKind kind() const = 0;
    virtual LayerSpec spec() const = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual Shape output_shape(const Shape &in) const = 0;

    /// Allocate and initialize parameters for the given input shape.
    virtual void init(const Shape &in, RngStream &rng) { in_shape_ = in; }

    virtual Tensor forward(const Tensor &in, Mode mode, RngStream *dropout_rng) = 0;
    virtual Tensor backward(const Tensor &dout) = 0;

    virtual std::vector<double> *params() { return nullptr; }
    virtual std::vector<double> *grads() { return nullptr; }
    virtual std::vector<double> *aux_state() { return nullptr; } // BN running stats

    void zero_grads() {
        if (auto *g = grads()) std::fill(g->begin(), g->end(), 0.0);
    }

    bool frozen = false; // set by Network::apply_freeze_plan
    int group = -1;      // trainable-layer group this layer belongs to (1-based)

protected:
    Shape in_shape_; // h/w/c of the expected input (n varies per batch)
};

/** Affine map shared by Dense and SoftmaxOutput: y = x W + b with W stored
 * input-major [in x out]. Parameters live in one flat vector (W then b). */
class AffineLayer : public Layer {
public:
    explicit AffineLayer(std::size_t units) : units_(units) {}

    void init(const Shape &in, RngStream &rng) override {
        in_shape_ = in;
        in_features_ = in.features();
        params_.resize(in_features_ * units_ + units_);
        grads_.assign(params_.size(), 0.0);
        detail::fan_in_uniform(params_, in_features_, rng);
    }

    Shape output_shape(const Shape &in) const override { return {in.n, 1, 1, units_}; }

    std::vector<double> *params() override { return &params_; }
    std::vector<double> *grads() override { return &grads_; }

    std::size_t in_features() const { return in_features_; }
    std::size_t units() const { return units_; }

    double *weights() { return params_.data(); }
    const double *weights() const { return params_.data(); }
    double *bias() { return params_.data() + in_features_ * units_; }

protected:
    Tensor affine_forward(const Tensor &in) {
        if (in.shape.features() != in_features_)
            throw numeric_error("ShapeMismatch",
                                std::string(layer_kind_name(kind())) + " expects " +
                                    std::to_string(in_features_) + " features, got " +
                                    std::to_string(in.shape.features()));
        cached_in_ = in;
        Tensor out(output_shape(in.shape));
        const double *b = params_.data() + in_features_ * units_;
        for (std::size_t r = 0; r < in.shape.n; ++r)
            std::memcpy(out.row(r), b, units_ * sizeof(double));
        detail::gemm(in.v.data(), params_.data(), out.v.data(), in.shape.n, in_features_,
                     units_);
        return out;
    }

    Tensor affine_backward(const Tensor &dout) {
        const std::size_t n = dout.shape.n;
        // dW += x^T dout ; db += column sums ; dx = dout W^T
        detail::gemm_at_b(cached_in_.v.data(), dout.v.data(), grads_.data(), n, in_features_,
                          units_);
        double *db = grads_.data() + in_features_ * units_;
        for (std::size_t r = 0; r < n; ++r) {
            const double *dr = dout.row(r);
            for (std::size_t j = 0; j < units_; ++j) db[j] += dr[j];
        }
        Tensor din(cached_in_.shape);
        detail::gemm_a_bt(dout.v.data(), params_.data(), din.v.data(), n, units_,
                          in_features_);
        return din;
    }

    std::size_t units_;
    std::size_t in_features_ = 0;
    std::vector<double> params_, grads_;
    Tensor cached_in_;
};

class DenseLayer final : public AffineLayer {
public:
    using AffineLayer::AffineLayer;
    LayerKind kind() const override { return LayerKind::Dense; }
    LayerSpec spec() const override { return LayerSpec::dense(units_); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }

    Tensor forward(const Tensor &in, Mode, RngStream *) override { return affine_forward(in); }
    Tensor backward(const Tensor &dout) override { return affine_backward(dout); }
};

/** Affine map into class logits plus a numerically safe softmax. The logits
 * and their log-sum-exp stay cached so cross-entropy and attribution can
 * work in log space. backward() takes gradients w.r.t. the logits. */
class SoftmaxOutputLayer final : public AffineLayer {
public:
    using AffineLayer::AffineLayer;
    LayerKind kind() const override { return LayerKind::SoftmaxOutput; }
    LayerSpec spec() const override { return LayerSpec::softmax_output(units_); }
    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<SoftmaxOutputLayer>(*this);
    }

    Tensor forward(const Tensor &in, Mode, RngStream *) override {
        logits_ = affine_forward(in);
        lse_.resize(logits_.shape.n);
        Tensor probs(logits_.shape);
        for (std::size_t r = 0; r < logits_.shape.n; ++r) {
            const double *l = logits_.row(r);
            double m = l[0];
            for (std::size_t j = 1; j < units_; ++j) m = std::max(m, l[j]);
            double s = 0.0;
            for (std::size_t j = 0; j < units_; ++j) s += std::exp(l[j] - m);
            lse_[r] = m + std::log(s);
            double *p = probs.row(r);
            for (std::size_t j = 0; j < units_; ++j) p[j] = std::exp(l[j] - lse_[r]);
        }
        return probs;
    }

    Tensor backward(const Tensor &dlogits) override { return affine_backward(dlogits); }

    const Tensor &logits() const { return logits_; }
    /// log p(class y) for row r, computed in log space.
    double log_prob(std::size_t r, std::size_t y) const {
        return logits_.row(r)[y] - lse_[r];
    }

private:
    Tensor logits_;
    std::vector<double> lse_;
};

/** 3x3 stride-1 convolution with zero padding 1 (shape preserving), NHWC,
 * implemented as im2col + GEMM. */
class Conv2dLayer final : public Layer {
public:
    explicit Conv2dLayer(std::size_t filters) : filters_(filters) {}
    LayerKind kind() const override { return LayerKind::Conv2d; }
    LayerSpec spec() const override { return LayerSpec::conv(filters_); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dLayer>(*this); }

    void init(const Shape &in, RngStream &rng) override {
        in_shape_ = in;
        cin_ = in.c;
        params_.resize(9 * cin_ * filters_ + filters_);
        grads_.assign(params_.size(), 0.0);
        detail::fan_in_uniform(params_, 9 * cin_, rng);
    }

    Shape output_shape(const Shape &in) const override { return {in.n, in.h, in.w, filters_}; }

    std::vector<double> *params() override { return &params_; }
    std::vector<double> *grads() override { return &grads_; }

    Tensor forward(const Tensor &in, Mode, RngStream *) override {
        if (in.shape.c != cin_)
            throw numeric_error("ShapeMismatch", "conv2d expects " + std::to_string(cin_) +
                                                     " channels, got " +
                                                     std::to_string(in.shape.c));
        in_cached_shape_ = in.shape;
        const std::size_t n = in.shape.n, h = in.shape.h, w = in.shape.w;
        const std::size_t patch = 9 * cin_;
        const std::size_t m = n * h * w;

        cols_.assign(m * patch, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
            const double *img = in.row(b);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double *col = cols_.data() + ((b * h + y) * w + x) * patch;
                    for (int ky = 0; ky < 3; ++ky) {
                        int sy = static_cast<int>(y) + ky - 1;
                        if (sy < 0 || sy >= static_cast<int>(h)) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int sx = static_cast<int>(x) + kx - 1;
                            if (sx < 0 || sx >= static_cast<int>(w)) continue;
                            std::memcpy(col + (ky * 3 + kx) * cin_,
                                        img + (static_cast<std::size_t>(sy) * w + sx) * cin_,
                                        cin_ * sizeof(double));
                        }
                    }
                }
            }
        }

        Tensor out(output_shape(in.shape));
        const double *bias = params_.data() + patch * filters_;
        for (std::size_t r = 0; r < m; ++r)
            std::memcpy(out.v.data() + r * filters_, bias, filters_ * sizeof(double));
        detail::gemm(cols_.data(), params_.data(), out.v.data(), m, patch, filters_);
        return out;
    }

    Tensor backward(const Tensor &dout) override {
        const std::size_t n = in_cached_shape_.n, h = in_cached_shape_.h,
                          w = in_cached_shape_.w;
        const std::size_t patch = 9 * cin_;
        const std::size_t m = n * h * w;

        detail::gemm_at_b(cols_.data(), dout.v.data(), grads_.data(), m, patch, filters_);
        double *db = grads_.data() + patch * filters_;
        for (std::size_t r = 0; r < m; ++r) {
            const double *dr = dout.v.data() + r * filters_;
            for (std::size_t f = 0; f < filters_; ++f) db[f] += dr[f];
        }

        std::vector<double> dcols(m * patch, 0.0);
        detail::gemm_a_bt(dout.v.data(), params_.data(), dcols.data(), m, filters_, patch);

        Tensor din(in_cached_shape_);
        for (std::size_t b = 0; b < n; ++b) {
            double *img = din.row(b);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double *col = dcols.data() + ((b * h + y) * w + x) * patch;
                    for (int ky = 0; ky < 3; ++ky) {
                        int sy = static_cast<int>(y) + ky - 1;
                        if (sy < 0 || sy >= static_cast<int>(h)) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int sx = static_cast<int>(x) + kx - 1;
                            if (sx < 0 || sx >= static_cast<int>(w)) continue;
                            double *dst =
                                img + (static_cast<std::size_t>(sy) * w + sx) * cin_;
                            const double *src = col + (ky * 3 + kx) * cin_;
                            for (std::size_t ci = 0; ci < cin_; ++ci) dst[ci] += src[ci];
                        }
                    }
                }
            }
        }
        return din;
    }

private:
    std::size_t filters_, cin_ = 0;
    std::vector<double> params_, grads_;
    std::vector<double> cols_;
    Shape in_cached_shape_;
};

/** Per-channel batch normalization over N*H*W with learnable scale/shift.
 * Frozen instances run on their running statistics even in Train mode and
 * never touch them, which is what makes "frozen" bitwise-testable. */
class BatchNormLayer final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::BatchNorm; }
    LayerSpec spec() const override { return LayerSpec::batchnorm(); }
    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<BatchNormLayer>(*this);
    }

    void init(const Shape &in, RngStream &) override {
        in_shape_ = in;
        c_ = in.c;
        params_.assign(2 * c_, 0.0);
        for (std::size_t i = 0; i < c_; ++i) params_[i] = 1.0; // gamma
        grads_.assign(params_.size(), 0.0);
        running_.assign(2 * c_, 0.0); // mean then var
        for (std::size_t i = 0; i < c_; ++i) running_[c_ + i] = 1.0;
    }

    Shape output_shape(const Shape &in) const override { return in; }
    std::vector<double> *params() override { return &params_; }
    std::vector<double> *grads() override { return &grads_; }
    std::vector<double> *aux_state() override { return &running_; }

    Tensor forward(const Tensor &in, Mode mode, RngStream *) override {
        const std::size_t m = in.shape.n * in.shape.h * in.shape.w;
        const double *gamma = params_.data();
        const double *beta = params_.data() + c_;
        Tensor out(in.shape);
        train_pass_ = (mode == Mode::Train && !frozen);

        if (train_pass_) {
            mean_.assign(c_, 0.0);
            var_.assign(c_, 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                const double *x = in.v.data() + r * c_;
                for (std::size_t ch = 0; ch < c_; ++ch) mean_[ch] += x[ch];
            }
            for (std::size_t ch = 0; ch < c_; ++ch) mean_[ch] /= static_cast<double>(m);
            for (std::size_t r = 0; r < m; ++r) {
                const double *x = in.v.data() + r * c_;
                for (std::size_t ch = 0; ch < c_; ++ch) {
                    double d = x[ch] - mean_[ch];
                    var_[ch] += d * d;
                }
            }
            for (std::size_t ch = 0; ch < c_; ++ch) var_[ch] /= static_cast<double>(m);

            inv_std_.resize(c_);
            for (std::size_t ch = 0; ch < c_; ++ch)
                inv_std_[ch] = 1.0 / std::sqrt(var_[ch] + kEps);
            for (std::size_t ch = 0; ch < c_; ++ch) {
                running_[ch] = (1.0 - kMomentum) * running_[ch] + kMomentum * mean_[ch];
                running_[c_ + ch] = (1.0 - kMomentum) * running_[c_ + ch] + kMomentum * var_[ch];
            }

            xhat_.resize(in.v.size());
            for (std::size_t r = 0; r < m; ++r) {
                const double *x = in.v.data() + r * c_;
                double *xh = xhat_.data() + r * c_;
                double *y = out.v.data() + r * c_;
                for (std::size_t ch = 0; ch < c_; ++ch) {
                    xh[ch] = (x[ch] - mean_[ch]) * inv_std_[ch];
                    y[ch] = gamma[ch] * xh[ch] + beta[ch];
                }
            }
        } else {
            eval_scale_.resize(c_);
            for (std::size_t ch = 0; ch < c_; ++ch)
                eval_scale_[ch] = gamma[ch] / std::sqrt(running_[c_ + ch] + kEps);
            for (std::size_t r = 0; r < m; ++r) {
                const double *x = in.v.data() + r * c_;
                double *y = out.v.data() + r * c_;
                for (std::size_t ch = 0; ch < c_; ++ch)
                    y[ch] = eval_scale_[ch] * (x[ch] - running_[ch]) + beta[ch];
            }
        }
        return out;
    }

    Tensor backward(const Tensor &dout) override {
        const std::size_t m = dout.shape.n * dout.shape.h * dout.shape.w;
        const double *gamma = params_.data();
        Tensor din(dout.shape);

        if (!train_pass_) {
            // running-stat pass is an affine map per channel
            for (std::size_t r = 0; r < m; ++r) {
                const double *dy = dout.v.data() + r * c_;
                double *dx = din.v.data() + r * c_;
                for (std::size_t ch = 0; ch < c_; ++ch) dx[ch] = dy[ch] * eval_scale_[ch];
            }
            return din;
        }

        std::vector<double> sum_dy(c_, 0.0), sum_dy_xhat(c_, 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            const double *dy = dout.v.data() + r * c_;
            const double *xh = xhat_.data() + r * c_;
            for (std::size_t ch = 0; ch < c_; ++ch) {
                sum_dy[ch] += dy[ch];
                sum_dy_xhat[ch] += dy[ch] * xh[ch];
            }
        }
        double *dgamma = grads_.data();
        double *dbeta = grads_.data() + c_;
        for (std::size_t ch = 0; ch < c_; ++ch) {
            dgamma[ch] += sum_dy_xhat[ch];
            dbeta[ch] += sum_dy[ch];
        }
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
            const double *dy = dout.v.data() + r * c_;
            const double *xh = xhat_.data() + r * c_;
            double *dx = din.v.data() + r * c_;
            for (std::size_t ch = 0; ch < c_; ++ch) {
                dx[ch] = gamma[ch] * inv_std_[ch] *
                         (dy[ch] - inv_m * sum_dy[ch] - inv_m * xh[ch] * sum_dy_xhat[ch]);
            }
        }
        return din;
    }

    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

private:
    std::size_t c_ = 0;
    std::vector<double> params_, grads_;
    std::vector<double> running_; // mean[c] then var[c]
    std::vector<double> mean_, var_, inv_std_, xhat_, eval_scale_;
    bool train_pass_ = false;
};

class ReluLayer final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::ReLU; }
    LayerSpec spec() const override { return LayerSpec::relu(); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ReluLayer>(*this); }
    Shape output_shape(const Shape &in) const override { return in; }

    Tensor forward(const Tensor &in, Mode, RngStream *) override {
        mask_.resize(in.v.size());
        Tensor out(in.shape);
        for (std::size_t i = 0; i < in.v.size(); ++i) {
            bool on = in.v[i] > 0.0;
            mask_[i] = on;
            out.v[i] = on ? in.v[i] : 0.0;
        }
        return out;
    }

    Tensor backward(const Tensor &dout) override {
        Tensor din(dout.shape);
        for (std::size_t i = 0; i < dout.v.size(); ++i)
            din.v[i] = mask_[i] ? dout.v[i] : 0.0;
        return din;
    }

private:
    std::vector<char> mask_;
};

/** Inverted dropout: surviving activations are scaled by 1/(1-rate) during
 * training so Eval mode is the identity with matching expectation. */
class DropoutLayer final : public Layer {
public:
    explicit DropoutLayer(double rate) : rate_(rate) {
        if (!(rate >= 0.0 && rate < 1.0))
            throw config_error("ConfigInvalid", "dropout rate must lie in [0,1)");
    }
    LayerKind kind() const override { return LayerKind::Dropout; }
    LayerSpec spec() const override { return LayerSpec::dropout(rate_); }
    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<DropoutLayer>(*this);
    }
    Shape output_shape(const Shape &in) const override { return in; }

    Tensor forward(const Tensor &in, Mode mode, RngStream *rng) override {
        if (mode == Mode::Eval || rate_ == 0.0) {
            active_ = false;
            return in;
        }
        if (rng == nullptr)
            throw numeric_error("MissingRng", "dropout in Train mode needs an RNG stream");
        active_ = true;
        const double keep_scale = 1.0 / (1.0 - rate_);
        mask_.resize(in.v.size());
        Tensor out(in.shape);
        for (std::size_t i = 0; i < in.v.size(); ++i) {
            double m = rng->next_double() >= rate_ ? keep_scale : 0.0;
            mask_[i] = m;
            out.v[i] = in.v[i] * m;
        }
        return out;
    }

    Tensor backward(const Tensor &dout) override {
        if (!active_) return dout;
        Tensor din(dout.shape);
        for (std::size_t i = 0; i < dout.v.size(); ++i) din.v[i] = dout.v[i] * mask_[i];
        return din;
    }

    double rate() const { return rate_; }

private:
    double rate_;
    std::vector<double> mask_;
    bool active_ = false;
};

class MaxPoolLayer final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::MaxPool2x2; }
    LayerSpec spec() const override { return LayerSpec::maxpool(); }
    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<MaxPoolLayer>(*this);
    }

    Shape output_shape(const Shape &in) const override {
        return {in.n, in.h / 2, in.w / 2, in.c};
    }

    Tensor forward(const Tensor &in, Mode, RngStream *) override {
        if (in.shape.h % 2 != 0 || in.shape.w % 2 != 0)
            throw numeric_error("ShapeMismatch", "maxpool2x2 needs even height and width");
        in_cached_shape_ = in.shape;
        Shape os = output_shape(in.shape);
        Tensor out(os);
        argmax_.resize(os.total());

        const std::size_t h = in.shape.h, w = in.shape.w, c = in.shape.c;
        for (std::size_t b = 0; b < in.shape.n; ++b) {
            const double *img = in.row(b);
            double *dst = out.row(b);
            for (std::size_t y = 0; y < os.h; ++y) {
                for (std::size_t x = 0; x < os.w; ++x) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_idx = 0;
                        for (std::size_t dy = 0; dy < 2; ++dy) {
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                std::size_t idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
                                if (img[idx] > best) { // strict: ties go to the first cell
                                    best = img[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        std::size_t o = (y * os.w + x) * c + ch;
                        dst[o] = best;
                        argmax_[b * os.features() + o] = b * (h * w * c) + best_idx;
                    }
                }
            }
        }
        return out;
    }

    Tensor backward(const Tensor &dout) override {
        Tensor din(in_cached_shape_);
        for (std::size_t i = 0; i < dout.v.size(); ++i) din.v[argmax_[i]] += dout.v[i];
        return din;
    }

private:
    Shape in_cached_shape_;
    std::vector<std::size_t> argmax_;
};

class FlattenLayer final : public Layer {
public:
    LayerKind kind() const override { return LayerKind::Flatten; }
    LayerSpec spec() const override { return LayerSpec::flatten(); }
    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<FlattenLayer>(*this);
    }
    Shape output_shape(const Shape &in) const override {
        return {in.n, 1, 1, in.features()};
    }
    Tensor forward(const Tensor &in, Mode, RngStream *) override {
        in_cached_shape_ = in.shape;
        Tensor out = in;
        out.shape = output_shape(in.shape);
        return out;
    }
    Tensor backward(const Tensor &dout) override {
        Tensor din = dout;
        din.shape = in_cached_shape_;
        return din;
    }

private:
    Shape in_cached_shape_;
};

/* Network
 * -------
 */

enum class Arch { FullyConnected, Convolutional };
enum class InitScheme { Standard, ZeroRightHalf };
enum class Target { Alice, Bob };

/// Fine-tuning regime: freeze trainable layers 1..ell-1, retrain ell..m+1.
/// ell = m+1 retrains only the output layer; ell = 1 retrains everything.
struct FreezePlan {
    std::size_t ell = 1;
};

class Network {
public:
    Network() = default;
    Network(const Network &o) { *this = o; }
    Network &operator=(const Network &o) {
        if (this == &o) return *this;
        input_shape_ = o.input_shape_;
        num_groups_ = o.num_groups_;
        layers_.clear();
        for (const auto &l : o.layers_) layers_.push_back(l->clone());
        return *this;
    }
    Network(Network &&) = default;
    Network &operator=(Network &&) = default;

    /// Build from specs; exactly one SoftmaxOutput is required, last.
    static Network build(const std::vector<LayerSpec> &specs, Shape input_hwc,
                         RngStream &rng) {
        if (specs.empty() || specs.back().kind != LayerKind::SoftmaxOutput)
            throw config_error("ConfigInvalid", "network must end in one softmax output layer");
        for (std::size_t i = 0; i + 1 < specs.size(); ++i)
            if (specs[i].kind == LayerKind::SoftmaxOutput)
                throw config_error("ConfigInvalid", "softmax output must be the last layer");

        Network net;
        net.input_shape_ = input_hwc;
        Shape cur = input_hwc;
        int group = 0;
        for (const auto &s : specs) {
            std::unique_ptr<Layer> layer;
            switch (s.kind) {
            case LayerKind::Dense: layer = std::make_unique<DenseLayer>(s.units); break;
            case LayerKind::Conv2d: layer = std::make_unique<Conv2dLayer>(s.units); break;
            case LayerKind::BatchNorm: layer = std::make_unique<BatchNormLayer>(); break;
            case LayerKind::ReLU: layer = std::make_unique<ReluLayer>(); break;
            case LayerKind::Dropout: layer = std::make_unique<DropoutLayer>(s.rate); break;
            case LayerKind::MaxPool2x2: layer = std::make_unique<MaxPoolLayer>(); break;
            case LayerKind::Flatten: layer = std::make_unique<FlattenLayer>(); break;
            case LayerKind::SoftmaxOutput:
                layer = std::make_unique<SoftmaxOutputLayer>(s.units);
                break;
            }
            bool trainable_unit = s.kind == LayerKind::Dense || s.kind == LayerKind::Conv2d ||
                                  s.kind == LayerKind::SoftmaxOutput;
            if (trainable_unit) ++group;
            // batch norm, activations etc. attach to the preceding trainable layer
            layer->group = group;
            RngStream layer_rng = rng.derive(net.layers_.size());
            layer->init(cur, layer_rng);
            cur = layer->output_shape(cur);
            net.layers_.push_back(std::move(layer));
        }
        net.num_groups_ = static_cast<std::size_t>(group);
        return net;
    }

    Shape input_shape() const { return input_shape_; }
    std::size_t num_layers() const { return layers_.size(); }
    Layer &layer(std::size_t i) { return *layers_[i]; }
    const Layer &layer(std::size_t i) const { return *layers_[i]; }

    /// Trainable-layer count including the output layer (the m+1 of the
    /// fine-tuning regimes).
    std::size_t num_trainable_groups() const { return num_groups_; }

    void apply_freeze_plan(const FreezePlan &plan) {
        if (plan.ell < 1 || plan.ell > num_groups_)
            throw config_error("ConfigInvalid",
                               "freeze plan ell must lie in 1.." + std::to_string(num_groups_));
        for (auto &l : layers_) l->frozen = l->group < static_cast<int>(plan.ell);
    }

    void unfreeze_all() {
        for (auto &l : layers_) l->frozen = false;
    }

    /// Forward pass to class probabilities. Dropout draws come from
    /// `dropout_rng` (required in Train mode when any dropout layer exists).
    Tensor forward(const Tensor &x, Mode mode, RngStream *dropout_rng = nullptr) {
        if (!x.shape.same_features(input_shape_))
            throw numeric_error("ShapeMismatch", "batch shape does not match network input");
        Tensor cur = x;
        for (auto &l : layers_) cur = l->forward(cur, mode, dropout_rng);
        return cur;
    }

    SoftmaxOutputLayer &output_layer() {
        return static_cast<SoftmaxOutputLayer &>(*layers_.back());
    }

    /// Backprop from logit-space gradients. Stops above the deepest layer
    /// that still needs parameter gradients unless `to_input` asks for the
    /// input gradient itself (attribution path).
    Tensor backward(const Tensor &dlogits, bool to_input = false) {
        std::size_t stop = 0;
        if (!to_input) {
            stop = layers_.size();
            for (std::size_t i = 0; i < layers_.size(); ++i) {
                if (layers_[i]->params() != nullptr && !layers_[i]->frozen) {
                    stop = i;
                    break;
                }
            }
        }
        Tensor grad = dlogits;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            grad = layers_[i]->backward(grad);
            if (i == stop && !to_input) break;
        }
        return grad;
    }

    void zero_grads() {
        for (auto &l : layers_) l->zero_grads();
    }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    Shape input_shape_; // n unused
    std::size_t num_groups_ = 0;
};

/* Architectures
 * -------------
 */

struct ArchScale {
    double conv = 1.0;  // filter-count multiplier
    double dense = 1.0; // hidden-unit multiplier

    static ArchScale paper() { return {1.0, 1.0}; }
    static ArchScale desk() { return {1.0 / 8.0, 1.0 / 4.0}; }
};

inline std::size_t scaled(std::size_t base, double mult) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(base * mult)));
}

inline std::vector<LayerSpec> fully_connected_specs(const ArchScale &s = ArchScale::paper()) {
    return {
        LayerSpec::flatten(),
        LayerSpec::dense(scaled(1024, s.dense)),
        LayerSpec::batchnorm(),
        LayerSpec::relu(),
        LayerSpec::dropout(0.25),
        LayerSpec::dense(scaled(512, s.dense)),
        LayerSpec::batchnorm(),
        LayerSpec::relu(),
        LayerSpec::softmax_output(10),
    };
}

inline std::vector<LayerSpec> convolutional_specs(const ArchScale &s = ArchScale::paper()) {
    std::vector<LayerSpec> specs;
    const std::size_t filters[6] = {32, 64, 128, 256, 512, 1024};
    for (int i = 0; i < 6; ++i) {
        specs.push_back(LayerSpec::conv(scaled(filters[i], s.conv)));
        specs.push_back(LayerSpec::batchnorm());
        specs.push_back(LayerSpec::relu());
        if (i % 2 == 1) { // even-numbered blocks, counting from 1
            specs.push_back(LayerSpec::maxpool());
            specs.push_back(LayerSpec::dropout(0.25));
        }
    }
    specs.push_back(LayerSpec::flatten());
    specs.push_back(LayerSpec::dense(scaled(1024, s.dense)));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::dropout(0.25));
    specs.push_back(LayerSpec::dense(scaled(512, s.dense)));
    specs.push_back(LayerSpec::relu());
    specs.push_back(LayerSpec::softmax_output(10));
    return specs;
}

/// Zero every first-layer weight fed by an input coordinate in the right
/// image half. Only meaningful for the fully-connected architecture, whose
/// first trainable layer sees the raw flattened image.
inline void zero_right_half_init(Network &net) {
    AffineLayer *first = nullptr;
    for (std::size_t i = 0; i < net.num_layers() && first == nullptr; ++i) {
        Layer &l = net.layer(i);
        if (l.kind() == LayerKind::Conv2d)
            throw config_error("ConfigInvalid",
                               "zero-right-half init requires the fully-connected architecture");
        if (l.kind() == LayerKind::Dense) first = static_cast<AffineLayer *>(&l);
    }
    if (first == nullptr)
        throw config_error("ConfigInvalid", "no dense first layer to mask");

    Shape in = net.input_shape();
    const std::size_t units = first->units();
    double *w = first->weights();
    for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = in.w / 2; x < in.w; ++x)
            for (std::size_t ch = 0; ch < in.c; ++ch) {
                std::size_t idx = (y * in.w + x) * in.c + ch;
                for (std::size_t u = 0; u < units; ++u) w[idx * units + u] = 0.0;
            }
}

inline Network build_network(Arch arch, Shape input_hwc, RngStream &rng,
                             InitScheme init = InitScheme::Standard,
                             const ArchScale &scale = ArchScale::paper()) {
    auto specs = arch == Arch::FullyConnected ? fully_connected_specs(scale)
                                              : convolutional_specs(scale);
    Network net = Network::build(specs, input_hwc, rng);
    if (init == InitScheme::ZeroRightHalf) zero_right_half_init(net);
    return net;
}

/* Optimizer and schedule
 * ----------------------
 */

enum class Schedule { Constant, Cosine };

struct OptimizerConfig {
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 256;
    std::size_t epochs = 15;
    Schedule schedule = Schedule::Constant;
    double cosine_start = 0.3;
    double cosine_end = 0.0;
};

/// end + (start-end) * (1 + cos(pi t/total)) / 2
inline double cosine_lr(std::size_t t, std::size_t total, double start, double end) {
    if (total == 0) return end;
    double phase = static_cast<double>(t) / static_cast<double>(total);
    return end + (start - end) * (1.0 + std::cos(3.14159265358979323846 * phase)) / 2.0;
}

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0; // percent, on the epoch's own training data
};

struct TrainLog {
    std::vector<EpochStats> epochs;
};

/// One epoch's already-labeled training tensors.
struct EpochData {
    Tensor x;
    std::vector<std::uint8_t> labels;
};

using EpochProvider = std::function<EpochData(std::size_t epoch)>;

/// Pixel bytes to doubles in [0,1].
inline Tensor to_tensor(const dataforge::PairedDataset &ds) {
    Tensor t({ds.size(), ds.h, ds.w, ds.c});
    double *out = t.v.data();
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t p = 0; p < ds.x[i].size(); ++p)
            *out++ = static_cast<double>(ds.x[i][p]) / 255.0;
    return t;
}

inline EpochData to_epoch_data(const dataforge::PairedDataset &ds, Target target) {
    return {to_tensor(ds), target == Target::Alice ? ds.y_alice : ds.y_bob};
}

namespace detail {

struct SgdState {
    std::vector<std::vector<double>> velocity; // per layer, empty when no params
};

inline void sgd_step(Network &net, SgdState &state, double lr, double momentum,
                     double weight_decay) {
    if (state.velocity.empty()) state.velocity.resize(net.num_layers());
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
        Layer &l = net.layer(i);
        auto *p = l.params();
        if (p == nullptr || l.frozen) continue;
        auto *g = l.grads();
        auto &v = state.velocity[i];
        if (v.size() != p->size()) v.assign(p->size(), 0.0);
        for (std::size_t j = 0; j < p->size(); ++j) {
            double grad = (*g)[j] + weight_decay * (*p)[j];
            v[j] = momentum * v[j] + grad;
            (*p)[j] -= lr * v[j];
        }
    }
}

} // namespace detail

/** Mini-batch SGD over the provider's epochs. Batches are drawn in a
 * seeded shuffled order; dropout draws come from a named sub-stream, so a
 * fixed (net, provider, rng) triple always reproduces the same run.
 * Frozen layers are never stepped and frozen batch norms never update. */
inline TrainLog train(Network &net, const EpochProvider &provider,
                      const OptimizerConfig &opt, const FreezePlan *plan, RngStream rng) {
    if (plan != nullptr)
        net.apply_freeze_plan(*plan);

    RngStream dropout_rng = rng.derive("dropout");
    RngStream shuffle_rng = rng.derive("shuffle");
    detail::SgdState state;
    TrainLog log;

    std::size_t total_steps = 0, step = 0;

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        EpochData data = provider(epoch);
        const std::size_t n = data.x.shape.n;
        if (n == 0) throw data_error("EmptyDataset", "epoch provider returned no samples");
        const std::size_t batches = (n + opt.batch_size - 1) / opt.batch_size;
        if (epoch == 0) total_steps = batches * opt.epochs;

        std::vector<std::uint32_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t epoch_hits = 0;

        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * opt.batch_size;
            const std::size_t hi = std::min(lo + opt.batch_size, n);
            const std::size_t bs = hi - lo;

            Tensor batch({bs, data.x.shape.h, data.x.shape.w, data.x.shape.c});
            std::vector<std::uint8_t> labels(bs);
            const std::size_t feat = data.x.shape.features();
            for (std::size_t r = 0; r < bs; ++r) {
                std::memcpy(batch.v.data() + r * feat, data.x.row(order[lo + r]),
                            feat * sizeof(double));
                labels[r] = data.labels[order[lo + r]];
            }

            net.zero_grads();
            Tensor probs = net.forward(batch, Mode::Train, &dropout_rng);
            auto &out = net.output_layer();

            double loss = 0.0;
            Tensor dlogits(probs.shape);
            for (std::size_t r = 0; r < bs; ++r) {
                loss -= out.log_prob(r, labels[r]);
                const double *p = probs.row(r);
                double *d = dlogits.row(r);
                std::size_t best = 0;
                for (std::size_t k = 0; k < probs.shape.c; ++k) {
                    d[k] = p[k] / static_cast<double>(bs);
                    if (p[k] > p[best]) best = k;
                }
                d[labels[r]] -= 1.0 / static_cast<double>(bs);
                epoch_hits += (best == labels[r]);
            }
            loss /= static_cast<double>(bs);
            if (!std::isfinite(loss))
                throw numeric_error("NonFinite",
                                    "training loss diverged at epoch " + std::to_string(epoch) +
                                        " batch " + std::to_string(b) + "; lower the lr");
            epoch_loss += loss * static_cast<double>(bs);

            net.backward(dlogits);
            double lr = opt.schedule == Schedule::Cosine
                            ? cosine_lr(step, total_steps, opt.cosine_start, opt.cosine_end)
                            : opt.lr;
            detail::sgd_step(net, state, lr, opt.momentum, opt.weight_decay);
            ++step;
        }

        log.epochs.push_back({epoch_loss / static_cast<double>(n),
                              100.0 * static_cast<double>(epoch_hits) / static_cast<double>(n)});
    }
    return log;
}

/// Convenience: train against one side's labels of a paired dataset source.
inline TrainLog train(Network &net,
                      const std::function<dataforge::PairedDataset(std::size_t)> &source,
                      Target target, const OptimizerConfig &opt, const FreezePlan *plan,
                      RngStream rng) {
    return train(
        net, [&](std::size_t epoch) { return to_epoch_data(source(epoch), target); }, opt,
        plan, rng);
}

/* Evaluation
 * ----------
 */

/// Argmax accuracy in percent against the chosen labels; always runs the
/// network in Eval mode, in batches.
inline double evaluate(Network &net, const Tensor &x, const std::vector<std::uint8_t> &labels,
                       std::size_t batch_size = 256) {
    const std::size_t n = x.shape.n;
    std::size_t hits = 0;
    const std::size_t feat = x.shape.features();
    for (std::size_t lo = 0; lo < n; lo += batch_size) {
        const std::size_t bs = std::min(batch_size, n - lo);
        Tensor batch({bs, x.shape.h, x.shape.w, x.shape.c});
        std::memcpy(batch.v.data(), x.v.data() + lo * feat, bs * feat * sizeof(double));
        Tensor probs = net.forward(batch, Mode::Eval);
        for (std::size_t r = 0; r < bs; ++r) {
            const double *p = probs.row(r);
            std::size_t best = 0;
            for (std::size_t k = 1; k < probs.shape.c; ++k)
                if (p[k] > p[best]) best = k;
            hits += (best == labels[lo + r]);
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

inline double evaluate(Network &net, const dataforge::PairedDataset &ds, Target target) {
    return evaluate(net, to_tensor(ds), target == Target::Alice ? ds.y_alice : ds.y_bob);
}

/* Layer sweep
 * -----------
 */

struct LayerSweepRow {
    std::size_t ell;
    double accuracy;
};

/// Fine-tune a fresh copy of the pre-trained net at each freeze depth and
/// report Bob-side accuracy. Each row derives its own RNG from the sweep
/// stream and the row's ell, so rows are order-independent.
inline std::vector<LayerSweepRow> layer_sweep(
    const Network &pretrained, const std::function<dataforge::PairedDataset(std::size_t)> &source,
    const dataforge::PairedDataset &test_set, const std::vector<std::size_t> &ells,
    const OptimizerConfig &opt, RngStream rng) {
    std::vector<LayerSweepRow> rows;
    for (std::size_t ell : ells) {
        Network net = pretrained;
        FreezePlan plan{ell};
        train(net, source, Target::Bob, opt, &plan, rng.derive(ell));
        rows.push_back({ell, evaluate(net, test_set, Target::Bob)});
    }
    return rows;
}

/* Checkpoints
 * -----------
 *
 * "XFN1" | u32 version | u32 input h,w,c | u32 layer count |
 * per layer: u32 kind, u32 units, f32 rate |
 * per parameter tensor (layer order, W then b / gamma then beta):
 *   u32 length + f32 data |
 * per batch norm (layer order): running mean + var as u32 length + f32 data.
 */

namespace detail {

inline void write_u32le(std::ostream &out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char *>(b), 4);
}

inline std::uint32_t read_u32le(std::istream &in, const std::string &path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char *>(b), 4))
        throw data_error("Truncated", "short read in " + path);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline void write_f32_blob(std::ostream &out, const std::vector<double> &v) {
    write_u32le(out, static_cast<std::uint32_t>(v.size()));
    for (double d : v) {
        float f = static_cast<float>(d);
        out.write(reinterpret_cast<const char *>(&f), 4);
    }
}

inline void read_f32_blob(std::istream &in, std::vector<double> &v, const std::string &path) {
    std::uint32_t len = read_u32le(in, path);
    if (len != v.size())
        throw data_error("Truncated", "parameter blob length " + std::to_string(len) +
                                          " does not match layer layout in " + path);
    for (std::uint32_t i = 0; i < len; ++i) {
        float f;
        if (!in.read(reinterpret_cast<char *>(&f), 4))
            throw data_error("Truncated", "short parameter read in " + path);
        v[i] = static_cast<double>(f);
    }
}

} // namespace detail

inline void save_network(Network &net, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("IoError", "cannot write " + path);
    out.write("XFN1", 4);
    detail::write_u32le(out, 1);
    Shape in = net.input_shape();
    detail::write_u32le(out, static_cast<std::uint32_t>(in.h));
    detail::write_u32le(out, static_cast<std::uint32_t>(in.w));
    detail::write_u32le(out, static_cast<std::uint32_t>(in.c));
    detail::write_u32le(out, static_cast<std::uint32_t>(net.num_layers()));
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
        LayerSpec s = net.layer(i).spec();
        detail::write_u32le(out, static_cast<std::uint32_t>(s.kind));
        detail::write_u32le(out, static_cast<std::uint32_t>(s.units));
        float rate = static_cast<float>(s.rate);
        out.write(reinterpret_cast<const char *>(&rate), 4);
    }
    for (std::size_t i = 0; i < net.num_layers(); ++i)
        if (auto *p = net.layer(i).params()) detail::write_f32_blob(out, *p);
    for (std::size_t i = 0; i < net.num_layers(); ++i)
        if (auto *a = net.layer(i).aux_state()) detail::write_f32_blob(out, *a);
    if (!out) throw data_error("IoError", "write failed for " + path);
}

inline Network load_network(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("IoError", "cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "XFN1", 4) != 0)
        throw data_error("BadMagic", path + " is not an XFN1 checkpoint");
    std::uint32_t version = detail::read_u32le(in, path);
    if (version != 1)
        throw data_error("BadMagic", "unsupported checkpoint version " + std::to_string(version));

    Shape input;
    input.h = detail::read_u32le(in, path);
    input.w = detail::read_u32le(in, path);
    input.c = detail::read_u32le(in, path);
    std::uint32_t n_layers = detail::read_u32le(in, path);

    std::vector<LayerSpec> specs;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        LayerSpec s;
        s.kind = static_cast<LayerKind>(detail::read_u32le(in, path));
        s.units = detail::read_u32le(in, path);
        float rate;
        if (!in.read(reinterpret_cast<char *>(&rate), 4))
            throw data_error("Truncated", "short layer table in " + path);
        s.rate = rate;
        specs.push_back(s);
    }

    RngStream throwaway(0, 0); // parameters are overwritten below
    Network net = Network::build(specs, input, throwaway);
    for (std::size_t i = 0; i < net.num_layers(); ++i)
        if (auto *p = net.layer(i).params()) detail::read_f32_blob(in, *p, path);
    for (std::size_t i = 0; i < net.num_layers(); ++i)
        if (auto *a = net.layer(i).aux_state()) detail::read_f32_blob(in, *a, path);
    return net;
}

/* Gradient checking
 * -----------------
 */

/// Max relative error between analytic gradients (input and parameters) and
/// central finite differences of a fixed scalar readout, for one small
/// randomly configured layer. Deterministic for a given (kind, config) pair.
inline double gradient_check(LayerKind kind, std::size_t config_index) {
    RngStream rng(0xC0FFEE, config_index * 977 + static_cast<std::size_t>(kind));

    auto dim = [&](std::size_t lo, std::size_t hi) { return lo + rng.next_index(hi - lo + 1); };

    Shape in_shape;
    std::unique_ptr<Layer> layer;
    switch (kind) {
    case LayerKind::Dense:
        in_shape = {dim(2, 4), 1, 1, dim(3, 9)};
        layer = std::make_unique<DenseLayer>(dim(2, 7));
        break;
    case LayerKind::SoftmaxOutput:
        in_shape = {dim(2, 4), 1, 1, dim(3, 9)};
        layer = std::make_unique<SoftmaxOutputLayer>(dim(3, 10));
        break;
    case LayerKind::Conv2d:
        in_shape = {dim(1, 2), dim(4, 6), dim(4, 6), dim(1, 3)};
        layer = std::make_unique<Conv2dLayer>(dim(1, 3));
        break;
    case LayerKind::BatchNorm:
        in_shape = {dim(4, 8), 1, 1, dim(2, 5)};
        layer = std::make_unique<BatchNormLayer>();
        break;
    case LayerKind::ReLU:
        in_shape = {dim(2, 4), 1, 1, dim(4, 12)};
        layer = std::make_unique<ReluLayer>();
        break;
    case LayerKind::Dropout:
        in_shape = {dim(2, 4), 1, 1, dim(4, 12)};
        layer = std::make_unique<DropoutLayer>(0.25);
        break;
    case LayerKind::MaxPool2x2:
        in_shape = {dim(1, 2), 2 * dim(1, 3), 2 * dim(1, 3), dim(1, 3)};
        layer = std::make_unique<MaxPoolLayer>();
        break;
    case LayerKind::Flatten:
        in_shape = {dim(1, 2), dim(2, 3), dim(2, 3), dim(1, 3)};
        layer = std::make_unique<FlattenLayer>();
        break;
    }

    RngStream init_rng = rng.derive("init");
    layer->init(in_shape, init_rng);

    const double h = 1e-3;

    // draw inputs, steering clear of ReLU kinks and near-tied pool cells
    Tensor x(in_shape);
    for (int attempt = 0;; ++attempt) {
        RngStream draw = rng.derive("input").derive(attempt);
        for (auto &v : x.v) v = draw.next_gaussian();
        bool ok = true;
        if (kind == LayerKind::ReLU) {
            for (double v : x.v)
                if (std::abs(v) < 10 * h) ok = false;
        }
        if (kind == LayerKind::MaxPool2x2) {
            Shape os{in_shape.n, in_shape.h / 2, in_shape.w / 2, in_shape.c};
            for (std::size_t b = 0; b < os.n && ok; ++b)
                for (std::size_t y = 0; y < os.h && ok; ++y)
                    for (std::size_t xx = 0; xx < os.w && ok; ++xx)
                        for (std::size_t ch = 0; ch < os.c && ok; ++ch) {
                            double best = -1e300, second = -1e300;
                            for (std::size_t dy = 0; dy < 2; ++dy)
                                for (std::size_t dx = 0; dx < 2; ++dx) {
                                    double val =
                                        x.row(b)[((2 * y + dy) * in_shape.w + (2 * xx + dx)) *
                                                     in_shape.c +
                                                 ch];
                                    if (val > best) {
                                        second = best;
                                        best = val;
                                    } else if (val > second) {
                                        second = val;
                                    }
                                }
                            if (best - second < 10 * h) ok = false;
                        }
        }
        if (ok) break;
    }

    // fixed readout weights make the loss a scalar; softmax uses real CE
    Shape out_shape = layer->output_shape(in_shape);
    std::vector<double> readout(out_shape.total());
    RngStream read_rng = rng.derive("readout");
    for (auto &v : readout) v = read_rng.next_gaussian();
    std::vector<std::uint8_t> labels(in_shape.n);
    for (auto &l : labels)
        l = static_cast<std::uint8_t>(read_rng.next_index(std::max<std::size_t>(out_shape.c, 2)));

    const RngStream dropout_proto = rng.derive("dropout-mask");

    auto eval_loss = [&](const Tensor &input) {
        RngStream d = dropout_proto; // identical mask on every evaluation
        Tensor out = layer->forward(input, Mode::Train, &d);
        if (kind == LayerKind::SoftmaxOutput) {
            auto &sm = static_cast<SoftmaxOutputLayer &>(*layer);
            double loss = 0.0;
            for (std::size_t r = 0; r < out.shape.n; ++r) loss -= sm.log_prob(r, labels[r]);
            return loss;
        }
        double loss = 0.0;
        for (std::size_t i = 0; i < out.v.size(); ++i) loss += readout[i] * out.v[i];
        return loss;
    };

    // analytic gradients
    layer->zero_grads();
    eval_loss(x);
    Tensor dout(out_shape);
    if (kind == LayerKind::SoftmaxOutput) {
        RngStream d = dropout_proto;
        auto &sm = static_cast<SoftmaxOutputLayer &>(*layer);
        Tensor probs = sm.forward(x, Mode::Train, &d);
        for (std::size_t r = 0; r < probs.shape.n; ++r) {
            for (std::size_t k = 0; k < probs.shape.c; ++k)
                dout.row(r)[k] = probs.row(r)[k];
            dout.row(r)[labels[r]] -= 1.0;
        }
        layer->zero_grads();
    } else {
        dout.v = readout;
    }
    Tensor din = layer->backward(dout);

    double max_rel = 0.0;
    auto compare = [&](double analytic, double numeric) {
        double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
        max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    };

    for (std::size_t i = 0; i < x.v.size(); ++i) {
        double saved = x.v[i];
        x.v[i] = saved + h;
        double up = eval_loss(x);
        x.v[i] = saved - h;
        double down = eval_loss(x);
        x.v[i] = saved;
        compare(din.v[i], (up - down) / (2 * h));
    }
    if (auto *p = layer->params()) {
        std::vector<double> analytic = *layer->grads();
        for (std::size_t i = 0; i < p->size(); ++i) {
            double saved = (*p)[i];
            (*p)[i] = saved + h;
            double up = eval_loss(x);
            (*p)[i] = saved - h;
            double down = eval_loss(x);
            (*p)[i] = saved;
            compare(analytic[i], (up - down) / (2 * h));
        }
    }
    return max_rel;
}

} // namespace xfl::nncore

#endif // XFL_NNCORE_HPP
