#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "subbench/container.hpp"
#include "subbench/rng.hpp"

// Minimal reverse-mode layer library (double precision, NCHW).
//
// Every Module caches what it needs during forward() and consumes it in the
// following backward(), which accumulates parameter gradients and returns the
// gradient with respect to the module input. A module may therefore be used
// once per forward/backward pair.
namespace subbench::nn {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    std::size_t size() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    int batch() const { return shape.empty() ? 0 : shape[0]; }
    // Elements per batch item.
    std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_string() const;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;  // false for running statistics
};

class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void collect(std::vector<Parameter*>&) {}
    virtual void set_training(bool) {}
    virtual std::string name() const = 0;
};

using ModulePtr = std::unique_ptr<Module>;

// He-style initialisation scale for a layer with `fan_in` inputs.
double init_scale(int fan_in);

class Conv2d : public Module {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string name() const override { return "conv2d"; }

private:
    int in_, out_, k_, s_, p_;
    Parameter weight_, bias_;  // weight: (out, in, k, k)
    Tensor input_;
};

// Adjoint of Conv2d: output size (in - 1) * stride - 2 * padding + kernel.
class ConvTranspose2d : public Module {
public:
    ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string name() const override { return "conv_transpose2d"; }

private:
    int in_, out_, k_, s_, p_;
    Parameter weight_, bias_;  // weight: (in, out, k, k)
    Tensor input_;
};

// Any input is flattened to (N, features).
class Linear : public Module {
public:
    Linear(int in_features, int out_features, Rng& rng, double gain = 1.0);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<Parameter*>& out) override;
    std::string name() const override { return "linear"; }

private:
    int in_, out_;
    Parameter weight_, bias_;  // weight: (out, in)
    Tensor input_;
    std::vector<int> input_shape_;
};

// Per-channel normalisation for (N, C, H, W) or (N, C) inputs. Batch
// statistics in training mode, running statistics otherwise.
class BatchNorm : public Module {
public:
    explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<Parameter*>& out) override;
    void set_training(bool t) override { training_ = t; }
    std::string name() const override { return "batchnorm"; }

private:
    int c_;
    double momentum_, eps_;
    bool training_ = true;
    Parameter gamma_, beta_, running_mean_, running_var_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    std::vector<int> shape_;
};

class ReLU : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "relu"; }

private:
    Tensor input_;
};

class LeakyReLU : public Module {
public:
    explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "leaky_relu"; }

private:
    double slope_;
    Tensor input_;
};

class Tanh : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "tanh"; }

private:
    Tensor output_;
};

class Sigmoid : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "sigmoid"; }

private:
    Tensor output_;
};

class MaxPool2d : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "maxpool2d"; }

private:
    std::vector<std::size_t> argmax_;
    std::vector<int> input_shape_;
};

class AvgPool2d : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "avgpool2d"; }

private:
    std::vector<int> input_shape_;
};

// Nearest-neighbour 2x upsampling.
class Upsample2d : public Module {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "upsample2d"; }

private:
    std::vector<int> input_shape_;
};

// x / sqrt(mean over channels of x^2 + eps), per pixel (or per row for 2-D input).
class PixelNorm : public Module {
public:
    explicit PixelNorm(double eps = 1e-8) : eps_(eps) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "pixelnorm"; }

private:
    double eps_;
    Tensor input_;
    std::vector<double> scale_;
};

// Appends one constant channel holding the mean over features of the
// across-batch standard deviation.
class MinibatchStdDev : public Module {
public:
    explicit MinibatchStdDev(double eps = 1e-8) : eps_(eps) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "minibatch_stddev"; }

private:
    double eps_;
    Tensor input_;
    std::vector<double> mean_, std_;
};

// Reinterprets the per-item layout; batch dimension preserved.
class Reshape : public Module {
public:
    explicit Reshape(std::vector<int> item_shape) : item_shape_(std::move(item_shape)) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string name() const override { return "reshape"; }

private:
    std::vector<int> item_shape_;
    std::vector<int> input_shape_;
};

class Sequential : public Module {
public:
    Sequential() = default;
    Sequential& add(ModulePtr m);
    template <typename T, typename... Args>
    Sequential& emplace(Args&&... args) {
        return add(std::make_unique<T>(std::forward<Args>(args)...));
    }

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(std::vector<Parameter*>& out) override;
    void set_training(bool t) override;
    std::string name() const override { return "sequential"; }

    std::size_t size() const { return layers_.size(); }
    Module& layer(std::size_t i) { return *layers_.at(i); }

private:
    std::vector<ModulePtr> layers_;
};

std::vector<Parameter*> parameters_of(Module& m);
void zero_grad(const std::vector<Parameter*>& params);

// Parameter values exported as float32 arrays named "<prefix>.<ordinal>.<name>"
// and restored by the same names.
void export_parameters(const std::string& prefix, const std::vector<Parameter*>& params, std::vector<NamedArray>& out);
void import_parameters(const std::string& prefix, const std::vector<Parameter*>& params, const Container& c);

struct AdamOptions {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamOptions opts);
    void step();
    void zero_grad();
    const AdamOptions& options() const { return opts_; }

private:
    std::vector<Parameter*> params_;
    AdamOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

// Mean cross-entropy of softmax(logits) against integer labels.
LossAndGrad softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Row-wise softmax of (N, K) logits.
Tensor softmax(const Tensor& logits);

}  // namespace subbench::nn
