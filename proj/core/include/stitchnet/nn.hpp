#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace stitchnet::nn {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Row-major dense tensor of doubles. Images are (channels, height, width).
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<double> values);

    std::size_t size() const noexcept { return data.size(); }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Conv2d {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

struct MaxPool {
    std::size_t size = 2;
    std::size_t stride = 2;
    friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct Relu {
    friend bool operator==(const Relu&, const Relu&) = default;
};

struct Sigmoid {
    friend bool operator==(const Sigmoid&, const Sigmoid&) = default;
};

struct Flatten {
    friend bool operator==(const Flatten&, const Flatten&) = default;
};

struct Dense {
    std::size_t in_features = 1;
    std::size_t out_features = 1;
    friend bool operator==(const Dense&, const Dense&) = default;
};

using LayerSpec = std::variant<Conv2d, MaxPool, Relu, Sigmoid, Dense, Flatten>;

std::string kind_name(const LayerSpec& layer);

/// Activations recorded by a forward pass. activations[0] is the input and
/// activations[i + 1] the output of layer i.
struct ForwardCache {
    std::vector<Tensor> activations;
    // flat input index chosen for every pooled output, per layer (empty for non-pool layers)
    std::vector<std::vector<std::uint32_t>> pool_argmax;
};

struct ForwardResult {
    Tensor output;
    ForwardCache cache;
};

struct Gradients {
    std::vector<Tensor> params; // same order as Network::parameters()
    Tensor input;
};

/// Buffers reused across forward/backward calls on the same network.
struct Workspace {
    ForwardCache cache;
    std::vector<Tensor> deltas;
    Gradients grads;
};

/// Sequential stack of layers with owned parameters.
///
/// Parametric layers (Conv2d, Dense) own two tensors each, weights then bias,
/// stored in layer order. Conv weights are (out, in, k, k); dense weights are
/// (out, in).
class Network {
public:
    Network() = default;
    Network(Shape input_shape, std::vector<LayerSpec> layers);

    const Shape& input_shape() const noexcept { return input_shape_; }
    const Shape& output_shape() const noexcept { return shapes_.back(); }
    /// Shape after layer i (i.e. of activations[i + 1]).
    const Shape& layer_output_shape(std::size_t i) const { return shapes_.at(i + 1); }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }

    std::vector<Tensor>& parameters() noexcept { return params_; }
    const std::vector<Tensor>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept;

    /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    void initialize(std::uint64_t seed);

    ForwardResult forward(const Tensor& x) const;
    /// Fills ws.cache; the returned output lives in the workspace.
    const Tensor& forward(const Tensor& x, Workspace& ws) const;
    Tensor infer(const Tensor& x) const;
    /// With need_input_grad false, a leading conv layer skips its input gradient
    /// and Gradients::input is left empty.
    Gradients backward(const ForwardCache& cache, const Tensor& output_grad, bool need_input_grad = true) const;
    /// Backward through the cache held in ws, which must come from forward(x, ws).
    const Gradients& backward(Workspace& ws, const Tensor& output_grad, bool need_input_grad = true) const;

private:
    void check_input(const Tensor& x) const;
    void run_forward(const Tensor& x, ForwardCache& cache) const;
    void run_backward(const ForwardCache& cache, const Tensor& output_grad, bool need_input_grad,
                      std::vector<Tensor>& deltas, Gradients& grads) const;

    Shape input_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape> shapes_;
    std::vector<std::size_t> param_offset_; // index of the layer's first parameter tensor
    std::vector<Tensor> params_;
};

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

struct ScalarLoss {
    double loss = 0.0;
    double grad = 0.0;
};

double sigmoid(double x) noexcept;

/// Binary cross-entropy on a single logit, evaluated as max(z, 0) - z*y + log1p(exp(-|z|)).
ScalarLoss bce_with_logits(double logit, int label);

/// mean((pred - target)^2) and its gradient 2 (pred - target) / n.
LossResult mse(const Tensor& pred, const Tensor& target);

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamHyper hyper;
    std::uint64_t step_count = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;

    static AdamState for_params(std::span<const Tensor> params, AdamHyper hyper = {});
};

/// One bias-corrected Adam update. Throws NumericError on a non-finite gradient
/// before touching any parameter.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

/// Loss as a function of the network output: value and d(loss)/d(output).
using OutputLoss = std::function<LossResult(const Tensor& output)>;
using BackwardFn = std::function<Gradients(const Network&, const ForwardCache&, const Tensor&)>;

struct GradCheckReport {
    double max_param_error = 0.0;
    double max_input_error = 0.0;
    std::size_t checked_params = 0;
};

/// Compare analytic gradients against central differences.
///
/// Relative error per entry is |a - n| / max(|a|, |n|, 1e-8). `backward` may be
/// replaced to test the checker itself.
GradCheckReport grad_check(const Network& net, const Tensor& x, const OutputLoss& loss, double step = 1e-5,
                           bool check_input = false, const BackwardFn& backward = {});

} // namespace stitchnet::nn
