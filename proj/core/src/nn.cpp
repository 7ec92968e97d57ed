#include "stitchnet/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "stitchnet/errors.hpp"

namespace stitchnet::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_rank(const Shape& in, std::size_t rank, std::size_t index, const LayerSpec& layer) {
    if (in.size() != rank)
        throw DataError(fmt::format("layer {} ({}): expected rank-{} input, got {}", index, kind_name(layer), rank,
                                    to_string(in)));
}

Shape infer_shape(const Shape& in, const LayerSpec& layer, std::size_t index) {
    return std::visit(
        overloaded{
            [&](const Conv2d& c) -> Shape {
                require_rank(in, 3, index, layer);
                if (c.kernel < 1 || c.stride < 1)
                    throw DataError(fmt::format("layer {} (conv2d): kernel and stride must be >= 1", index));
                if (in[0] != c.in_channels)
                    throw DataError(fmt::format("layer {} (conv2d): expected {} input channels, got shape {}", index,
                                                c.in_channels, to_string(in)));
                if (in[1] + 2 * c.padding < c.kernel || in[2] + 2 * c.padding < c.kernel)
                    throw DataError(fmt::format("layer {} (conv2d): input {} smaller than kernel {}", index,
                                                to_string(in), c.kernel));
                return {c.out_channels, (in[1] + 2 * c.padding - c.kernel) / c.stride + 1,
                        (in[2] + 2 * c.padding - c.kernel) / c.stride + 1};
            },
            [&](const MaxPool& p) -> Shape {
                require_rank(in, 3, index, layer);
                if (p.size < 1 || p.stride < 1)
                    throw DataError(fmt::format("layer {} (maxpool): size and stride must be >= 1", index));
                if (in[1] < p.size || in[2] < p.size)
                    throw DataError(fmt::format("layer {} (maxpool): input {} smaller than window {}", index,
                                                to_string(in), p.size));
                return {in[0], (in[1] - p.size) / p.stride + 1, (in[2] - p.size) / p.stride + 1};
            },
            [&](const Dense& d) -> Shape {
                require_rank(in, 1, index, layer);
                if (in[0] != d.in_features)
                    throw DataError(fmt::format("layer {} (dense): expected input [{}], got {}", index, d.in_features,
                                                to_string(in)));
                return {d.out_features};
            },
            [&](const Flatten&) -> Shape { return {shape_size(in)}; },
            [&](const auto&) -> Shape { return in; },
        },
        layer);
}

// Output columns [lo, hi) whose input column ox*stride + k - pad lies inside [0, extent).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t extent, std::size_t k, std::size_t stride,
                                                std::size_t pad) {
    std::size_t lo = 0;
    while (lo < out && lo * stride + k < pad) ++lo;
    std::size_t hi = lo;
    while (hi < out && hi * stride + k < pad + extent) ++hi;
    return {lo, hi};
}

void conv_forward(const Conv2d& c, const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const auto ih = in.shape[1], iw = in.shape[2];
    const auto oh = out.shape[1], ow = out.shape[2];
    const auto k = c.kernel, s = c.stride, pad = c.padding;
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
        double* o = out.data.data() + oc * oh * ow;
        std::fill_n(o, oh * ow, b.data[oc]);
        for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
            const double* src = in.data.data() + ic * ih * iw;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto [y0, y1] = valid_range(oh, ih, ky, s, pad);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto [x0, x1] = valid_range(ow, iw, kx, s, pad);
                    const double wv = w.data[((oc * c.in_channels + ic) * k + ky) * k + kx];
                    for (std::size_t oy = y0; oy < y1; ++oy) {
                        const double* row = src + (oy * s + ky - pad) * iw + kx - pad;
                        double* orow = o + oy * ow;
                        if (s == 1) {
                            for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * row[ox];
                        } else {
                            for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * row[ox * s];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const Conv2d& c, const Tensor& in, const Tensor& w, const Tensor& go, Tensor* gin, Tensor& gw,
                   Tensor& gb) {
    const auto ih = in.shape[1], iw = in.shape[2];
    const auto oh = go.shape[1], ow = go.shape[2];
    const auto k = c.kernel, s = c.stride, pad = c.padding;
    for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
        const double* g = go.data.data() + oc * oh * ow;
        gb.data[oc] += std::accumulate(g, g + oh * ow, 0.0);
        for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
            const double* src = in.data.data() + ic * ih * iw;
            double* dst = gin ? gin->data.data() + ic * ih * iw : nullptr;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto [y0, y1] = valid_range(oh, ih, ky, s, pad);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto [x0, x1] = valid_range(ow, iw, kx, s, pad);
                    const auto widx = ((oc * c.in_channels + ic) * k + ky) * k + kx;
                    const double wv = w.data[widx];
                    // four independent partial sums let the reduction vectorize
                    double lanes[4] = {0.0, 0.0, 0.0, 0.0};
                    for (std::size_t oy = y0; oy < y1; ++oy) {
                        const auto offset = (oy * s + ky - pad) * iw + kx - pad;
                        const double* row = src + offset;
                        const double* grow = g + oy * ow;
                        std::size_t ox = x0;
                        for (; ox + 4 <= x1; ox += 4)
                            for (std::size_t l = 0; l < 4; ++l) lanes[l] += grow[ox + l] * row[(ox + l) * s];
                        for (; ox < x1; ++ox) lanes[ox % 4] += grow[ox] * row[ox * s];
                        if (dst) {
                            double* drow = dst + offset;
                            for (std::size_t ox = x0; ox < x1; ++ox) drow[ox * s] += wv * grow[ox];
                        }
                    }
                    gw.data[widx] += (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
                }
            }
        }
    }
}

void pool_forward(const MaxPool& p, const Tensor& in, Tensor& out, std::vector<std::uint32_t>& argmax) {
    const auto ch = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    const auto oh = out.shape[1], ow = out.shape[2];
    argmax.resize(out.size());
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (c * ih + oy * p.stride) * iw + ox * p.stride;
                double best_value = in.data[best];
                for (std::size_t dy = 0; dy < p.size; ++dy) {
                    for (std::size_t dx = 0; dx < p.size; ++dx) {
                        const auto idx = (c * ih + oy * p.stride + dy) * iw + ox * p.stride + dx;
                        // strict comparison keeps the first maximum in row-major order
                        if (in.data[idx] > best_value) {
                            best_value = in.data[idx];
                            best = idx;
                        }
                    }
                }
                const auto o = (c * oh + oy) * ow + ox;
                out.data[o] = best_value;
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
}

bool all_finite(const std::vector<double>& values) {
    constexpr std::uint64_t exponent = 0x7ff0000000000000ULL;
    std::uint64_t bad = 0;
    for (double v : values) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & exponent) == exponent);
    return bad == 0;
}

void check_finite(const Tensor& t, std::size_t layer, const char* what) {
    if (!all_finite(t.data)) throw NumericError(fmt::format("layer {}: non-finite {}", layer, what));
}

} // namespace

std::string to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape))
        throw DataError(fmt::format("tensor data length {} does not match shape {}", data.size(), to_string(shape)));
}

std::string kind_name(const LayerSpec& layer) {
    return std::visit(overloaded{
                          [](const Conv2d&) { return std::string("conv2d"); },
                          [](const MaxPool&) { return std::string("maxpool"); },
                          [](const Relu&) { return std::string("relu"); },
                          [](const Sigmoid&) { return std::string("sigmoid"); },
                          [](const Dense&) { return std::string("dense"); },
                          [](const Flatten&) { return std::string("flatten"); },
                      },
                      layer);
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    shapes_.push_back(input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        shapes_.push_back(infer_shape(shapes_.back(), layers_[i], i));
        param_offset_.push_back(params_.size());
        if (const auto* c = std::get_if<Conv2d>(&layers_[i])) {
            params_.emplace_back(Shape{c->out_channels, c->in_channels, c->kernel, c->kernel});
            params_.emplace_back(Shape{c->out_channels});
        } else if (const auto* d = std::get_if<Dense>(&layers_[i])) {
            params_.emplace_back(Shape{d->out_features, d->in_features});
            params_.emplace_back(Shape{d->out_features});
        }
    }
}

std::size_t Network::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

void Network::initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        double fan_in = 0, fan_out = 0;
        if (const auto* c = std::get_if<Conv2d>(&layers_[i])) {
            fan_in = static_cast<double>(c->in_channels * c->kernel * c->kernel);
            fan_out = static_cast<double>(c->out_channels * c->kernel * c->kernel);
        } else if (const auto* d = std::get_if<Dense>(&layers_[i])) {
            fan_in = static_cast<double>(d->in_features);
            fan_out = static_cast<double>(d->out_features);
        } else {
            continue;
        }
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        auto& w = params_[param_offset_[i]];
        for (auto& v : w.data) v = dist(rng);
        std::fill(params_[param_offset_[i] + 1].data.begin(), params_[param_offset_[i] + 1].data.end(), 0.0);
    }
}

namespace {

void reshape(Tensor& t, const Shape& shape) {
    if (t.shape != shape) t.shape = shape;
    t.data.resize(shape_size(shape));
}

void reset(Tensor& t, const Shape& shape) {
    reshape(t, shape);
    std::fill(t.data.begin(), t.data.end(), 0.0);
}

} // namespace

void Network::check_input(const Tensor& x) const {
    if (x.shape != input_shape_)
        throw DataError(fmt::format("layer 0 ({}): expected input {}, got {}",
                                    layers_.empty() ? "input" : kind_name(layers_[0]), to_string(input_shape_),
                                    to_string(x.shape)));
    if (x.data.size() != shape_size(x.shape)) throw DataError("input tensor data length does not match its shape");
}

void Network::run_forward(const Tensor& x, ForwardCache& cache) const {
    check_input(x);
    auto& acts = cache.activations;
    acts.resize(layers_.size() + 1);
    acts[0] = x;
    cache.pool_argmax.resize(layers_.size());

    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Tensor& in = acts[i];
        Tensor& out = acts[i + 1];
        reshape(out, shapes_[i + 1]);
        std::visit(overloaded{
                       [&](const Conv2d& c) {
                           conv_forward(c, in, params_[param_offset_[i]], params_[param_offset_[i] + 1], out);
                       },
                       [&](const MaxPool& p) { pool_forward(p, in, out, cache.pool_argmax[i]); },
                       [&](const Relu&) {
                           std::transform(in.data.begin(), in.data.end(), out.data.begin(),
                                          [](double v) { return v > 0.0 ? v : 0.0; });
                       },
                       [&](const Sigmoid&) {
                           std::transform(in.data.begin(), in.data.end(), out.data.begin(),
                                          [](double v) { return sigmoid(v); });
                       },
                       [&](const Dense& d) {
                           const auto& w = params_[param_offset_[i]];
                           const auto& b = params_[param_offset_[i] + 1];
                           for (std::size_t o = 0; o < d.out_features; ++o) {
                               double acc = b.data[o];
                               const double* row = w.data.data() + o * d.in_features;
                               for (std::size_t j = 0; j < d.in_features; ++j) acc += row[j] * in.data[j];
                               out.data[o] = acc;
                           }
                       },
                       [&](const Flatten&) { out.data = in.data; },
                   },
                   layers_[i]);
        check_finite(out, i, "activation");
    }
}

void Network::run_backward(const ForwardCache& cache, const Tensor& output_grad, bool need_input_grad,
                           std::vector<Tensor>& deltas, Gradients& grads) const {
    if (cache.activations.size() != layers_.size() + 1 || cache.pool_argmax.size() != layers_.size())
        throw DataError("backward: cache does not belong to this network");
    for (std::size_t i = 0; i < shapes_.size(); ++i)
        if (cache.activations[i].shape != shapes_[i])
            throw DataError(fmt::format("backward: cached activation {} has shape {}, expected {}", i,
                                        to_string(cache.activations[i].shape), to_string(shapes_[i])));
    if (output_grad.shape != shapes_.back())
        throw DataError(fmt::format("backward: output gradient shape {} does not match output {}",
                                    to_string(output_grad.shape), to_string(shapes_.back())));

    grads.params.resize(params_.size());
    for (std::size_t p = 0; p < params_.size(); ++p) reset(grads.params[p], params_[p].shape);
    deltas.resize(layers_.size() + 1);
    deltas.back() = output_grad;

    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Tensor& in = cache.activations[li];
        const Tensor& out = cache.activations[li + 1];
        const Tensor& upstream = deltas[li + 1];
        Tensor& down = deltas[li];
        const bool skip_down = li == 0 && !need_input_grad && std::holds_alternative<Conv2d>(layers_[li]);
        if (skip_down) {
            down.shape.clear();
            down.data.clear();
        } else {
            reset(down, in.shape);
        }
        std::visit(overloaded{
                       [&](const Conv2d& c) {
                           conv_backward(c, in, params_[param_offset_[li]], upstream, skip_down ? nullptr : &down,
                                         grads.params[param_offset_[li]], grads.params[param_offset_[li] + 1]);
                       },
                       [&](const MaxPool&) {
                           const auto& argmax = cache.pool_argmax[li];
                           if (argmax.size() != upstream.size())
                               throw DataError("backward: pooling record does not match cache");
                           for (std::size_t o = 0; o < upstream.size(); ++o) down.data[argmax[o]] += upstream.data[o];
                       },
                       [&](const Relu&) {
                           for (std::size_t j = 0; j < down.size(); ++j)
                               down.data[j] = in.data[j] > 0.0 ? upstream.data[j] : 0.0;
                       },
                       [&](const Sigmoid&) {
                           for (std::size_t j = 0; j < down.size(); ++j)
                               down.data[j] = upstream.data[j] * out.data[j] * (1.0 - out.data[j]);
                       },
                       [&](const Dense& d) {
                           const auto& w = params_[param_offset_[li]];
                           auto& gw = grads.params[param_offset_[li]];
                           auto& gb = grads.params[param_offset_[li] + 1];
                           for (std::size_t o = 0; o < d.out_features; ++o) {
                               const double g = upstream.data[o];
                               gb.data[o] += g;
                               const double* row = w.data.data() + o * d.in_features;
                               double* grow = gw.data.data() + o * d.in_features;
                               for (std::size_t j = 0; j < d.in_features; ++j) {
                                   grow[j] += g * in.data[j];
                                   down.data[j] += g * row[j];
                               }
                           }
                       },
                       [&](const Flatten&) { down.data = upstream.data; },
                   },
                   layers_[li]);
        check_finite(down, li, "gradient");
    }
    if (deltas.front().data.empty()) {
        grads.input.shape.clear();
        grads.input.data.clear();
    } else {
        grads.input = deltas.front();
    }
}

ForwardResult Network::forward(const Tensor& x) const {
    ForwardResult result;
    run_forward(x, result.cache);
    result.output = result.cache.activations.back();
    return result;
}

const Tensor& Network::forward(const Tensor& x, Workspace& ws) const {
    run_forward(x, ws.cache);
    return ws.cache.activations.back();
}

Tensor Network::infer(const Tensor& x) const { return forward(x).output; }

Gradients Network::backward(const ForwardCache& cache, const Tensor& output_grad, bool need_input_grad) const {
    Gradients grads;
    std::vector<Tensor> deltas;
    run_backward(cache, output_grad, need_input_grad, deltas, grads);
    return grads;
}

const Gradients& Network::backward(Workspace& ws, const Tensor& output_grad, bool need_input_grad) const {
    run_backward(ws.cache, output_grad, need_input_grad, ws.deltas, ws.grads);
    return ws.grads;
}

double sigmoid(double x) noexcept {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

ScalarLoss bce_with_logits(double logit, int label) {
    const double y = label != 0 ? 1.0 : 0.0;
    return {std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit))), sigmoid(logit) - y};
}

LossResult mse(const Tensor& pred, const Tensor& target) {
    if (pred.shape != target.shape)
        throw DataError(fmt::format("mse: shape mismatch {} vs {}", to_string(pred.shape), to_string(target.shape)));
    LossResult r{0.0, Tensor(pred.shape)};
    const auto n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        r.loss += d * d;
        r.grad.data[i] = 2.0 * d / n;
    }
    r.loss /= n;
    return r;
}

AdamState AdamState::for_params(std::span<const Tensor> params, AdamHyper hyper) {
    if (!(hyper.lr >= 0) || !(hyper.beta1 > 0 && hyper.beta1 < 1) || !(hyper.beta2 > 0 && hyper.beta2 < 1) ||
        !(hyper.epsilon > 0))
        throw UsageError("adam: require lr >= 0, 0 < beta1, beta2 < 1, epsilon > 0");
    AdamState state;
    state.hyper = hyper;
    for (const auto& p : params) {
        state.first_moment.emplace_back(p.shape);
        state.second_moment.emplace_back(p.shape);
    }
    return state;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw DataError("adam: parameter, gradient and moment lists differ in length");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape != grads[i].shape || params[i].shape != state.first_moment[i].shape)
            throw DataError(fmt::format("adam: shape mismatch at parameter {}", i));
        for (double g : grads[i].data)
            if (!std::isfinite(g)) throw NumericError(fmt::format("adam: non-finite gradient in parameter {}", i));
    }

    const auto& h = state.hyper;
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i].data;
        auto& v = state.second_moment[i].data;
        auto& p = params[i].data;
        const auto& g = grads[i].data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
            const double update = h.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h.epsilon);
            p[j] -= update;
        }
    }
}

GradCheckReport grad_check(const Network& net, const Tensor& x, const OutputLoss& loss, double step, bool check_input,
                           const BackwardFn& backward) {
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); };

    const auto fwd = net.forward(x);
    const auto out_loss = loss(fwd.output);
    const Gradients analytic = backward ? backward(net, fwd.cache, out_loss.grad) : net.backward(fwd.cache, out_loss.grad);

    GradCheckReport report;
    Network probe = net;
    Workspace ws;
    auto eval = [&](const Network& n, const Tensor& input) { return loss(n.forward(input, ws)).loss; };
    for (std::size_t pi = 0; pi < probe.parameters().size(); ++pi) {
        auto& values = probe.parameters()[pi].data;
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + step;
            const double plus = eval(probe, x);
            values[j] = saved - step;
            const double minus = eval(probe, x);
            values[j] = saved;
            const double numeric = (plus - minus) / (2.0 * step);
            report.max_param_error = std::max(report.max_param_error, rel(analytic.params[pi].data[j], numeric));
            ++report.checked_params;
        }
    }
    if (check_input) {
        Tensor xp = x;
        for (std::size_t j = 0; j < xp.size(); ++j) {
            const double saved = xp.data[j];
            xp.data[j] = saved + step;
            const double plus = eval(net, xp);
            xp.data[j] = saved - step;
            const double minus = eval(net, xp);
            xp.data[j] = saved;
            report.max_input_error =
                std::max(report.max_input_error, rel(analytic.input.data[j], (plus - minus) / (2.0 * step)));
        }
    }
    return report;
}

} // namespace stitchnet::nn
