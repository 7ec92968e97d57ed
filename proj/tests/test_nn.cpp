#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "stitchnet/errors.hpp"
#include "stitchnet/nn.hpp"

using namespace stitchnet;
using namespace stitchnet::nn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = u(rng);
    return t;
}

OutputLoss weighted_sum_loss(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(n);
    for (auto& v : w) v = u(rng);
    return [w](const Tensor& out) {
        LossResult r{0.0, Tensor(out.shape)};
        for (std::size_t i = 0; i < out.size(); ++i) {
            r.loss += w[i] * out.data[i];
            r.grad.data[i] = w[i];
        }
        return r;
    };
}

OutputLoss mse_loss(Tensor target) {
    return [target](const Tensor& out) { return mse(out, target); };
}

} // namespace

TEST_SUITE("nncore") {
    TEST_CASE("identity kernel reproduces the input") {
        Network net({1, 4, 5}, {Conv2d{1, 1, 3, 1, 1}});
        auto& w = net.parameters()[0].data;
        std::fill(w.begin(), w.end(), 0.0);
        w[4] = 1.0;
        std::mt19937_64 rng(1);
        const auto x = random_tensor({1, 4, 5}, rng);
        CHECK(net.infer(x).data == x.data);
    }

    TEST_CASE("relu and dense forward examples") {
        Network relu({3}, {Relu{}});
        CHECK(relu.infer(Tensor({3}, {-1.0, 0.0, 2.0})).data == std::vector<double>{0.0, 0.0, 2.0});

        Network dense({2}, {Dense{2, 2}});
        dense.parameters()[0].data = {1, 2, 3, 4};
        dense.parameters()[1].data = {0, 0};
        CHECK(dense.infer(Tensor({2}, {1.0, 1.0})).data == std::vector<double>{3.0, 7.0});
    }

    TEST_CASE("shape errors name the layer and shapes") {
        CHECK_THROWS_WITH_AS(Network({1, 8, 8}, {Conv2d{1, 2}, Relu{}, Dense{10, 1}}), doctest::Contains("layer 2"),
                             DataError);
        CHECK_THROWS_WITH_AS(Network({3, 8, 8}, {Conv2d{1, 2}}), doctest::Contains("[3x8x8]"), DataError);
        Network net({1, 4, 4}, {Conv2d{1, 1}});
        CHECK_THROWS_WITH_AS(net.forward(Tensor({1, 5, 4})), doctest::Contains("layer 0"), DataError);
        CHECK_THROWS_AS(Network({1, 4, 4}, {MaxPool{2, 0}}), DataError);
        CHECK_THROWS_AS(Network({1, 4, 4}, {Conv2d{1, 1, 0, 1, 0}}), DataError);
    }

    TEST_CASE("backward rejects a foreign cache") {
        Network a({4}, {Dense{4, 2}}), b({3}, {Dense{3, 2}});
        const auto fwd = b.forward(Tensor({3}));
        CHECK_THROWS_AS(a.backward(fwd.cache, Tensor({2})), DataError);
        const auto own = a.forward(Tensor({4}));
        CHECK_THROWS_AS(a.backward(own.cache, Tensor({3})), DataError);
    }

    TEST_CASE("mse at the target gives zero gradients") {
        Network net({3}, {Dense{3, 2}});
        net.initialize(4);
        const Tensor x({3}, {0.3, -0.2, 0.9});
        const auto fwd = net.forward(x);
        const auto loss = mse(fwd.output, fwd.output);
        const auto g = net.backward(fwd.cache, loss.grad);
        for (const auto& p : g.params)
            for (double v : p.data) CHECK(v == 0.0);
    }

    TEST_CASE("relu passes no gradient for negative inputs") {
        Network net({4}, {Relu{}});
        const auto fwd = net.forward(Tensor({4}, {-1.0, -0.5, -3.0, -0.1}));
        const auto g = net.backward(fwd.cache, Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
        for (double v : g.input.data) CHECK(v == 0.0);
    }

    TEST_CASE("bce with logits examples") {
        const auto a = bce_with_logits(0.0, 1);
        CHECK(a.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(a.grad == -0.5);
        const auto b = bce_with_logits(0.0, 0);
        CHECK(b.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(b.grad == 0.5);
        const auto c = bce_with_logits(3.0, 1);
        CHECK(c.loss == doctest::Approx(0.048587).epsilon(1e-5));
        CHECK(c.grad == doctest::Approx(-0.047426).epsilon(1e-5));
        // independent oracle: -log(sigmoid(3))
        CHECK(c.loss == doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-14));
    }

    TEST_CASE("bce stays finite for extreme logits") {
        for (double z : {-1e6, -750.0, -1.0, 1.0, 750.0, 1e6})
            for (int y : {0, 1}) {
                const auto l = bce_with_logits(z, y);
                CHECK(std::isfinite(l.loss));
                CHECK(std::isfinite(l.grad));
            }
    }

    TEST_CASE("mse examples") {
        const auto a = mse(Tensor({1}, {2.0}), Tensor({1}, {0.0}));
        CHECK(a.loss == 4.0);
        CHECK(a.grad.data == std::vector<double>{4.0});
        const auto b = mse(Tensor({2}, {1.0, 2.0}), Tensor({2}));
        CHECK(b.loss == 2.5);
        CHECK(b.grad.data == std::vector<double>{1.0, 2.0});
        CHECK_THROWS_AS(mse(Tensor({2}), Tensor({3})), DataError);
    }

    TEST_CASE("adam first step moves by about lr against the gradient") {
        std::vector<Tensor> params{Tensor({3}, {1.0, 1.0, 1.0})};
        const std::vector<Tensor> grads{Tensor({3}, {0.3, -7.0, 0.0})};
        auto state = AdamState::for_params(params, {0.01, 0.9, 0.999, 1e-8});
        adam_step(params, grads, state);
        CHECK(state.step_count == 1);
        CHECK(params[0].data[0] == doctest::Approx(0.99).epsilon(1e-9));
        CHECK(params[0].data[1] == doctest::Approx(1.01).epsilon(1e-9));
        CHECK(params[0].data[2] == 1.0);
    }

    TEST_CASE("adam converges on a scalar quadratic") {
        std::vector<Tensor> theta{Tensor({1}, {0.0})};
        auto state = AdamState::for_params(theta, {0.1, 0.9, 0.999, 1e-8});
        for (int i = 0; i < 200; ++i) {
            const std::vector<Tensor> g{Tensor({1}, {2.0 * (theta[0].data[0] - 3.0)})};
            adam_step(theta, g, state);
        }
        CHECK(std::abs(theta[0].data[0] - 3.0) < 0.05);
    }

    TEST_CASE("adam with zero learning rate leaves parameters untouched") {
        std::mt19937_64 rng(8);
        std::vector<Tensor> params{random_tensor({5}, rng)};
        const auto before = params;
        auto state = AdamState::for_params(params, {0.0, 0.9, 0.999, 1e-8});
        for (int i = 0; i < 5; ++i) {
            const std::vector<Tensor> g{random_tensor({5}, rng)};
            adam_step(params, g, state);
        }
        CHECK(params == before);
    }

    TEST_CASE("adam rejects non-finite gradients and bad hyperparameters") {
        std::vector<Tensor> params{Tensor({2}, {1.0, 2.0})};
        auto state = AdamState::for_params(params);
        const std::vector<Tensor> bad{Tensor({2}, {1.0, std::nan("")})};
        CHECK_THROWS_AS(adam_step(params, bad, state), NumericError);
        CHECK(params[0].data == std::vector<double>{1.0, 2.0});
        CHECK_THROWS_AS(AdamState::for_params(params, {1e-3, 1.0, 0.999, 1e-8}), UsageError);
        CHECK_THROWS_AS(AdamState::for_params(params, {1e-3, 0.9, 0.999, 0.0}), UsageError);
    }

    TEST_CASE("linear network gradient check is exact to rounding") {
        Network net({5}, {Dense{5, 3}});
        net.initialize(2);
        std::mt19937_64 rng(3);
        const auto x = random_tensor({5}, rng);
        const auto report = grad_check(net, x, mse_loss(random_tensor({3}, rng)), 1e-5, true);
        CHECK(report.max_param_error < 1e-7);
        CHECK(report.max_input_error < 1e-7);
        CHECK(report.checked_params == 18);
    }

    TEST_CASE("gradient check per layer kind on randomized shapes") {
        std::mt19937_64 rng(21);
        std::uniform_int_distribution<std::size_t> small(1, 3), side(5, 9);
        struct Dims {
            std::size_t cin, cout, h, w;
        };
        std::vector<Dims> trials;
        for (int t = 0; t < 4; ++t) trials.push_back({small(rng), small(rng), side(rng), side(rng)});

        SUBCASE("conv2d") {
            for (const auto& [cin, cout, h, w] : trials)
                for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
                    Network net({cin, h, w}, {Conv2d{cin, cout, 3, stride, 1}});
                    net.initialize(h * w + stride);
                    const auto x = random_tensor({cin, h, w}, rng);
                    const auto r = grad_check(net, x, weighted_sum_loss(shape_size(net.output_shape()), 5), 1e-5, true);
                    CHECK(r.max_param_error < 1e-4);
                    CHECK(r.max_input_error < 1e-4);
                }
        }
        SUBCASE("maxpool") {
            for (const auto& [cin, cout, h, w] : trials) {
                Network net({cin, h, w}, {MaxPool{2, 2}});
                // distinct values keep every window away from a tie
                Tensor x({cin, h, w});
                for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.01 * static_cast<double>(i);
                std::shuffle(x.data.begin(), x.data.end(), rng);
                const auto r = grad_check(net, x, weighted_sum_loss(shape_size(net.output_shape()), 6), 1e-5, true);
                CHECK(r.max_input_error < 1e-4);
            }
        }
        SUBCASE("relu") {
            for (const auto& [cin, cout, h, w] : trials) {
                Network net({cin, h, w}, {Relu{}});
                auto x = random_tensor({cin, h, w}, rng);
                for (auto& v : x.data)
                    if (std::abs(v) < 1e-3) v = 0.5;
                const auto r = grad_check(net, x, weighted_sum_loss(x.size(), 7), 1e-5, true);
                CHECK(r.max_input_error < 1e-4);
            }
        }
        SUBCASE("sigmoid") {
            for (const auto& [cin, cout, h, w] : trials) {
                Network net({cin * h}, {Sigmoid{}});
                const auto x = random_tensor({cin * h}, rng, -4.0, 4.0);
                const auto r = grad_check(net, x, weighted_sum_loss(x.size(), 8), 1e-5, true);
                CHECK(r.max_input_error < 1e-4);
            }
        }
        SUBCASE("dense") {
            for (const auto& [cin, cout, h, w] : trials) {
                Network net({h}, {Dense{h, cout}});
                net.initialize(h + 10 * cout);
                const auto x = random_tensor({h}, rng);
                const auto r = grad_check(net, x, mse_loss(random_tensor({cout}, rng)), 1e-5, true);
                CHECK(r.max_param_error < 1e-4);
                CHECK(r.max_input_error < 1e-4);
            }
        }
        SUBCASE("flatten") {
            for (const auto& [cin, cout, h, w] : trials) {
                Network net({cin, h, w}, {Flatten{}, Dense{cin * h * w, 1}});
                net.initialize(3);
                const auto x = random_tensor({cin, h, w}, rng);
                const auto r = grad_check(net, x, mse_loss(Tensor({1}, {0.3})), 1e-5, true);
                CHECK(r.max_param_error < 1e-4);
                CHECK(r.max_input_error < 1e-4);
            }
        }
    }

    TEST_CASE("two-layer network input gradient matches finite differences") {
        Network net({6}, {Dense{6, 5}, Sigmoid{}, Dense{5, 2}});
        net.initialize(12);
        std::mt19937_64 rng(13);
        const auto x = random_tensor({6}, rng);
        const auto r = grad_check(net, x, mse_loss(random_tensor({2}, rng)), 1e-5, true);
        CHECK(r.max_input_error < 1e-4);
        CHECK(r.max_param_error < 1e-4);
    }

    TEST_CASE("gradient check catches a corrupted backward") {
        Network net({4}, {Dense{4, 3}, Relu{}, Dense{3, 1}});
        net.initialize(5);
        std::mt19937_64 rng(14);
        const auto x = random_tensor({4}, rng);
        const BackwardFn corrupted = [](const Network& n, const ForwardCache& cache, const Tensor& g) {
            auto grads = n.backward(cache, g);
            for (auto& p : grads.params)
                for (auto& v : p.data) v = v * 1.5 + 0.1;
            return grads;
        };
        const auto r = grad_check(net, x, mse_loss(Tensor({1}, {2.0})), 1e-5, false, corrupted);
        CHECK(r.max_param_error > 1e-2);
    }

    TEST_CASE("maxpool routes each upstream gradient to one input") {
        Network net({2, 6, 6}, {MaxPool{3, 3}});
        Tensor x({2, 6, 6}, 1.0); // all ties: first occurrence wins
        x.data[7] = 0.5;
        const auto fwd = net.forward(x);
        std::mt19937_64 rng(15);
        const auto up = random_tensor(net.output_shape(), rng);
        const auto g = net.backward(fwd.cache, up);
        double up_sum = 0.0, in_sum = 0.0;
        for (double v : up.data) up_sum += v;
        for (double v : g.input.data) in_sum += v;
        CHECK(in_sum == doctest::Approx(up_sum).epsilon(1e-14));
        CHECK(g.input.data[0] == up.data[0]);
        CHECK(g.input.data[1] == 0.0);
        std::size_t nonzero = 0;
        for (double v : g.input.data) nonzero += v != 0.0;
        CHECK(nonzero == up.size());
    }

    TEST_CASE("forward is deterministic and workspace passes agree") {
        Network net({1, 16, 16}, {Conv2d{1, 2}, Relu{}, MaxPool{2, 2}, Flatten{}, Dense{128, 1}});
        net.initialize(9);
        std::mt19937_64 rng(16);
        const auto x = random_tensor({1, 16, 16}, rng);
        const auto a = net.forward(x);
        CHECK(net.forward(x).output == a.output);

        Workspace ws;
        const auto& out = net.forward(x, ws);
        CHECK(out == a.output);
        const auto& g = net.backward(ws, Tensor({1}, {1.0}));
        const auto ref = net.backward(a.cache, Tensor({1}, {1.0}));
        CHECK(g.params == ref.params);
        CHECK(g.input == ref.input);

        const auto& no_input = net.backward(ws, Tensor({1}, {1.0}), false);
        CHECK(no_input.params == ref.params);
        CHECK(no_input.input.data.empty());
    }

    TEST_CASE("non-finite activations raise a numeric error") {
        Network net({2}, {Dense{2, 1}});
        net.parameters()[0].data = {1e308, 1e308};
        CHECK_THROWS_AS(net.forward(Tensor({2}, {10.0, 10.0})), NumericError);
    }

    TEST_CASE("glorot initialization respects its bound and is seeded") {
        Network a({1, 8, 8}, {Conv2d{1, 4}, Flatten{}, Dense{256, 3}});
        Network b = a;
        a.initialize(42);
        b.initialize(42);
        CHECK(a.parameters() == b.parameters());
        const double conv_limit = std::sqrt(6.0 / (9.0 + 36.0));
        for (double v : a.parameters()[0].data) CHECK(std::abs(v) <= conv_limit);
        for (double v : a.parameters()[1].data) CHECK(v == 0.0);
        const double dense_limit = std::sqrt(6.0 / (256.0 + 3.0));
        for (double v : a.parameters()[2].data) CHECK(std::abs(v) <= dense_limit);
        CHECK(a.parameter_count() == 36 + 4 + 768 + 3);
    }
}
