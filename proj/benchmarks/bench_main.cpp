#include <random>

#include <benchmark/benchmark.h>

#include "stitchnet/analysis.hpp"
#include "stitchnet/classifier.hpp"
#include "stitchnet/volume.hpp"

using namespace stitchnet;

namespace {

nn::Tensor random_input(std::size_t size) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Tensor x({1, size, size});
    for (auto& v : x.data) v = u(rng);
    return x;
}

void BM_ReferenceForward(benchmark::State& state) {
    const auto cfg = ClassifierConfig::reference();
    auto net = make_classifier_network(cfg);
    net.initialize(1);
    const auto x = random_input(cfg.input_size);
    nn::Workspace ws;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, ws).data[0]);
}
BENCHMARK(BM_ReferenceForward)->Unit(benchmark::kMillisecond);

void BM_ReferenceForwardBackward(benchmark::State& state) {
    const auto cfg = ClassifierConfig::reference();
    auto net = make_classifier_network(cfg);
    net.initialize(1);
    const auto x = random_input(cfg.input_size);
    nn::Workspace ws;
    const nn::Tensor og({1}, 1.0);
    const bool input_grad = state.range(0) != 0;
    for (auto _ : state) {
        net.forward(x, ws);
        benchmark::DoNotOptimize(net.backward(ws, og, input_grad).params[0].data[0]);
    }
}
BENCHMARK(BM_ReferenceForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_StitchResize(benchmark::State& state) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Volume v({64, 64, 32});
    for (auto& x : v.data) x = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(resize_bilinear(stitch(v), 256, 256).data[0]);
}
BENCHMARK(BM_StitchResize)->Unit(benchmark::kMicrosecond);

void BM_DistanceCorrelation(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(n, std::vector<double>(64)), y(n, std::vector<double>(8));
    for (auto& r : x)
        for (auto& v : r) v = g(rng);
    for (auto& r : y)
        for (auto& v : r) v = g(rng);
    for (auto _ : state) benchmark::DoNotOptimize(distance_correlation(x, y));
}
BENCHMARK(BM_DistanceCorrelation)->Arg(50)->Arg(200)->Unit(benchmark::kMicrosecond);

} // namespace
BENCHMARK_MAIN();
