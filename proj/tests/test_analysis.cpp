#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "stitchnet/analysis.hpp"
#include "stitchnet/errors.hpp"
#include "support.hpp"

using namespace stitchnet;

namespace {

nn::Network linear_net(std::size_t h, std::size_t w, const std::vector<double>& weights) {
    nn::Network net({1, h, w}, {nn::Flatten{}, nn::Dense{h * w, 1}});
    net.parameters()[0].data = weights;
    return net;
}

nn::Network small_cnn(std::uint64_t seed) {
    nn::Network net({1, 8, 8}, {nn::Conv2d{1, 2, 3, 1, 1}, nn::Relu{}, nn::MaxPool{2, 2}, nn::Flatten{},
                                nn::Dense{32, 1}});
    net.initialize(seed);
    for (auto& b : net.parameters()[1].data) b = 0.05;
    return net;
}

nn::Tensor random_image(std::mt19937_64& rng, std::size_t h, std::size_t w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Tensor x({1, h, w});
    for (auto& v : x.data) v = u(rng);
    return x;
}

TrainedClassifier wrap(nn::Network net) {
    TrainedClassifier m;
    m.network = std::move(net);
    return m;
}

// Double-centred distance matrices, straight from the definition.
double dcor_oracle(const Matrix& x, const Matrix& y) {
    const std::size_t n = x.size();
    auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        return std::sqrt(s);
    };
    auto centred = [&](const Matrix& m) {
        std::vector<std::vector<double>> d(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) d[i][j] = dist(m[i], m[j]);
        std::vector<double> row(n, 0.0), col(n, 0.0);
        double all = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                row[i] += d[i][j] / n;
                col[j] += d[i][j] / n;
                all += d[i][j] / (n * n);
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) d[i][j] = d[i][j] - row[i] - col[j] + all;
        return d;
    };
    const auto a = centred(x), b = centred(y);
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            xy += a[i][j] * b[i][j];
            xx += a[i][j] * a[i][j];
            yy += b[i][j] * b[i][j];
        }
    return std::sqrt(xy / std::sqrt(xx * yy));
}

Matrix column(std::initializer_list<double> v) {
    Matrix m;
    for (double x : v) m.push_back({x});
    return m;
}

} // namespace

TEST_SUITE("analysis") {
    TEST_CASE("saliency of a zero network is zero") {
        auto net = small_cnn(1);
        for (auto& p : net.parameters()) std::fill(p.data.begin(), p.data.end(), 0.0);
        std::mt19937_64 rng(1);
        const auto map = saliency(net, random_image(rng, 8, 8));
        CHECK(map.grid.rows == 8);
        CHECK(map.grid.cols == 8);
        for (double v : map.grid.data) CHECK(v == 0.0);
    }

    TEST_CASE("saliency of a linear model is the absolute weights") {
        std::vector<double> w{1.0, -2.0, 0.0, 0.5, -0.25, 3.0};
        const auto net = linear_net(2, 3, w);
        std::mt19937_64 rng(2);
        const auto map = saliency(net, random_image(rng, 2, 3));
        for (std::size_t i = 0; i < w.size(); ++i) CHECK(map.grid.data[i] == std::abs(w[i]));
        CHECK(map.normalization == Normalization::Raw);
    }

    TEST_CASE("saliency matches finite differences of the logit") {
        const auto net = small_cnn(3);
        std::mt19937_64 rng(3);
        const auto x = random_image(rng, 8, 8);
        const auto map = saliency(net, x);
        const double h = 1e-6;
        for (std::size_t i = 0; i < x.size(); ++i) {
            auto up = x, down = x;
            up.data[i] += h;
            down.data[i] -= h;
            const double fd = (net.infer(up).data[0] - net.infer(down).data[0]) / (2 * h);
            CHECK(map.grid.data[i] == doctest::Approx(std::abs(fd)).epsilon(1e-4).scale(1.0));
        }
        for (double v : map.grid.data) CHECK(v >= 0.0);
    }

    TEST_CASE("saliency input validation") {
        const auto net = small_cnn(1);
        CHECK_THROWS_AS(saliency(net, nn::Tensor({2, 8, 8})), DataError);
    }

    TEST_CASE("peak normalization") {
        SaliencyMap m{Grid2D(2, 2), Normalization::Raw, ClassTag::SingleSubject};
        m.grid.data = {0.5, 2.0, 1.0, 0.0};
        peak_normalize(m);
        CHECK(m.grid.data == std::vector<double>{0.25, 1.0, 0.5, 0.0});
        CHECK(m.normalization == Normalization::Peak);

        SaliencyMap zero{Grid2D(2, 2), Normalization::Raw, ClassTag::SingleSubject};
        peak_normalize(zero);
        CHECK(zero.grid.data == std::vector<double>(4, 0.0));

        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(0.0, 7.0);
        SaliencyMap r{Grid2D(5, 5), Normalization::Raw, ClassTag::SingleSubject};
        for (auto& v : r.grid.data) v = u(rng);
        peak_normalize(r);
        CHECK(*std::max_element(r.grid.data.begin(), r.grid.data.end()) == 1.0);
    }

    TEST_CASE("class averages") {
        const auto model = wrap(small_cnn(5));
        std::mt19937_64 rng(5);
        std::vector<nn::Tensor> inputs;
        for (int i = 0; i < 6; ++i) inputs.push_back(random_image(rng, 8, 8));
        const std::vector<int> labels{0, 1, 0, 1, 0, 0};

        SUBCASE("one subject is its own normalized map") {
            auto single = saliency(model, inputs[1]);
            peak_normalize(single);
            const std::vector<nn::Tensor> one{inputs[1]};
            const std::vector<int> l{1};
            const auto avg = class_average_saliency(model, one, l, 1);
            for (std::size_t i = 0; i < avg.grid.data.size(); ++i)
                CHECK(avg.grid.data[i] == doctest::Approx(single.grid.data[i]).epsilon(1e-12));
            CHECK(avg.class_tag == ClassTag::Above);
            CHECK(avg.normalization == Normalization::Peak);
        }
        SUBCASE("duplicates do not change the average") {
            const std::vector<nn::Tensor> one{inputs[0]}, two{inputs[0], inputs[0]};
            const auto a = class_average_saliency(model, one, std::vector<int>{0}, 0);
            const auto b = class_average_saliency(model, two, std::vector<int>{0, 0}, 0);
            for (std::size_t i = 0; i < a.grid.data.size(); ++i)
                CHECK(a.grid.data[i] == doctest::Approx(b.grid.data[i]).epsilon(1e-12));
        }
        SUBCASE("two subjects average before normalizing") {
            const auto s0 = saliency(model, inputs[0]).grid.data, s2 = saliency(model, inputs[2]).grid.data;
            std::vector<double> mean(s0.size());
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = (s0[i] + s2[i]) / 2.0;
            const double peak = *std::max_element(mean.begin(), mean.end());
            const std::vector<nn::Tensor> pair{inputs[0], inputs[2]};
            const auto avg = class_average_saliency(model, pair, std::vector<int>{0, 0}, 0);
            for (std::size_t i = 0; i < mean.size(); ++i)
                CHECK(avg.grid.data[i] == doctest::Approx(mean[i] / peak).epsilon(1e-12));
        }
        SUBCASE("order of subjects does not matter") {
            const auto a = class_average_saliency(model, inputs, labels, 0);
            std::vector<std::size_t> order{5, 3, 0, 4, 1, 2};
            std::vector<nn::Tensor> shuffled;
            std::vector<int> shuffled_labels;
            for (auto i : order) {
                shuffled.push_back(inputs[i]);
                shuffled_labels.push_back(labels[i]);
            }
            const auto b = class_average_saliency(model, shuffled, shuffled_labels, 0);
            for (std::size_t i = 0; i < a.grid.data.size(); ++i)
                CHECK(a.grid.data[i] == doctest::Approx(b.grid.data[i]).epsilon(1e-12));
            CHECK(a.class_tag == ClassTag::Below);
        }
        SUBCASE("errors") {
            CHECK_THROWS_AS(class_average_saliency(model, inputs, std::vector<int>{0, 1}, 0), DataError);
            const std::vector<int> all_zero(6, 0);
            CHECK_THROWS_WITH_AS(class_average_saliency(model, inputs, all_zero, 1), doctest::Contains("no subjects"),
                                 DataError);
        }
    }

    TEST_CASE("restacking") {
        const Dims3 dims{6, 5, 3};
        const auto layout = MosaicLayout::for_dims(dims);

        SUBCASE("zero map restacks to zero") {
            const SaliencyMap zero{Grid2D(16, 16), Normalization::Raw, ClassTag::Below};
            const auto v = restack_saliency(zero, layout, dims);
            CHECK(v.dims == dims);
            for (double x : v.data) CHECK(x == 0.0);
        }
        SUBCASE("a hot spot lands in the right slice") {
            // map at mosaic resolution so the upsample is the identity
            SaliencyMap m{Grid2D(layout.mosaic_rows(), layout.mosaic_cols()), Normalization::Raw, ClassTag::Below};
            const Voxel target{4, 2, 1};
            const auto [r, c] = layout.pixel_of(target);
            m.grid.at(r, c) = 1.0;
            const auto v = restack_saliency(m, layout, dims);
            for (std::size_t z = 0; z < dims.nz; ++z)
                for (std::size_t y = 0; y < dims.ny; ++y)
                    for (std::size_t x = 0; x < dims.nx; ++x)
                        CHECK(v.at(x, y, z) == (Voxel{x, y, z} == target ? 1.0 : 0.0));
        }
        SUBCASE("smooth maps keep their mass") {
            const Dims3 big{32, 32, 16};
            const auto lay = MosaicLayout::for_dims(big);
            SaliencyMap m{Grid2D(64, 64), Normalization::Raw, ClassTag::Below};
            for (std::size_t r = 0; r < 64; ++r)
                for (std::size_t c = 0; c < 64; ++c)
                    m.grid.at(r, c) = 1.0 + 0.5 * std::sin(0.1 * static_cast<double>(r)) *
                                                std::cos(0.07 * static_cast<double>(c));
            const auto v = restack_saliency(m, lay, big);
            double map_mass = 0.0, vol_mass = 0.0;
            for (double x : m.grid.data) map_mass += x;
            for (double x : v.data) vol_mass += x;
            const double scale = static_cast<double>(lay.mosaic_rows() * lay.mosaic_cols()) / (64.0 * 64.0);
            CHECK(std::abs(vol_mass - map_mass * scale) / (map_mass * scale) < 0.05);
        }
        SUBCASE("stitching the restacked volume recovers the upsampled map") {
            const Dims3 odd{6, 5, 3}; // 2x2 grid with one padding cell
            const auto lay = MosaicLayout::for_dims(odd);
            std::mt19937_64 rng(4);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            SaliencyMap m{Grid2D(7, 9), Normalization::Raw, ClassTag::Below};
            for (auto& x : m.grid.data) x = u(rng);
            const auto up = upsample_to_mosaic(m.grid, lay);
            const auto back = stitch(restack_saliency(m, lay, odd));
            for (std::size_t r = 0; r < lay.mosaic_rows(); ++r)
                for (std::size_t c = 0; c < lay.mosaic_cols(); ++c)
                    if (lay.voxel_of(r, c)) CHECK(back.pixels.at(r, c) == up.pixels.at(r, c));
        }
        SUBCASE("layout must match the cohort") {
            const SaliencyMap zero{Grid2D(4, 4), Normalization::Raw, ClassTag::Below};
            CHECK_THROWS_AS(restack_saliency(zero, layout, Dims3{6, 5, 4}), DataError);
        }
    }

    TEST_CASE("projections") {
        SUBCASE("point source") {
            Volume v({4, 3, 2});
            v.at(2, 1, 1) = 5.0;
            const auto p = project_views(v, ProjectionMode::Max, false);
            CHECK(p.axial.rows == 3);
            CHECK(p.axial.cols == 4);
            CHECK(p.sagittal.rows == 2);
            CHECK(p.sagittal.cols == 3);
            CHECK(p.coronal.rows == 2);
            CHECK(p.coronal.cols == 4);
            CHECK(p.axial.at(1, 2) == 5.0);
            CHECK(p.sagittal.at(1, 1) == 5.0);
            CHECK(p.coronal.at(1, 2) == 5.0);
            double total = 0.0;
            for (double x : p.axial.data) total += x;
            CHECK(total == 5.0);
            const auto shared = project_views(v);
            CHECK(shared.axial.at(1, 2) == 1.0);
        }
        SUBCASE("constant volume") {
            Volume v({3, 3, 3});
            std::fill(v.data.begin(), v.data.end(), 0.4);
            for (auto mode : {ProjectionMode::Max, ProjectionMode::Mean}) {
                const auto p = project_views(v, mode, false);
                for (const auto* g : {&p.axial, &p.sagittal, &p.coronal})
                    for (double x : g->data) CHECK(x == doctest::Approx(0.4));
            }
        }
        SUBCASE("brute-force reductions") {
            std::mt19937_64 rng(8);
            auto v = testing::random_volume(rng, {5, 4, 3});
            for (auto& x : v.data) x = std::abs(x);
            const auto mx = project_views(v, ProjectionMode::Max, false);
            const auto mean = project_views(v, ProjectionMode::Mean, false);
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 5; ++x) {
                    double m = 0.0, s = 0.0;
                    for (std::size_t z = 0; z < 3; ++z) {
                        m = std::max(m, v.at(x, y, z));
                        s += v.at(x, y, z);
                    }
                    CHECK(mx.axial.at(y, x) == m);
                    CHECK(mean.axial.at(y, x) == doctest::Approx(s / 3.0));
                }
            for (std::size_t z = 0; z < 3; ++z)
                for (std::size_t y = 0; y < 4; ++y) {
                    double m = 0.0;
                    for (std::size_t x = 0; x < 5; ++x) m = std::max(m, v.at(x, y, z));
                    CHECK(mx.sagittal.at(z, y) == m);
                }
            for (std::size_t z = 0; z < 3; ++z)
                for (std::size_t x = 0; x < 5; ++x) {
                    double m = 0.0;
                    for (std::size_t y = 0; y < 4; ++y) m = std::max(m, v.at(x, y, z));
                    CHECK(mx.coronal.at(z, x) == m);
                }
        }
    }

    TEST_CASE("jacobi eigendecomposition") {
        const auto e = jacobi_eigen({{2.0, 1.0}, {1.0, 2.0}});
        CHECK(e.values[0] == doctest::Approx(3.0));
        CHECK(e.values[1] == doctest::Approx(1.0));
        CHECK(std::abs(e.vectors[0][0]) == doctest::Approx(std::sqrt(0.5)));
        CHECK_THROWS_AS(jacobi_eigen({{1.0, 2.0}}), DataError);
    }

    TEST_CASE("pca") {
        SUBCASE("points on an axis") {
            Matrix rows;
            for (int i = 0; i < 10; ++i) rows.push_back({static_cast<double>(i), 0.0, 0.0});
            const auto r = pca_fit_project(rows, 2);
            CHECK(r.model.components[0][0] == doctest::Approx(1.0));
            CHECK(r.model.explained_variance[1] == doctest::Approx(0.0).scale(1.0));
            CHECK(r.projections[9][0] == doctest::Approx(4.5));
        }
        SUBCASE("dominant direction of a noisy line") {
            std::mt19937_64 rng(11);
            std::normal_distribution<double> g(0.0, 1.0);
            const double angle = 0.6;
            Matrix rows;
            for (int i = 0; i < 400; ++i) {
                const double t = 5.0 * g(rng), n = 0.3 * g(rng);
                rows.push_back({t * std::cos(angle) - n * std::sin(angle), t * std::sin(angle) + n * std::cos(angle)});
            }
            const auto c = pca_fit_project(rows, 1).model.components[0];
            const double cosine = std::abs(c[0] * std::cos(angle) + c[1] * std::sin(angle));
            CHECK(std::acos(std::min(1.0, cosine)) < 5.0 * std::numbers::pi / 180.0);
        }
        SUBCASE("diagonal covariance orders the axes") {
            std::mt19937_64 rng(12);
            std::normal_distribution<double> g(0.0, 1.0);
            Matrix rows;
            for (int i = 0; i < 2000; ++i) rows.push_back({1.0 * g(rng), 3.0 * g(rng), 0.5 * g(rng)});
            const auto r = pca_fit_project(rows, 3);
            CHECK(std::abs(r.model.components[0][1]) > 0.99);
            CHECK(std::abs(r.model.components[1][0]) > 0.99);
            CHECK(std::abs(r.model.components[2][2]) > 0.99);
            CHECK(r.model.explained_variance[0] == doctest::Approx(9.0).epsilon(0.1));
        }
        SUBCASE("components are orthonormal with sorted variance") {
            std::mt19937_64 rng(13);
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            Matrix rows(30, std::vector<double>(6));
            for (auto& r : rows)
                for (auto& x : r) x = u(rng);
            const auto r = pca_fit_project(rows, 4);
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 4; ++j) {
                    double dot = 0.0;
                    for (std::size_t k = 0; k < 6; ++k) dot += r.model.components[i][k] * r.model.components[j][k];
                    CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).scale(1.0).epsilon(1e-9));
                }
                if (i > 0) CHECK(r.model.explained_variance[i] <= r.model.explained_variance[i - 1]);
                const auto& comp = r.model.components[i];
                const auto big = std::max_element(comp.begin(), comp.end(),
                                                  [](double a, double b) { return std::abs(a) < std::abs(b); });
                CHECK(*big > 0.0);
            }
            CHECK(r.projections.size() == 30);
            CHECK(r.model.project(rows[3]) == r.projections[3]);
        }
        SUBCASE("errors") {
            CHECK_THROWS_AS(pca_fit_project({{1.0}, {2.0}}, 1), DataError);
            CHECK_THROWS_AS(pca_fit_project({{1.0, 2.0}, {2.0, 1.0}, {0.0, 0.0}}, 3), UsageError);
            CHECK_THROWS_AS(pca_fit_project({{1.0}, {1.0}, {1.0}}, 1), NumericError);
        }
    }

    TEST_CASE("distance correlation") {
        SUBCASE("hand-sized example") {
            const auto x = column({1.0, 2.0, 3.0, 4.0});
            const auto y = column({1.0, 4.0, 9.0, 16.0});
            CHECK(distance_correlation(x, y) == doctest::Approx(dcor_oracle(x, y)).epsilon(1e-12));
            CHECK(distance_correlation(x, x) == doctest::Approx(1.0));
        }
        SUBCASE("random samples against the definition") {
            std::mt19937_64 rng(21);
            std::normal_distribution<double> g(0.0, 1.0);
            for (int trial = 0; trial < 10; ++trial) {
                Matrix x(15, std::vector<double>(3)), y(15, std::vector<double>(2));
                for (std::size_t i = 0; i < 15; ++i) {
                    for (auto& v : x[i]) v = g(rng);
                    y[i] = {x[i][0] * x[i][0] + 0.3 * g(rng), g(rng)};
                }
                const double d = distance_correlation(x, y);
                CHECK(d == doctest::Approx(dcor_oracle(x, y)).epsilon(1e-10));
                CHECK(d >= 0.0);
                CHECK(d <= 1.0);
                CHECK(distance_correlation(y, x) == doctest::Approx(d).epsilon(1e-12));
            }
        }
        SUBCASE("invariances") {
            std::mt19937_64 rng(22);
            std::normal_distribution<double> g(0.0, 1.0);
            Matrix x(20, std::vector<double>(2)), y(20, std::vector<double>(1));
            for (std::size_t i = 0; i < 20; ++i) {
                x[i] = {g(rng), g(rng)};
                y[i] = {x[i][0] - x[i][1] + g(rng)};
            }
            const double d = distance_correlation(x, y);
            auto moved = x;
            const double c = std::cos(0.7), s = std::sin(0.7);
            for (auto& r : moved) r = {3.0 * (c * r[0] - s * r[1]) + 10.0, 3.0 * (s * r[0] + c * r[1]) - 4.0};
            CHECK(distance_correlation(moved, y) == doctest::Approx(d).epsilon(1e-10));

            std::vector<std::size_t> perm(20);
            for (std::size_t i = 0; i < 20; ++i) perm[i] = (i * 7) % 20;
            Matrix px, py;
            for (auto i : perm) {
                px.push_back(x[i]);
                py.push_back(y[i]);
            }
            CHECK(distance_correlation(px, py) == doctest::Approx(d).epsilon(1e-10));
        }
        SUBCASE("errors") {
            CHECK_THROWS_WITH_AS(distance_correlation(column({1, 2, 3}), column({5, 5, 5})),
                                 doctest::Contains("constant"), NumericError);
            CHECK_THROWS_AS(distance_correlation(column({1, 2, 3}), column({1, 2})), DataError);
            CHECK_THROWS_AS(distance_correlation(column({1}), column({1})), DataError);
        }
    }
}
