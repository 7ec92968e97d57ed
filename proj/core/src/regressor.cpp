#include "stitchnet/regressor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "stitchnet/csv.hpp"
#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

constexpr std::array<const char*, Demographics::kFullWidth> kDemographicColumns = {
    "a_years_stroke_to_scan", "b_vision", "c_hearing", "d_gender", "e_lesion_count", "f_left", "f_right",
    "g_education_years", "h_age_at_stroke", "i_years_since_stroke", "j_handedness"};

bool is_binary(int v) { return v == 0 || v == 1; }

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

int to_flag(double v, const std::string& context) {
    if (v != 0.0 && v != 1.0) throw DataError(fmt::format("{}: expected 0 or 1, got {}", context, v));
    return static_cast<int>(v);
}

} // namespace

void Demographics::validate() const {
    for (double v : full())
        if (!std::isfinite(v)) throw DataError("demographics: non-finite field");
    if (!is_binary(b_vision_affected) || !is_binary(c_hearing_affected) || !is_binary(d_gender) ||
        !is_binary(f_lesion_side_left) || !is_binary(f_lesion_side_right) || !is_binary(j_handedness))
        throw DataError("demographics: binary field outside {0,1}");
    if (e_lesion_count < 0) throw DataError("demographics: negative lesion count");
    if (a_years_stroke_to_scan < 0 || g_education_years < 0 || h_age_at_stroke < 0 || i_years_since_stroke < 0)
        throw DataError("demographics: negative year field");
}

std::vector<double> Demographics::full() const {
    return {a_years_stroke_to_scan,
            static_cast<double>(b_vision_affected),
            static_cast<double>(c_hearing_affected),
            static_cast<double>(d_gender),
            static_cast<double>(e_lesion_count),
            static_cast<double>(f_lesion_side_left),
            static_cast<double>(f_lesion_side_right),
            g_education_years,
            h_age_at_stroke,
            i_years_since_stroke,
            static_cast<double>(j_handedness)};
}

std::vector<double> Demographics::baseline() const {
    return {a_years_stroke_to_scan, static_cast<double>(d_gender), h_age_at_stroke, static_cast<double>(j_handedness)};
}

std::string tag_name(FeatureSet set) {
    switch (set) {
    case FeatureSet::Baseline: return "baseline";
    case FeatureSet::Img: return "img";
    case FeatureSet::Demo: return "demo";
    case FeatureSet::DemoLesion: return "demo+lesion";
    case FeatureSet::DemoLesionImg: return "demo+lesion+img";
    case FeatureSet::DemoImg: return "demo+img";
    }
    return "unknown";
}

FeatureSet parse_feature_set(const std::string& tag) {
    for (auto set : {FeatureSet::Baseline, FeatureSet::Img, FeatureSet::Demo, FeatureSet::DemoLesion,
                     FeatureSet::DemoLesionImg, FeatureSet::DemoImg})
        if (tag_name(set) == tag) return set;
    throw UsageError(fmt::format("unknown feature set '{}'", tag));
}

std::vector<double> assemble_features(const FeatureBundle& bundle) {
    if (!bundle.image_features && !bundle.demographics && !bundle.lesion_features)
        throw DataError("feature bundle is empty");
    if (bundle.baseline_only && !bundle.demographics) throw DataError("baseline bundle requires demographics");
    std::vector<double> out;
    if (bundle.image_features) out.insert(out.end(), bundle.image_features->begin(), bundle.image_features->end());
    if (bundle.demographics) {
        bundle.demographics->validate();
        const auto d = bundle.baseline_only ? bundle.demographics->baseline() : bundle.demographics->full();
        out.insert(out.end(), d.begin(), d.end());
    }
    if (bundle.lesion_features) out.insert(out.end(), bundle.lesion_features->begin(), bundle.lesion_features->end());
    return out;
}

FeatureBundle make_bundle(const SubjectRecord& record, FeatureSet set, std::span<const double> image_features) {
    const bool wants_image = set == FeatureSet::Img || set == FeatureSet::DemoImg || set == FeatureSet::DemoLesionImg;
    const bool wants_demo = set != FeatureSet::Img;
    const bool wants_lesion = set == FeatureSet::DemoLesion || set == FeatureSet::DemoLesionImg;

    FeatureBundle b;
    if (wants_image) {
        if (image_features.empty())
            throw DataError(fmt::format("subject '{}': feature set {} needs image features", record.subject_id, tag_name(set)));
        b.image_features.emplace(image_features.begin(), image_features.end());
    }
    if (wants_demo) {
        if (!record.demographics)
            throw DataError(fmt::format("subject '{}': feature set {} needs demographics", record.subject_id, tag_name(set)));
        b.demographics = record.demographics;
        b.baseline_only = set == FeatureSet::Baseline;
    }
    if (wants_lesion) {
        if (record.lesion_features.empty())
            throw DataError(fmt::format("subject '{}': feature set {} needs lesion features", record.subject_id, tag_name(set)));
        b.lesion_features = record.lesion_features;
    }
    return b;
}

std::vector<SubjectRecord> read_subject_table(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    const int id_col = table.column("subject_id");
    const int score_col = table.column("score");
    if (id_col < 0 || score_col < 0)
        throw DataError(fmt::format("{}: subject table needs subject_id and score columns", path.string()));

    std::array<int, Demographics::kFullWidth> demo_cols{};
    std::size_t present = 0;
    for (std::size_t i = 0; i < demo_cols.size(); ++i) {
        demo_cols[i] = table.column(kDemographicColumns[i]);
        if (demo_cols[i] >= 0) ++present;
    }
    if (present != 0 && present != demo_cols.size())
        throw DataError(fmt::format("{}: demographic columns must be all present or all absent", path.string()));

    std::vector<int> lesion_cols;
    for (std::size_t k = 0;; ++k) {
        const int c = table.column(fmt::format("lesion_{}", k));
        if (c < 0) break;
        lesion_cols.push_back(c);
    }

    std::vector<SubjectRecord> records;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto ctx = fmt::format("{}:{}", path.string(), r + 2);
        SubjectRecord rec;
        rec.subject_id = row[static_cast<std::size_t>(id_col)];
        rec.score = csv::to_double(row[static_cast<std::size_t>(score_col)], ctx + " score");
        if (present) {
            std::array<double, Demographics::kFullWidth> v{};
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] = csv::to_double(row[static_cast<std::size_t>(demo_cols[i])], ctx + " " + kDemographicColumns[i]);
            Demographics d;
            d.a_years_stroke_to_scan = v[0];
            d.b_vision_affected = to_flag(v[1], ctx);
            d.c_hearing_affected = to_flag(v[2], ctx);
            d.d_gender = to_flag(v[3], ctx);
            d.e_lesion_count = static_cast<int>(v[4]);
            d.f_lesion_side_left = to_flag(v[5], ctx);
            d.f_lesion_side_right = to_flag(v[6], ctx);
            d.g_education_years = v[7];
            d.h_age_at_stroke = v[8];
            d.i_years_since_stroke = v[9];
            d.j_handedness = to_flag(v[10], ctx);
            d.validate();
            rec.demographics = d;
        }
        for (std::size_t k = 0; k < lesion_cols.size(); ++k)
            rec.lesion_features.push_back(
                csv::to_double(row[static_cast<std::size_t>(lesion_cols[k])], fmt::format("{} lesion_{}", ctx, k)));
        records.push_back(std::move(rec));
    }
    return records;
}

void write_subject_table(std::span<const SubjectRecord> records, const std::filesystem::path& path) {
    csv::Table t;
    t.header = {"subject_id", "score"};
    const bool with_demo = !records.empty() && records.front().demographics.has_value();
    const std::size_t lesion_width = records.empty() ? 0 : records.front().lesion_features.size();
    if (with_demo) t.header.insert(t.header.end(), kDemographicColumns.begin(), kDemographicColumns.end());
    for (std::size_t k = 0; k < lesion_width; ++k) t.header.push_back(fmt::format("lesion_{}", k));

    for (const auto& rec : records) {
        if (rec.demographics.has_value() != with_demo || rec.lesion_features.size() != lesion_width)
            throw DataError("subject table rows must share the same columns");
        std::vector<std::string> row{rec.subject_id, csv::format_double(rec.score)};
        if (with_demo)
            for (double v : rec.demographics->full()) row.push_back(csv::format_double(v));
        for (double v : rec.lesion_features) row.push_back(csv::format_double(v));
        t.rows.push_back(std::move(row));
    }
    csv::write(t, path);
}

Standardizer Standardizer::fit(const Matrix& rows) {
    if (rows.size() < 2) throw DataError("standardize needs at least 2 rows");
    const auto width = rows.front().size();
    Standardizer s;
    s.means.assign(width, 0.0);
    s.stds.assign(width, 0.0);
    const auto n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        if (r.size() != width) throw DataError("standardize: ragged feature matrix");
        for (std::size_t j = 0; j < width; ++j) s.means[j] += r[j];
    }
    for (auto& m : s.means) m /= n;
    for (const auto& r : rows)
        for (std::size_t j = 0; j < width; ++j) s.stds[j] += (r[j] - s.means[j]) * (r[j] - s.means[j]);
    for (auto& sd : s.stds) {
        sd = std::sqrt(sd / n);
        if (!(sd > 0.0)) sd = 1.0;
    }
    return s;
}

std::vector<double> Standardizer::transform(std::span<const double> row) const {
    if (row.size() != means.size())
        throw DataError(fmt::format("feature width {} does not match the fitted width {}", row.size(), means.size()));
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - means[j]) / stds[j];
    return out;
}

Matrix Standardizer::transform(const Matrix& rows) const {
    Matrix out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(transform(r));
    return out;
}

double TrainedRegressor::predict(std::span<const double> features) const {
    const auto x = input_scaler.transform(features);
    const double z = network.infer(nn::Tensor({x.size()}, x)).data[0];
    return target_mean + target_std * z;
}

std::vector<double> TrainedRegressor::predict(const Matrix& rows) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(predict(r));
    return out;
}

TrainedRegressor train_regressor(const Matrix& features, std::span<const double> scores, const RegressorConfig& cfg) {
    if (features.size() < 10) throw DataError(fmt::format("regressor needs at least 10 rows, got {}", features.size()));
    if (features.size() != scores.size()) throw DataError("feature rows and scores differ in length");
    if (cfg.hidden_units < 1) throw UsageError("hidden_units must be >= 1");
    if (cfg.batch_size < 1) throw UsageError("batch_size must be >= 1");

    TrainedRegressor model;
    model.config = cfg;
    model.input_scaler = Standardizer::fit(features);
    const auto width = features.front().size();

    model.target_mean = mean_of(scores);
    double var = 0.0;
    for (double y : scores) var += (y - model.target_mean) * (y - model.target_mean);
    model.target_std = std::sqrt(var / static_cast<double>(scores.size()));
    if (!(model.target_std > 0.0)) model.target_std = 1.0;

    model.network = nn::Network({width}, {nn::Dense{width, cfg.hidden_units}, nn::Relu{}, nn::Dense{cfg.hidden_units, 1}});
    model.network.initialize(cfg.seed);

    std::vector<nn::Tensor> inputs;
    std::vector<double> targets;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto x = model.input_scaler.transform(features[i]);
        inputs.emplace_back(nn::Shape{width}, x);
        targets.push_back((scores[i] - model.target_mean) / model.target_std);
    }

    auto& net = model.network;
    auto adam = nn::AdamState::for_params(net.parameters(), cfg.optimizer);
    std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<nn::Tensor> acc;
            for (std::size_t b = start; b < stop; ++b) {
                const auto fwd = net.forward(inputs[order[b]]);
                const auto loss = nn::mse(fwd.output, nn::Tensor({1}, {targets[order[b]]}));
                if (!std::isfinite(loss.loss)) throw NumericError(fmt::format("non-finite regressor loss in epoch {}", epoch));
                auto g = net.backward(fwd.cache, loss.grad);
                if (acc.empty()) {
                    acc = std::move(g.params);
                } else {
                    for (std::size_t p = 0; p < acc.size(); ++p)
                        for (std::size_t j = 0; j < acc[p].size(); ++j) acc[p].data[j] += g.params[p].data[j];
                }
            }
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (auto& g : acc)
                for (auto& v : g.data) v *= scale;
            nn::adam_step(net.parameters(), acc, adam);
        }
    }
    return model;
}

double r_squared(std::span<const double> y_true, std::span<const double> y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() < 2)
        throw DataError("r_squared needs two equal-length samples of at least 2 values");
    const double m = mean_of(y_true);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
        ss_tot += (y_true[i] - m) * (y_true[i] - m);
    }
    if (!(ss_tot > 0.0)) throw NumericError("r_squared undefined: y_true has zero variance");
    return 1.0 - ss_res / ss_tot;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DataError("pearson_r needs two equal-length samples of at least 2 values");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericError("pearson_r undefined: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<EvalReport> evaluate_feature_sets(std::span<const SubjectRecord> records, const Matrix& image_features,
                                              std::span<const FeatureSet> sets, std::span<const std::size_t> train_idx,
                                              std::span<const std::size_t> test_idx, const RegressorConfig& cfg) {
    std::vector<EvalReport> reports;
    for (auto set : sets) {
        auto rows_for = [&](std::span<const std::size_t> idx, Matrix& x, std::vector<double>& y) {
            for (auto i : idx) {
                const auto img = image_features.empty() ? std::span<const double>{} : std::span<const double>(image_features.at(i));
                x.push_back(assemble_features(make_bundle(records[i], set, img)));
                y.push_back(records[i].score);
            }
        };
        Matrix x_train, x_test;
        std::vector<double> y_train, y_test;
        rows_for(train_idx, x_train, y_train);
        rows_for(test_idx, x_test, y_test);

        const auto model = train_regressor(x_train, y_train, cfg);
        const auto pred = model.predict(x_test);
        EvalReport rep;
        rep.feature_set = tag_name(set);
        rep.r_squared = r_squared(y_test, pred);
        // a constant predictor has no defined correlation; report it as uncorrelated
        try {
            rep.pearson_r = pearson_r(pred, y_test);
        } catch (const NumericError&) {
            rep.pearson_r = 0.0;
        }
        rep.n = y_test.size();
        rep.seed = cfg.seed;
        reports.push_back(rep);
    }
    return reports;
}

void write_eval_reports(std::span<const EvalReport> reports, const std::filesystem::path& path) {
    csv::Table t;
    t.header = {"feature_set", "r_squared", "pearson_r", "n", "seed"};
    for (const auto& r : reports)
        t.rows.push_back({r.feature_set, csv::format_double(r.r_squared), csv::format_double(r.pearson_r),
                          std::to_string(r.n), std::to_string(r.seed)});
    csv::write(t, path);
}

} // namespace stitchnet
