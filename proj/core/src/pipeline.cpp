#include "stitchnet/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "stitchnet/csv.hpp"
#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

std::vector<FeatureSet> parse_feature_sets(const std::string& text) {
    std::vector<FeatureSet> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
        if (!item.empty()) out.push_back(parse_feature_set(item));
    }
    if (out.empty()) throw UsageError("regressor.feature_sets is empty");
    return out;
}

void ensure_dir(const std::filesystem::path& dir) { std::filesystem::create_directories(dir); }

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

Split make_split(const PipelineConfig& cfg, std::span<const int> labels) {
    auto [train, test] = stratified_split(labels, cfg.test_count, cfg.split_seed);
    return {std::move(train), std::move(test)};
}

void write_split(const PreparedCohort& cohort, const Split& split, const std::filesystem::path& path) {
    std::vector<std::string> role(cohort.records.size(), "train");
    for (auto i : split.test) role[i] = "test";
    csv::Table t;
    t.header = {"subject_id", "split", "label"};
    for (std::size_t i = 0; i < cohort.records.size(); ++i)
        t.rows.push_back({cohort.records[i].subject_id, role[i], std::to_string(cohort.labels[i])});
    csv::write(t, path);
}

Split read_split(const PreparedCohort& cohort, const std::filesystem::path& path) {
    const auto t = csv::read(path);
    const int id_col = t.column("subject_id");
    const int split_col = t.column("split");
    if (id_col < 0 || split_col < 0) throw DataError(fmt::format("{}: malformed split file", path.string()));
    std::map<std::string, std::string> role;
    for (const auto& row : t.rows) role[row[static_cast<std::size_t>(id_col)]] = row[static_cast<std::size_t>(split_col)];
    Split s;
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
        const auto it = role.find(cohort.records[i].subject_id);
        if (it == role.end())
            throw DataError(fmt::format("{}: subject '{}' missing from split", path.string(), cohort.records[i].subject_id));
        (it->second == "test" ? s.test : s.train).push_back(i);
    }
    return s;
}

TrainedClassifier require_checkpoint(const PipelineConfig& cfg) {
    const auto path = output_files(cfg.out_dir).checkpoint;
    if (!std::filesystem::exists(path))
        throw DataError(fmt::format("missing checkpoint '{}'; run train-classifier first", path.string()));
    return load_checkpoint(path);
}

Matrix features_of(const TrainedClassifier& model, const PreparedCohort& cohort) {
    Matrix out;
    out.reserve(cohort.inputs.size());
    for (const auto& x : cohort.inputs) out.push_back(extract_features(model, x));
    return out;
}

std::string class_name(int which) { return which == 0 ? "below" : "above"; }

} // namespace

LogLevel log_level_from_env() {
    const char* env = std::getenv("STITCHNET_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return LogLevel::Error;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

void log(LogLevel level, const std::string& message) {
    static const LogLevel threshold = log_level_from_env();
    if (level > threshold) return;
    static const char* names[] = {"error", "info", "debug"};
    std::cerr << fmt::format("[stitchnet {}] {}\n", names[static_cast<int>(level)], message);
}

PipelineConfig PipelineConfig::from(const KeyValueConfig& kv) {
    PipelineConfig cfg;
    cfg.data_dir = kv.get_string("paths.data_dir", cfg.data_dir.string());
    cfg.out_dir = kv.get_string("paths.out_dir", cfg.out_dir.string());

    cfg.synth_n = kv.get_uint("synth.n", cfg.synth_n);
    cfg.synth_seed = kv.get_uint("synth.seed", cfg.synth_seed);

    auto& c = cfg.classifier;
    c.input_size = kv.get_uint("classifier.input_size", c.input_size);
    c.threshold = kv.get_double("classifier.threshold", c.threshold);
    c.epochs = kv.get_uint("classifier.epochs", c.epochs);
    c.batch_size = kv.get_uint("classifier.batch_size", c.batch_size);
    c.seed = kv.get_uint("classifier.seed", c.seed);
    c.optimizer.lr = kv.get_double("classifier.lr", c.optimizer.lr);
    c.optimizer.beta1 = kv.get_double("classifier.beta1", c.optimizer.beta1);
    c.optimizer.beta2 = kv.get_double("classifier.beta2", c.optimizer.beta2);
    c.optimizer.epsilon = kv.get_double("classifier.epsilon", c.optimizer.epsilon);
    cfg.folds = kv.get_uint("classifier.folds", cfg.folds);
    cfg.test_count = kv.get_uint("classifier.test_count", cfg.test_count);
    cfg.split_seed = kv.get_uint("classifier.split_seed", cfg.split_seed);

    auto& r = cfg.regressor;
    r.hidden_units = kv.get_uint("regressor.hidden_units", r.hidden_units);
    r.epochs = kv.get_uint("regressor.epochs", r.epochs);
    r.batch_size = kv.get_uint("regressor.batch_size", r.batch_size);
    r.seed = kv.get_uint("regressor.seed", r.seed);
    r.optimizer.lr = kv.get_double("regressor.lr", r.optimizer.lr);
    if (const auto sets = kv.find("regressor.feature_sets")) cfg.feature_sets = parse_feature_sets(*sets);

    const auto cls = kv.get_string("analysis.class", "below");
    if (cls != "below" && cls != "above") throw UsageError(fmt::format("analysis.class must be below or above, got '{}'", cls));
    cfg.saliency_class = cls == "below" ? 0 : 1;
    const auto projection = kv.get_string("analysis.projection", "max");
    if (projection != "max" && projection != "mean")
        throw UsageError(fmt::format("analysis.projection must be max or mean, got '{}'", projection));
    cfg.projection = projection == "max" ? ProjectionMode::Max : ProjectionMode::Mean;
    cfg.noise_seed = kv.get_uint("analysis.noise_seed", cfg.noise_seed);
    return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) { return from(KeyValueConfig::load(path)); }

nn::Tensor prepare_input(const Volume& v, const IntensityRange& range, std::size_t input_size) {
    Volume scaled = v;
    normalize_intensities(scaled, range);
    return to_input(resize_bilinear(stitch(scaled), input_size, input_size));
}

PreparedCohort prepare_cohort(const PipelineConfig& cfg, std::optional<IntensityRange> range) {
    const auto files = cohort_files(cfg.data_dir);
    if (!std::filesystem::exists(files.subject_table))
        throw DataError(fmt::format("cohort not found: '{}' is missing", files.subject_table.string()));

    PreparedCohort cohort;
    cohort.records = read_subject_table(files.subject_table);
    if (cohort.records.size() < 2) throw DataError("cohort needs at least 2 subjects");

    auto volume_path = [&](const SubjectRecord& r) {
        const auto raw = files.volume_dir / (r.subject_id + ".rawgrid");
        return std::filesystem::exists(raw) ? raw : files.volume_dir / (r.subject_id + ".nii");
    };

    // pass 1: alignment and intensity range; volumes are reloaded in pass 2 to bound memory
    IntensityRange observed{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    std::optional<Volume> first;
    std::vector<std::string> misaligned;
    for (const auto& rec : cohort.records) {
        auto v = load_volume(volume_path(rec));
        v.subject_id = rec.subject_id;
        if (!first) {
            first = Volume(v.dims, v.spacing, v.subject_id);
        } else if (v.dims != first->dims || v.spacing != first->spacing) {
            misaligned.push_back(rec.subject_id);
        }
        const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
        observed.min = std::min(observed.min, *lo);
        observed.max = std::max(observed.max, *hi);
    }
    if (!misaligned.empty())
        throw DataError(fmt::format("cohort alignment error: {} disagree with '{}'", fmt::join(misaligned, ", "),
                                    first->subject_id));

    cohort.dims = first->dims;
    cohort.spacing = first->spacing;
    cohort.layout = MosaicLayout::for_dims(cohort.dims);
    cohort.range = range.value_or(observed);
    for (const auto& rec : cohort.records) {
        cohort.inputs.push_back(prepare_input(load_volume(volume_path(rec)), cohort.range, cfg.classifier.input_size));
        cohort.labels.push_back(label_from_score(rec.score, cfg.classifier.threshold));
    }
    log(LogLevel::Debug, fmt::format("prepared {} subjects, dims {}x{}x{}, range [{}, {}]", cohort.records.size(),
                                     cohort.dims.nx, cohort.dims.ny, cohort.dims.nz, cohort.range.min, cohort.range.max));
    return cohort;
}

std::filesystem::path OutputFiles::saliency_prefix(int which_class) const {
    return checkpoint.parent_path() / fmt::format("saliency_{}", class_name(which_class));
}

OutputFiles output_files(const std::filesystem::path& out_dir) {
    return {out_dir / "classifier.snet", out_dir / "cv_report.csv", out_dir / "split.csv",
            out_dir / "features.csv",    out_dir / "evaluation.csv", out_dir / "pca.csv",
            out_dir / "dcor.csv",        out_dir / "mosaics"};
}

CohortFiles cmd_synth(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir) {
    if (n < 2) throw UsageError("need >= 2 subjects");
    PhantomSpec spec;
    spec.seed = seed;
    log(LogLevel::Info, fmt::format("generating {} phantoms (seed {}) in {}", n, seed, out_dir.string()));
    return generate_cohort(spec, n, out_dir);
}

std::size_t cmd_stitch(const PipelineConfig& cfg) {
    const auto files = cohort_files(cfg.data_dir);
    const auto records = read_subject_table(files.subject_table);
    const auto out = output_files(cfg.out_dir).mosaics;
    ensure_dir(out);
    std::vector<Volume> volumes;
    for (const auto& rec : records) volumes.push_back(load_volume(files.volume_dir / (rec.subject_id + ".rawgrid")));
    validate_cohort(volumes);
    for (const auto& v : volumes) write_pgm(stitch(v).pixels, out / (v.subject_id + ".pgm"));
    return volumes.size();
}

TrainSummary cmd_train_classifier(const PipelineConfig& cfg) {
    const auto cohort = prepare_cohort(cfg);
    const auto split = make_split(cfg, cohort.labels);

    std::vector<Example> train_set, test_set;
    for (auto i : split.train) train_set.push_back({cohort.inputs[i], cohort.labels[i]});
    for (auto i : split.test) test_set.push_back({cohort.inputs[i], cohort.labels[i]});

    std::vector<std::string> groups;
    for (auto i : split.train) groups.push_back(cohort.records[i].subject_id);

    log(LogLevel::Info, fmt::format("{}-fold cross-validation on {} subjects", cfg.folds, train_set.size()));
    TrainSummary summary;
    summary.cv = cross_validate(train_set, cfg.classifier, cfg.folds, groups);
    for (std::size_t f = 0; f < summary.cv.fold_accuracy.size(); ++f)
        log(LogLevel::Debug, fmt::format("fold {} accuracy {}", f, summary.cv.fold_accuracy[f]));

    log(LogLevel::Info, "training final classifier");
    auto model = train(train_set, cfg.classifier);
    model.intensity_range = cohort.range;
    summary.test_accuracy = test_set.empty() ? 0.0 : accuracy(model, test_set);
    summary.param_count = model.param_count();

    const auto out = output_files(cfg.out_dir);
    ensure_dir(cfg.out_dir);
    save_checkpoint(model, out.checkpoint);
    write_split(cohort, split, out.split);

    csv::Table report;
    report.header = {"fold", "accuracy", "n"};
    for (std::size_t f = 0; f < summary.cv.fold_accuracy.size(); ++f)
        report.rows.push_back({std::to_string(f), csv::format_double(summary.cv.fold_accuracy[f]),
                               std::to_string(summary.cv.folds[f].size())});
    report.rows.push_back({"mean", csv::format_double(summary.cv.mean_accuracy), std::to_string(train_set.size())});
    report.rows.push_back({"test", csv::format_double(summary.test_accuracy), std::to_string(test_set.size())});
    csv::write(report, out.cv_report);
    log(LogLevel::Info, fmt::format("mean CV accuracy {:.4f}, held-out accuracy {:.4f}", summary.cv.mean_accuracy,
                                    summary.test_accuracy));
    return summary;
}

Matrix cmd_extract_features(const PipelineConfig& cfg) {
    const auto model = require_checkpoint(cfg);
    auto run_cfg = cfg;
    run_cfg.classifier.input_size = model.config.input_size;
    const auto cohort = prepare_cohort(run_cfg, model.intensity_range);
    const auto features = features_of(model, cohort);

    csv::Table t;
    t.header = {"subject_id"};
    for (std::size_t k = 0; k < kFeatureDim; ++k) t.header.push_back(fmt::format("f{}", k));
    for (std::size_t i = 0; i < features.size(); ++i) {
        std::vector<std::string> row{cohort.records[i].subject_id};
        for (double v : features[i]) row.push_back(csv::format_double(v));
        t.rows.push_back(std::move(row));
    }
    ensure_dir(cfg.out_dir);
    csv::write(t, output_files(cfg.out_dir).features);
    return features;
}

std::vector<EvalReport> cmd_evaluate(const PipelineConfig& cfg) {
    const auto model = require_checkpoint(cfg);
    auto run_cfg = cfg;
    run_cfg.classifier.input_size = model.config.input_size;
    run_cfg.classifier.threshold = model.config.threshold;
    const auto cohort = prepare_cohort(run_cfg, model.intensity_range);
    const auto out = output_files(cfg.out_dir);
    const auto split = std::filesystem::exists(out.split) ? read_split(cohort, out.split) : make_split(cfg, cohort.labels);
    const auto features = features_of(model, cohort);

    const auto reports = evaluate_feature_sets(cohort.records, features, cfg.feature_sets, split.train, split.test,
                                               cfg.regressor);
    for (const auto& r : reports)
        log(LogLevel::Info, fmt::format("{:<16} R2 {:.4f}  r {:.4f}", r.feature_set, r.r_squared, r.pearson_r));
    write_eval_reports(reports, out.evaluation);
    return reports;
}

double lesion_attribution_ratio(const SaliencyVolume& v, std::span<const std::vector<std::uint8_t>> lesion_masks,
                                std::span<const std::vector<std::uint8_t>> brain_masks) {
    if (lesion_masks.size() != brain_masks.size()) throw DataError("need one brain mask per lesion mask");
    // pooled over (subject, voxel) pairs
    double inside = 0.0, inside_n = 0.0, outside = 0.0, outside_n = 0.0;
    for (std::size_t s = 0; s < lesion_masks.size(); ++s) {
        const auto& lesion = lesion_masks[s];
        const auto& brain = brain_masks[s];
        if (lesion.size() != v.data.size() || brain.size() != v.data.size())
            throw DataError("mask does not match the saliency volume");
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            if (lesion[i]) {
                inside += v.data[i];
                inside_n += 1.0;
            } else if (brain[i]) {
                outside += v.data[i];
                outside_n += 1.0;
            }
        }
    }
    if (inside_n == 0.0 || outside_n == 0.0) throw DataError("lesion ratio needs lesion and non-lesion brain voxels");
    const double out_mean = outside / outside_n;
    return out_mean > 0.0 ? (inside / inside_n) / out_mean : std::numeric_limits<double>::infinity();
}

SaliencySummary cmd_saliency(const PipelineConfig& cfg) {
    const auto model = require_checkpoint(cfg);
    auto run_cfg = cfg;
    run_cfg.classifier.input_size = model.config.input_size;
    run_cfg.classifier.threshold = model.config.threshold;
    const auto cohort = prepare_cohort(run_cfg, model.intensity_range);

    const auto map = class_average_saliency(model, cohort.inputs, cohort.labels, cfg.saliency_class);
    const auto volume = restack_saliency(map, cohort.layout, cohort.dims);
    const auto views = project_views(volume, cfg.projection, true);

    const auto prefix = output_files(cfg.out_dir).saliency_prefix(cfg.saliency_class).string();
    ensure_dir(cfg.out_dir);
    write_pgm(upsample_to_mosaic(map.grid, cohort.layout).pixels, prefix + "_mosaic.pgm");
    write_pgm(views.axial, prefix + "_axial.pgm");
    write_pgm(views.sagittal, prefix + "_sagittal.pgm");
    write_pgm(views.coronal, prefix + "_coronal.pgm");

    SaliencySummary summary;
    summary.subjects = static_cast<std::size_t>(std::count(cohort.labels.begin(), cohort.labels.end(), cfg.saliency_class));

    // ground-truth masks are regenerated when the cohort came from the phantom generator
    if (const auto manifest = read_manifest(cfg.data_dir)) {
        std::vector<std::vector<std::uint8_t>> lesions, brains;
        for (std::size_t i = 0; i < manifest->second && i < cohort.records.size(); ++i) {
            if (cohort.labels[i] != cfg.saliency_class) continue;
            auto p = generate_phantom(manifest->first, i);
            if (p.volume.subject_id != cohort.records[i].subject_id) continue;
            if (p.truth.lesion_volume_fraction > 0) lesions.push_back(std::move(p.lesion_mask));
            brains.push_back(std::move(p.brain_mask));
        }
        if (!lesions.empty()) summary.lesion_ratio = lesion_attribution_ratio(volume, lesions, brains);
    }

    csv::Table t;
    t.header = {"class", "subjects", "lesion_ratio"};
    t.rows.push_back({class_name(cfg.saliency_class), std::to_string(summary.subjects),
                      summary.lesion_ratio ? csv::format_double(*summary.lesion_ratio) : "NA"});
    csv::write(t, prefix + "_report.csv");
    if (summary.lesion_ratio) log(LogLevel::Info, fmt::format("lesion attribution ratio {:.3f}", *summary.lesion_ratio));
    return summary;
}

double best_threshold_accuracy(const Matrix& projections, std::span<const int> labels) {
    if (projections.size() != labels.size() || projections.empty()) throw DataError("projection/label mismatch");
    const auto n = projections.size();
    double best = 0.0;
    for (std::size_t axis = 0; axis < projections.front().size(); ++axis) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return projections[a][axis] < projections[b][axis]; });
        // sweep the cut: first `cut` points predicted one class, the rest the other
        std::size_t ones_below = 0;
        const auto total_ones = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        for (std::size_t cut = 0; cut <= n; ++cut) {
            if (cut > 0) ones_below += labels[order[cut - 1]] == 1 ? 1 : 0;
            const auto zeros_below = cut - ones_below;
            const auto ones_above = total_ones - ones_below;
            const auto zeros_above = (n - cut) - ones_above;
            const auto correct = std::max(zeros_below + ones_above, ones_below + zeros_above);
            best = std::max(best, static_cast<double>(correct) / static_cast<double>(n));
        }
    }
    return best;
}

AnalyzeSummary cmd_analyze(const PipelineConfig& cfg) {
    const auto model = require_checkpoint(cfg);
    const auto files = cohort_files(cfg.data_dir);
    if (!std::filesystem::exists(files.ground_truth))
        throw DataError(fmt::format("ground truth '{}' not found", files.ground_truth.string()));
    const auto truths = read_ground_truth(files.ground_truth);

    auto run_cfg = cfg;
    run_cfg.classifier.input_size = model.config.input_size;
    run_cfg.classifier.threshold = model.config.threshold;
    const auto cohort = prepare_cohort(run_cfg, model.intensity_range);
    if (truths.size() != cohort.records.size()) throw DataError("ground truth and subject table differ in length");
    const auto features = features_of(model, cohort);

    const auto pca = pca_fit_project(features, 2);
    AnalyzeSummary summary;
    summary.pca_threshold_accuracy = best_threshold_accuracy(pca.projections, cohort.labels);

    PhantomSpec spec;
    if (const auto manifest = read_manifest(cfg.data_dir)) spec = manifest->first;
    Matrix tissue;
    for (const auto& rec : cohort.records)
        tissue.push_back(tissue_fractions(load_volume(files.volume_dir / (rec.subject_id + ".rawgrid")), spec));

    std::mt19937_64 rng(cfg.noise_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix noise(tissue.size(), std::vector<double>(tissue.front().size()));
    for (auto& row : noise)
        for (auto& v : row) v = gauss(rng);

    summary.dcor_tissue = distance_correlation(features, tissue);
    summary.dcor_noise = distance_correlation(features, noise);

    const auto out = output_files(cfg.out_dir);
    ensure_dir(cfg.out_dir);
    csv::Table p;
    p.header = {"subject_id", "label", "pc1", "pc2"};
    for (std::size_t i = 0; i < pca.projections.size(); ++i)
        p.rows.push_back({cohort.records[i].subject_id, std::to_string(cohort.labels[i]),
                          csv::format_double(pca.projections[i][0]), csv::format_double(pca.projections[i][1])});
    csv::write(p, out.pca);

    csv::Table d;
    d.header = {"comparison", "dcor", "n"};
    d.rows.push_back({"features_vs_tissue", csv::format_double(summary.dcor_tissue), std::to_string(features.size())});
    d.rows.push_back({"features_vs_noise", csv::format_double(summary.dcor_noise), std::to_string(features.size())});
    d.rows.push_back({"pca_threshold_accuracy", csv::format_double(summary.pca_threshold_accuracy),
                      std::to_string(features.size())});
    csv::write(d, out.dcor);
    log(LogLevel::Info, fmt::format("dCor tissue {:.4f}, noise {:.4f}; PCA threshold accuracy {:.3f}",
                                    summary.dcor_tissue, summary.dcor_noise, summary.pca_threshold_accuracy));
    return summary;
}

std::string cmd_model_summary(const PipelineConfig& cfg) {
    const auto path = output_files(cfg.out_dir).checkpoint;
    if (std::filesystem::exists(path)) return model_summary(load_checkpoint(path));
    return model_summary(cfg.classifier);
}

Prediction cmd_predict(const PipelineConfig& cfg, const std::filesystem::path& volume_path) {
    const auto model = require_checkpoint(cfg);
    return predict(model, prepare_input(load_volume(volume_path), model.intensity_range, model.config.input_size));
}

} // namespace stitchnet
