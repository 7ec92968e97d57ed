// stitchnet: command-line driver for the mosaic CNN pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "stitchnet/errors.hpp"
#include "stitchnet/pipeline.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<std::string> cls;
    std::optional<std::string> out;
    std::optional<std::string> data;
};

stitchnet::PipelineConfig resolve(const Overrides& o) {
    auto kv = o.config.empty() ? stitchnet::KeyValueConfig{} : stitchnet::KeyValueConfig::load(o.config);
    if (o.out) kv.set("paths.out_dir", *o.out);
    if (o.data) kv.set("paths.data_dir", *o.data);
    if (o.threshold) kv.set("classifier.threshold", fmt::format("{}", *o.threshold));
    if (o.cls) kv.set("analysis.class", *o.cls);
    if (o.seed) kv.set("classifier.seed", std::to_string(*o.seed));
    return stitchnet::PipelineConfig::from(kv);
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "pipeline config file (key = value text)");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--data", o.data, "cohort directory");
    cmd->add_option("--threshold", o.threshold, "score threshold for the class label");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stitchnet - stitched-mosaic CNN pipeline for outcome prediction"};
    app.require_subcommand(1);
    Overrides o;
    std::string volume_path;

    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom cohort");
    synth->add_option("--config", o.config, "pipeline config file");
    synth->add_option("--n", o.n, "number of subjects");
    synth->add_option("--seed", o.seed, "generator seed");
    synth->add_option("--out", o.out, "cohort output directory");

    auto* stitch = app.add_subcommand("stitch", "export every cohort scan as a stitched PGM mosaic");
    add_common(stitch, o);
    auto* train = app.add_subcommand("train-classifier", "cross-validate and train the mosaic classifier");
    add_common(train, o);
    train->add_option("--seed", o.seed, "classifier seed");
    auto* extract = app.add_subcommand("extract-features", "write the 64-d image representation per subject");
    add_common(extract, o);
    auto* evaluate = app.add_subcommand("evaluate", "train regressors per feature set and report R2 / Pearson r");
    add_common(evaluate, o);
    auto* saliency = app.add_subcommand("saliency", "class-average saliency maps and 3D projections");
    add_common(saliency, o);
    saliency->add_option("--class", o.cls, "which class to average")->check(CLI::IsMember({"below", "above"}));
    auto* analyze = app.add_subcommand("analyze", "PCA projection and distance correlation report");
    add_common(analyze, o);
    auto* summary = app.add_subcommand("model-summary", "print the classifier layer table and parameter count");
    add_common(summary, o);
    auto* predict = app.add_subcommand("predict", "classify a single volume");
    add_common(predict, o);
    predict->add_option("volume", volume_path, "raw-grid or NIfTI volume")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) {
            auto kv = o.config.empty() ? stitchnet::KeyValueConfig{} : stitchnet::KeyValueConfig::load(o.config);
            const auto cfg = stitchnet::PipelineConfig::from(kv);
            const auto n = o.n.value_or(cfg.synth_n);
            const auto seed = o.seed.value_or(cfg.synth_seed);
            const auto dir = o.out ? std::filesystem::path(*o.out) : cfg.data_dir;
            stitchnet::cmd_synth(n, seed, dir);
            std::cout << fmt::format("wrote {} subjects to {}\n", n, dir.string());
        } else if (stitch->parsed()) {
            std::cout << fmt::format("wrote {} mosaics\n", stitchnet::cmd_stitch(resolve(o)));
        } else if (train->parsed()) {
            const auto s = stitchnet::cmd_train_classifier(resolve(o));
            std::cout << fmt::format("mean CV accuracy {:.4f}, held-out accuracy {:.4f}, {} parameters\n",
                                     s.cv.mean_accuracy, s.test_accuracy, s.param_count);
        } else if (extract->parsed()) {
            std::cout << fmt::format("extracted features for {} subjects\n", stitchnet::cmd_extract_features(resolve(o)).size());
        } else if (evaluate->parsed()) {
            std::cout << "feature_set,r_squared,pearson_r,n,seed\n";
            for (const auto& r : stitchnet::cmd_evaluate(resolve(o)))
                std::cout << fmt::format("{},{},{},{},{}\n", r.feature_set, r.r_squared, r.pearson_r, r.n, r.seed);
        } else if (saliency->parsed()) {
            const auto s = stitchnet::cmd_saliency(resolve(o));
            std::cout << fmt::format("averaged {} subjects", s.subjects);
            if (s.lesion_ratio) std::cout << fmt::format(", lesion attribution ratio {:.3f}", *s.lesion_ratio);
            std::cout << "\n";
        } else if (analyze->parsed()) {
            const auto s = stitchnet::cmd_analyze(resolve(o));
            std::cout << fmt::format("dcor(features, tissue) {:.4f}\ndcor(features, noise) {:.4f}\n"
                                     "pca threshold accuracy {:.4f}\n",
                                     s.dcor_tissue, s.dcor_noise, s.pca_threshold_accuracy);
        } else if (summary->parsed()) {
            std::cout << stitchnet::cmd_model_summary(resolve(o));
        } else if (predict->parsed()) {
            const auto cfg = resolve(o);
            const auto p = stitchnet::cmd_predict(cfg, volume_path);
            std::cout << fmt::format("probability {:.6f} logit {:.6f} class {}\n", p.probability, p.logit,
                                     p.logit >= 0 ? "above" : "below");
        }
    } catch (const stitchnet::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const stitchnet::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const stitchnet::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
