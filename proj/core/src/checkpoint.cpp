#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "binary_io.hpp"
#include "stitchnet/classifier.hpp"
#include "stitchnet/errors.hpp"

namespace stitchnet {

namespace {

using json = nlohmann::json;

json layer_to_json(const nn::LayerSpec& layer) {
    json j;
    j["kind"] = nn::kind_name(layer);
    if (const auto* c = std::get_if<nn::Conv2d>(&layer)) {
        j["in_channels"] = c->in_channels;
        j["out_channels"] = c->out_channels;
        j["kernel"] = c->kernel;
        j["stride"] = c->stride;
        j["padding"] = c->padding;
    } else if (const auto* p = std::get_if<nn::MaxPool>(&layer)) {
        j["size"] = p->size;
        j["stride"] = p->stride;
    } else if (const auto* d = std::get_if<nn::Dense>(&layer)) {
        j["in_features"] = d->in_features;
        j["out_features"] = d->out_features;
    }
    return j;
}

nn::LayerSpec layer_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "conv2d")
        return nn::Conv2d{j.at("in_channels"), j.at("out_channels"), j.at("kernel"), j.at("stride"), j.at("padding")};
    if (kind == "maxpool") return nn::MaxPool{j.at("size"), j.at("stride")};
    if (kind == "relu") return nn::Relu{};
    if (kind == "sigmoid") return nn::Sigmoid{};
    if (kind == "flatten") return nn::Flatten{};
    if (kind == "dense") return nn::Dense{j.at("in_features"), j.at("out_features")};
    throw DataError(fmt::format("checkpoint: unknown layer kind '{}'", kind));
}

json metadata(const TrainedClassifier& model) {
    const auto& cfg = model.config;
    json arch = json::array();
    for (const auto& layer : model.network.layers()) arch.push_back(layer_to_json(layer));

    json losses = json::array();
    json accuracies = json::array();
    for (const auto& e : model.training_log) {
        losses.push_back(e.loss);
        accuracies.push_back(e.accuracy);
    }
    json meta;
    meta["format"] = "stitchnet-classifier";
    meta["architecture"] = arch;
    meta["input_shape"] = model.network.input_shape();
    meta["config"] = {
        {"input_size", cfg.input_size},
        {"threshold", cfg.threshold},
        {"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"lr", cfg.optimizer.lr},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"epsilon", cfg.optimizer.epsilon},
    };
    meta["seed"] = cfg.seed;
    meta["param_count"] = model.param_count();
    meta["intensity_range"] = {model.intensity_range.min, model.intensity_range.max};
    meta["training_log"] = {
        {"epochs", model.training_log.size()},
        {"loss", losses},
        {"accuracy", accuracies},
        {"final_loss", model.training_log.empty() ? 0.0 : model.training_log.back().loss},
        {"final_accuracy", model.training_log.empty() ? 0.0 : model.training_log.back().accuracy},
    };
    return meta;
}

} // namespace

std::vector<unsigned char> encode_checkpoint(const TrainedClassifier& model) {
    std::ostringstream out(std::ios::binary);
    out.write("SNET", 4);
    detail::write_le<std::uint32_t>(out, kCheckpointVersion);
    const auto text = metadata(model).dump();
    detail::write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : model.network.parameters()) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::write_le<std::uint64_t>(out, d);
        for (double v : t.data) detail::write_le<double>(out, v);
    }
    const auto s = out.str();
    return {s.begin(), s.end()};
}

TrainedClassifier decode_checkpoint(std::span<const unsigned char> bytes) {
    std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "SNET", 4) != 0) throw DataError("checkpoint: bad magic (want SNET)");
    const auto version = detail::read_le<std::uint32_t>(in, "checkpoint version");
    if (version != kCheckpointVersion)
        throw DataError(fmt::format("checkpoint: unsupported format version {}", version));
    const auto length = detail::read_le<std::uint64_t>(in, "metadata length");
    if (length > bytes.size()) throw DataError("checkpoint: metadata length exceeds file size");
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw DataError("checkpoint: truncated metadata");

    json meta;
    try {
        meta = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(fmt::format("checkpoint: metadata is not valid JSON: {}", e.what()));
    }

    TrainedClassifier model;
    try {
        auto& cfg = model.config;
        const auto& c = meta.at("config");
        cfg.input_size = c.at("input_size");
        cfg.threshold = c.at("threshold");
        cfg.epochs = c.at("epochs");
        cfg.batch_size = c.at("batch_size");
        cfg.optimizer = {c.at("lr"), c.at("beta1"), c.at("beta2"), c.at("epsilon")};
        cfg.seed = meta.at("seed");
        for (const auto& l : meta.at("architecture")) cfg.architecture.push_back(layer_from_json(l));
        const auto& range = meta.at("intensity_range");
        model.intensity_range = {range.at(0), range.at(1)};
        const auto& log = meta.at("training_log");
        for (std::size_t i = 0; i < log.at("loss").size(); ++i)
            model.training_log.push_back({log.at("loss").at(i), log.at("accuracy").at(i)});
    } catch (const json::exception& e) {
        throw DataError(fmt::format("checkpoint: malformed metadata: {}", e.what()));
    }

    model.network = make_classifier_network(model.config);
    for (auto& t : model.network.parameters()) {
        const auto rank = detail::read_le<std::uint32_t>(in, "tensor rank");
        nn::Shape shape(rank);
        for (auto& d : shape) d = detail::read_le<std::uint64_t>(in, "tensor dims");
        if (shape != t.shape)
            throw DataError(fmt::format("checkpoint: tensor shape {} does not match architecture {}", nn::to_string(shape),
                                        nn::to_string(t.shape)));
        for (auto& v : t.data) v = detail::read_le<double>(in, "tensor values");
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes after weights");
    if (meta.value("param_count", std::size_t{0}) != model.param_count())
        throw DataError("checkpoint: param_count disagrees with architecture");
    return model;
}

void save_checkpoint(const TrainedClassifier& model, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TrainedClassifier load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("missing checkpoint '{}'", path.string()));
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace stitchnet
