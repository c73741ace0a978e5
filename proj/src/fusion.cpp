#include "fvqa/fusion.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fvqa/common.hpp"

namespace fvqa {

namespace {

constexpr char kMagic[8] = {'F', 'V', 'Q', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json config_to_json(const FusionConfig& config) {
    return {
        {"method", std::string(to_string(config.method))},
        {"image_dim", config.image_dim},
        {"text_dim", config.text_dim},
        {"common_dim", config.common_dim},
        {"hidden_dims", {config.hidden_dims[0], config.hidden_dims[1]}},
        {"num_classes", config.num_classes},
        {"seed", config.seed},
    };
}

FusionConfig config_from_json(const nlohmann::json& j) {
    FusionConfig config;
    config.method = fusion_method_from_string(j.at("method").get<std::string>());
    config.image_dim = j.at("image_dim").get<int>();
    config.text_dim = j.at("text_dim").get<int>();
    config.common_dim = j.at("common_dim").get<int>();
    config.hidden_dims = {j.at("hidden_dims").at(0).get<int>(),
                          j.at("hidden_dims").at(1).get<int>()};
    config.num_classes = j.at("num_classes").get<int>();
    config.seed = j.at("seed").get<std::uint64_t>();
    return config;
}

} // namespace

std::string_view to_string(FusionMethod method) {
    switch (method) {
    case FusionMethod::Concat: return "cat";
    case FusionMethod::Add: return "add";
    case FusionMethod::Mul: return "mul";
    }
    return "?";
}

FusionMethod fusion_method_from_string(std::string_view name) {
    if (name == "cat" || name == "concat") return FusionMethod::Concat;
    if (name == "add") return FusionMethod::Add;
    if (name == "mul") return FusionMethod::Mul;
    throw std::invalid_argument("unknown fusion method '" + std::string(name) +
                                "' (expected cat, add or mul)");
}

void save_checkpoint(const std::filesystem::path& path, const FusionModel& model,
                     const std::string& model_tag) {
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["model_tag"] = model_tag;
    header["config"] = config_to_json(model.config());

    std::string payload;
    auto entries = nlohmann::json::array();
    for_each_param(model.params(), model.config().method,
                   [&](const char* name, const auto& array) {
                       entries.push_back({{"name", name},
                                          {"rows", array.rows()},
                                          {"cols", array.cols()},
                                          {"offset", payload.size()}});
                       for (Eigen::Index r = 0; r < array.rows(); ++r) {
                           for (Eigen::Index c = 0; c < array.cols(); ++c) {
                               const float v = array(r, c);
                               payload.append(reinterpret_cast<const char*>(&v), sizeof(float));
                           }
                       }
                   });
    header["params"] = std::move(entries);

    const std::string header_text = header.dump();
    std::string blob;
    blob.reserve(sizeof(kMagic) + 12 + header_text.size() + payload.size());
    blob.append(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    blob.append(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_text.size();
    blob.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    blob.append(header_text);
    blob.append(payload);
    write_file_atomic(path, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string blob = read_text_file(path);
    const std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (blob.size() < prefix || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw LoadError("not a fusion checkpoint: " + path.string());
    }
    std::uint32_t version = 0;
    std::memcpy(&version, blob.data() + sizeof(kMagic), sizeof(version));
    if (version != kCheckpointVersion) {
        throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        path.string());
    }
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, blob.data() + sizeof(kMagic) + sizeof(version), sizeof(header_len));
    if (blob.size() < prefix + header_len) {
        throw LoadError("truncated checkpoint header: " + path.string());
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(blob.substr(prefix, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }

    Checkpoint ckpt{FusionModel(config_from_json(header.at("config"))),
                    header.at("model_tag").get<std::string>()};

    const char* payload = blob.data() + prefix + header_len;
    const std::size_t payload_size = blob.size() - prefix - header_len;

    std::size_t entry_index = 0;
    const auto& entries = header.at("params");
    for_each_param(ckpt.model.params(), ckpt.model.config().method,
                   [&](const char* name, auto& array) {
                       if (entry_index >= entries.size()) {
                           throw LoadError("checkpoint " + path.string() +
                                           " is missing parameter '" + name + "'");
                       }
                       const auto& entry = entries.at(entry_index++);
                       if (entry.at("name").get<std::string>() != name ||
                           entry.at("rows").get<Eigen::Index>() != array.rows() ||
                           entry.at("cols").get<Eigen::Index>() != array.cols()) {
                           throw LoadError("checkpoint " + path.string() + ": parameter '" +
                                           name + "' does not match the model config shape");
                       }
                       std::size_t offset = entry.at("offset").get<std::size_t>();
                       const std::size_t bytes = static_cast<std::size_t>(array.size()) *
                                                 sizeof(float);
                       if (offset + bytes > payload_size) {
                           throw LoadError("checkpoint " + path.string() +
                                           ": payload is truncated at parameter '" + name + "'");
                       }
                       for (Eigen::Index r = 0; r < array.rows(); ++r) {
                           for (Eigen::Index c = 0; c < array.cols(); ++c) {
                               float v = 0;
                               std::memcpy(&v, payload + offset, sizeof(float));
                               offset += sizeof(float);
                               array(r, c) = v;
                           }
                       }
                   });
    if (entry_index != entries.size()) {
        throw LoadError("checkpoint " + path.string() + " carries unexpected extra parameters");
    }
    return ckpt;
}

} // namespace fvqa
