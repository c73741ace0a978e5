#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvqa/training.hpp"

namespace fvqa::cli {

/// Resolved pipeline configuration: defaults, overlaid by the --config JSON
/// file, overlaid by explicit flags. Every command copies its resolved
/// config into the output directory.
struct ExperimentConfig {
    std::filesystem::path annotations;
    std::filesystem::path image_dir;
    std::filesystem::path out_dir = "runs/default";

    double split_fraction = 290.0 / 1448.0; // test image fraction
    std::uint64_t split_seed = 42;

    std::string text_encoder = "roberta-large";
    std::string image_encoder = "resnet50";

    std::string fusion_method = "mul";
    int common_dim = 512;
    std::array<int, 2> hidden_dims{512, 256};
    std::uint64_t model_seed = 0;

    TrainConfig train;

    void merge_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    std::filesystem::path default_split_path() const;
    std::filesystem::path features_dir(const std::string& encoder_name) const;
    std::filesystem::path checkpoints_dir() const { return out_dir / "checkpoints"; }
    std::filesystem::path reports_dir() const { return out_dir / "reports"; }
};

/// "resnet50"/"convnext" CLI shorthands -> provider encoder names.
std::string backbone_encoder_name(const std::string& backbone);

/// "(model)-(method)" shorthand, e.g. ("convnext", "mul") -> "CNX-mul".
std::string model_tag(const std::string& backbone, const std::string& method);

/// Entry point behind the fvqa binary; also callable in-process from tests.
/// args excludes the program name.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

} // namespace fvqa::cli
