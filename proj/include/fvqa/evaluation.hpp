#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvqa/dataset.hpp"
#include "fvqa/feature_store.hpp"
#include "fvqa/fusion.hpp"

namespace fvqa {

struct EvalReport {
    std::string model_tag;
    double overall_accuracy = 0.0;                     // percent
    std::map<QuestionType, double> per_type_accuracy;  // percent
    std::map<QuestionType, std::int64_t> per_type_counts;
    double inference_seconds = 0.0;
    double train_seconds = -1.0; // < 0 when unknown (rendered as "-")
    std::string config_ref;
    std::string split_ref;

    std::int64_t total_count() const;
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

struct Misprediction {
    std::string question_id;
    std::string image_id;
    QuestionType question_type{};
    std::string truth;
    std::string predicted;
};

/// Scores every pair with predict(forward(...)). The wall clock covers only
/// the scoring pass (features are staged beforehand). Accuracies are
/// order-independent; an empty test set is an error.
EvalReport evaluate(const FusionModel& model, const std::vector<QAPair>& test_pairs,
                    const FeatureStore& image_store, const FeatureStore& text_store,
                    std::string model_tag,
                    std::vector<Misprediction>* mispredictions = nullptr);

/// Consistency audit: the count-weighted mean of the per-type accuracies
/// must reproduce the overall accuracy to within 1e-9.
bool decompose_check(const EvalReport& report);

void write_mispredictions_csv(const std::filesystem::path& path,
                              const std::vector<Misprediction>& mispredictions);

/// One previously reported result row, cell text kept verbatim as published.
struct ReferenceRow {
    std::string group;
    std::string method;
    std::string train_time;
    std::string infer_time;
    std::array<std::string, 6> accuracy; // overall, simple, complex, yes/no, image, road
};

std::vector<ReferenceRow> load_reference_rows(const std::filesystem::path& path);
std::filesystem::path default_reference_path();

/// Fixed-column text table: method, training/inference times, then the six
/// accuracy columns. Reference rows are marked "[ref]".
std::string render_table(const std::vector<EvalReport>& reports,
                         const std::vector<ReferenceRow>& reference = {});

/// Machine-readable companion of render_table.
nlohmann::json table_json(const std::vector<EvalReport>& reports,
                          const std::vector<ReferenceRow>& reference = {});

} // namespace fvqa
