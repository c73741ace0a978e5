#include "fvqa/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fvqa/common.hpp"

namespace fvqa {

namespace {

#ifndef FVQA_DATA_DIR
#define FVQA_DATA_DIR "data"
#endif

std::string percent(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    return buf;
}

struct TableRow {
    std::string method, train_time, infer_time;
    std::array<std::string, 6> accuracy;
    bool reference = false;
};

std::vector<TableRow> collect_rows(const std::vector<EvalReport>& reports,
                                   const std::vector<ReferenceRow>& reference) {
    std::vector<TableRow> rows;
    for (const EvalReport& r : reports) {
        TableRow row;
        row.method = r.model_tag;
        row.train_time = r.train_seconds < 0 ? "-" : format_mmss(r.train_seconds);
        row.infer_time = format_mmss(r.inference_seconds);
        row.accuracy[0] = percent(r.overall_accuracy);
        int i = 1;
        for (QuestionType t : kQuestionTypes) {
            row.accuracy[static_cast<std::size_t>(i++)] = percent(r.per_type_accuracy.at(t));
        }
        rows.push_back(std::move(row));
    }
    for (const ReferenceRow& r : reference) {
        TableRow row;
        row.method = r.method + " [ref]";
        row.train_time = r.train_time;
        row.infer_time = r.infer_time;
        row.accuracy = r.accuracy;
        row.reference = true;
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::int64_t EvalReport::total_count() const {
    std::int64_t total = 0;
    for (const auto& [_, n] : per_type_counts) total += n;
    return total;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json accuracies{{"overall", overall_accuracy}};
    nlohmann::json counts{{"total", total_count()}};
    for (QuestionType t : kQuestionTypes) {
        const std::string key(question_type_json_key(t));
        accuracies[key] = per_type_accuracy.at(t);
        counts[key] = per_type_counts.at(t);
    }
    return {
        {"model_tag", model_tag},
        {"config_ref", config_ref},
        {"split_ref", split_ref},
        {"accuracies", accuracies},
        {"counts", counts},
        {"times",
         {{"train_s", train_seconds < 0 ? nlohmann::json() : nlohmann::json(train_seconds)},
          {"infer_s", inference_seconds}}},
    };
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport report;
    report.model_tag = j.at("model_tag").get<std::string>();
    report.config_ref = j.value("config_ref", "");
    report.split_ref = j.value("split_ref", "");
    report.overall_accuracy = j.at("accuracies").at("overall").get<double>();
    for (QuestionType t : kQuestionTypes) {
        const std::string key(question_type_json_key(t));
        report.per_type_accuracy[t] = j.at("accuracies").at(key).get<double>();
        report.per_type_counts[t] = j.at("counts").at(key).get<std::int64_t>();
    }
    const auto& times = j.at("times");
    report.inference_seconds = times.at("infer_s").get<double>();
    report.train_seconds = times.at("train_s").is_null() ? -1.0
                                                         : times.at("train_s").get<double>();
    return report;
}

EvalReport evaluate(const FusionModel& model, const std::vector<QAPair>& test_pairs,
                    const FeatureStore& image_store, const FeatureStore& text_store,
                    std::string model_tag, std::vector<Misprediction>* mispredictions) {
    if (test_pairs.empty()) throw std::invalid_argument("evaluate: empty test set");
    const auto& config = model.config();
    if (image_store.output_dim() != config.image_dim) {
        throw std::invalid_argument("image store width " +
                                    std::to_string(image_store.output_dim()) +
                                    " does not match model image_dim " +
                                    std::to_string(config.image_dim));
    }
    if (text_store.output_dim() != config.text_dim) {
        throw std::invalid_argument("text store width " +
                                    std::to_string(text_store.output_dim()) +
                                    " does not match model text_dim " +
                                    std::to_string(config.text_dim));
    }

    const LabelVocabulary vocab;
    const auto n = static_cast<Eigen::Index>(test_pairs.size());

    // Stage features and targets up front; the timed section is scoring only.
    Eigen::MatrixXf image_feats(config.image_dim, n);
    Eigen::MatrixXf text_feats(config.text_dim, n);
    std::vector<int> targets(test_pairs.size());
    for (Eigen::Index j = 0; j < n; ++j) {
        const QAPair& pair = test_pairs[static_cast<std::size_t>(j)];
        if (!image_store.contains(pair.image_id)) {
            throw std::runtime_error("missing image feature for '" + pair.image_id +
                                     "' in store " + image_store.dir().string());
        }
        if (!text_store.contains(pair.question_id)) {
            throw std::runtime_error("missing text feature for '" + pair.question_id +
                                     "' in store " + text_store.dir().string());
        }
        const auto img = image_store.vector_for(pair.image_id);
        const auto txt = text_store.vector_for(pair.question_id);
        image_feats.col(j) = Eigen::Map<const Eigen::VectorXf>(
            img.data(), static_cast<Eigen::Index>(img.size()));
        text_feats.col(j) = Eigen::Map<const Eigen::VectorXf>(
            txt.data(), static_cast<Eigen::Index>(txt.size()));
        targets[static_cast<std::size_t>(j)] = vocab.index_of(pair.answer);
    }

    std::vector<int> predictions(test_pairs.size());
    constexpr Eigen::Index kScoreBatch = 256;
    const auto start = std::chrono::steady_clock::now();
    for (Eigen::Index begin = 0; begin < n; begin += kScoreBatch) {
        const Eigen::Index count = std::min(kScoreBatch, n - begin);
        Eigen::MatrixXf logits = model.forward_batch(image_feats.middleCols(begin, count),
                                                     text_feats.middleCols(begin, count));
        for (Eigen::Index j = 0; j < count; ++j) {
            predictions[static_cast<std::size_t>(begin + j)] =
                predict(std::span<const float>(logits.col(j).data(),
                                               static_cast<std::size_t>(logits.rows())));
        }
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    EvalReport report;
    report.model_tag = std::move(model_tag);
    report.inference_seconds = elapsed;
    std::map<QuestionType, std::int64_t> correct;
    for (QuestionType t : kQuestionTypes) {
        report.per_type_counts[t] = 0;
        correct[t] = 0;
    }
    std::int64_t total_correct = 0;
    for (std::size_t i = 0; i < test_pairs.size(); ++i) {
        const QAPair& pair = test_pairs[i];
        ++report.per_type_counts[pair.question_type];
        if (predictions[i] == targets[i]) {
            ++correct[pair.question_type];
            ++total_correct;
        } else if (mispredictions != nullptr) {
            mispredictions->push_back({pair.question_id, pair.image_id, pair.question_type,
                                       pair.answer, vocab.label(predictions[i])});
        }
    }
    report.overall_accuracy =
        100.0 * static_cast<double>(total_correct) / static_cast<double>(test_pairs.size());
    for (QuestionType t : kQuestionTypes) {
        const auto count = report.per_type_counts[t];
        report.per_type_accuracy[t] =
            count == 0 ? 0.0
                       : 100.0 * static_cast<double>(correct[t]) / static_cast<double>(count);
    }
    return report;
}

bool decompose_check(const EvalReport& report) {
    double weighted = 0.0;
    std::int64_t total = 0;
    for (const auto& [type, count] : report.per_type_counts) {
        if (count < 0) return false;
        weighted += report.per_type_accuracy.at(type) * static_cast<double>(count);
        total += count;
    }
    if (total == 0) return false;
    return std::abs(weighted / static_cast<double>(total) - report.overall_accuracy) <= 1e-9;
}

void write_mispredictions_csv(const std::filesystem::path& path,
                              const std::vector<Misprediction>& mispredictions) {
    std::ostringstream out;
    out << "question_id,image_id,question_type,truth,predicted\n";
    for (const Misprediction& m : mispredictions) {
        // Answers may contain commas ("flooded,non-flooded"); quote them.
        out << m.question_id << ',' << m.image_id << ',' << to_string(m.question_type) << ",\""
            << m.truth << "\",\"" << m.predicted << "\"\n";
    }
    write_file_atomic(path, out.str());
}

std::filesystem::path default_reference_path() {
    return std::filesystem::path(FVQA_DATA_DIR) / "reference_results.json";
}

std::vector<ReferenceRow> load_reference_rows(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("failed to parse reference table " + path.string() + ": " + e.what());
    }
    std::vector<ReferenceRow> rows;
    try {
        for (const auto& r : doc.at("rows")) {
            ReferenceRow row;
            row.group = r.at("group").get<std::string>();
            row.method = r.at("method").get<std::string>();
            row.train_time = r.at("train_time").get<std::string>();
            row.infer_time = r.at("infer_time").get<std::string>();
            row.accuracy = {r.at("overall").get<std::string>(),
                            r.at("simple_count").get<std::string>(),
                            r.at("complex_count").get<std::string>(),
                            r.at("yes_no").get<std::string>(),
                            r.at("image_condition").get<std::string>(),
                            r.at("road_condition").get<std::string>()};
            rows.push_back(std::move(row));
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("reference table " + path.string() + " is malformed: " + e.what());
    }
    return rows;
}

std::string render_table(const std::vector<EvalReport>& reports,
                         const std::vector<ReferenceRow>& reference) {
    static const std::array<std::string, 9> headers = {
        "Method",      "Training",      "Inference",       "Overall",       "Simple Count",
        "Complex Count", "Yes/No",      "Image Condition", "Road Condition"};

    const std::vector<TableRow> rows = collect_rows(reports, reference);
    std::array<std::size_t, 9> width{};
    for (std::size_t c = 0; c < 9; ++c) width[c] = headers[c].size();
    for (const TableRow& row : rows) {
        width[0] = std::max(width[0], row.method.size());
        width[1] = std::max(width[1], row.train_time.size());
        width[2] = std::max(width[2], row.infer_time.size());
        for (std::size_t c = 0; c < 6; ++c) {
            width[c + 3] = std::max(width[c + 3], row.accuracy[c].size());
        }
    }

    auto pad = [](const std::string& s, std::size_t w) {
        return s + std::string(w - s.size(), ' ');
    };
    std::ostringstream out;
    std::size_t total = 0;
    for (std::size_t c = 0; c < 9; ++c) {
        out << (c == 0 ? "" : "  ") << pad(headers[c], width[c]);
        total += width[c] + (c == 0 ? 0 : 2);
    }
    out << '\n' << std::string(total, '-') << '\n';
    bool separator_emitted = reports.empty(); // rule only between run and reference rows
    bool any_reference = false;
    for (const TableRow& row : rows) {
        if (row.reference && !separator_emitted) {
            out << std::string(total, '-') << '\n';
            separator_emitted = true;
        }
        any_reference = any_reference || row.reference;
        out << pad(row.method, width[0]) << "  " << pad(row.train_time, width[1]) << "  "
            << pad(row.infer_time, width[2]);
        for (std::size_t c = 0; c < 6; ++c) out << "  " << pad(row.accuracy[c], width[c + 3]);
        out << '\n';
    }
    if (any_reference) {
        out << "[ref] previously reported results (different split and hardware)\n";
    }
    return out.str();
}

nlohmann::json table_json(const std::vector<EvalReport>& reports,
                          const std::vector<ReferenceRow>& reference) {
    auto rows = nlohmann::json::array();
    for (const EvalReport& r : reports) {
        nlohmann::json row = r.to_json();
        row["source"] = "run";
        rows.push_back(std::move(row));
    }
    for (const ReferenceRow& r : reference) {
        rows.push_back({{"source", "reference"},
                        {"group", r.group},
                        {"model_tag", r.method},
                        {"train_time", r.train_time},
                        {"infer_time", r.infer_time},
                        {"accuracies",
                         {{"overall", r.accuracy[0]},
                          {"simple_count", r.accuracy[1]},
                          {"complex_count", r.accuracy[2]},
                          {"yes_no", r.accuracy[3]},
                          {"image_condition", r.accuracy[4]},
                          {"road_condition", r.accuracy[5]}}}});
    }
    return {{"rows", rows}};
}

} // namespace fvqa
