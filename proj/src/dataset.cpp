#include "fvqa/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <json.hpp>

#include "fvqa/common.hpp"
#include "fvqa/rng.hpp"

namespace fvqa {

namespace {

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
}

bool contains_word_ci(std::string_view text, std::string_view word) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower.find(word) != std::string::npos;
}

std::string field_value(const nlohmann::ordered_json& record,
                        std::initializer_list<const char*> aliases,
                        const std::string& question_id) {
    for (const char* key : aliases) {
        auto it = record.find(key);
        if (it != record.end()) {
            if (!it->is_string()) {
                throw ValidationError("question '" + question_id + "': field '" + key +
                                      "' is not a string");
            }
            return it->get<std::string>();
        }
    }
    throw ValidationError("question '" + question_id + "': missing field '" +
                          std::string(*aliases.begin()) + "'");
}

void validate_answer_class(const QAPair& pair, int label_index) {
    switch (pair.question_type) {
    case QuestionType::SimpleCount:
    case QuestionType::ComplexCount:
        if (label_index < 5) {
            throw ValidationError("question '" + pair.question_id +
                                  "': counting answer must be a number in 0..50, got '" +
                                  pair.answer + "'");
        }
        break;
    case QuestionType::YesNo:
        if (label_index != 3 && label_index != 4) {
            throw ValidationError("question '" + pair.question_id +
                                  "': Yes/No answer must be 'Yes' or 'No', got '" +
                                  pair.answer + "'");
        }
        break;
    case QuestionType::ImageCondition:
    case QuestionType::RoadCondition:
        if (label_index > 2) {
            throw ValidationError("question '" + pair.question_id +
                                  "': condition answer must be one of 'flooded', "
                                  "'non-flooded', 'flooded,non-flooded', got '" +
                                  pair.answer + "'");
        }
        break;
    }
}

} // namespace

std::string_view to_string(QuestionType type) {
    switch (type) {
    case QuestionType::SimpleCount: return "SimpleCount";
    case QuestionType::ComplexCount: return "ComplexCount";
    case QuestionType::YesNo: return "YesNo";
    case QuestionType::ImageCondition: return "ImageCondition";
    case QuestionType::RoadCondition: return "RoadCondition";
    }
    return "?";
}

std::string_view question_type_json_key(QuestionType type) {
    switch (type) {
    case QuestionType::SimpleCount: return "simple_count";
    case QuestionType::ComplexCount: return "complex_count";
    case QuestionType::YesNo: return "yes_no";
    case QuestionType::ImageCondition: return "image_condition";
    case QuestionType::RoadCondition: return "road_condition";
    }
    return "?";
}

std::string_view question_type_display(QuestionType type) {
    switch (type) {
    case QuestionType::SimpleCount: return "Simple Count";
    case QuestionType::ComplexCount: return "Complex Count";
    case QuestionType::YesNo: return "Yes/No";
    case QuestionType::ImageCondition: return "Image Condition";
    case QuestionType::RoadCondition: return "Road Condition";
    }
    return "?";
}

QuestionType question_type_from_string(std::string_view name) {
    for (QuestionType t : kQuestionTypes) {
        if (name == to_string(t) || name == question_type_json_key(t)) return t;
    }
    throw ValidationError("unknown question type name '" + std::string(name) + "'");
}

LabelVocabulary::LabelVocabulary() {
    labels_ = {"flooded", "non-flooded", "flooded,non-flooded", "Yes", "No"};
    for (int n = 0; n <= 50; ++n) labels_.push_back(std::to_string(n));
    for (int i = 0; i < static_cast<int>(labels_.size()); ++i) index_[labels_[i]] = i;
}

int LabelVocabulary::index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) {
        throw std::out_of_range("label '" + label + "' is not in the answer vocabulary");
    }
    return it->second;
}

std::optional<int> LabelVocabulary::find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const std::string& LabelVocabulary::label(int index) const {
    return labels_.at(static_cast<std::size_t>(index));
}

LabelVocabulary build_label_vocabulary() { return LabelVocabulary(); }

std::string normalize_answer(std::string_view raw) {
    std::string_view t = trim(raw);
    if (all_digits(t)) {
        std::size_t first = t.find_first_not_of('0');
        if (first == std::string_view::npos) return "0";
        return std::string(t.substr(first));
    }
    return std::string(t);
}

QuestionType resolve_question_type(std::string_view raw_type, std::string_view question_text) {
    std::string_view t = trim(raw_type);
    if (t == "Simple_Counting" || t == "Simple Counting" || t == "simple_counting" ||
        t == "SimpleCount") {
        return QuestionType::SimpleCount;
    }
    if (t == "Complex_Counting" || t == "Complex Counting" || t == "complex_counting" ||
        t == "ComplexCount") {
        return QuestionType::ComplexCount;
    }
    if (t == "Yes_No" || t == "Yes/No" || t == "yes_no" || t == "YesNo") {
        return QuestionType::YesNo;
    }
    if (t == "Condition_Recognition" || t == "Condition Recognition" ||
        t == "condition_recognition") {
        return contains_word_ci(question_text, "road") ? QuestionType::RoadCondition
                                                       : QuestionType::ImageCondition;
    }
    if (t == "Road_Condition" || t == "Condition of Road" || t == "RoadCondition") {
        return QuestionType::RoadCondition;
    }
    if (t == "Image_Condition" || t == "Condition of Entire Image" || t == "ImageCondition") {
        return QuestionType::ImageCondition;
    }
    throw ValidationError("unknown question type string '" + std::string(t) + "'");
}

std::vector<QAPair> load_annotations(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw LoadError("annotation file not found: " + path.string());
    }
    std::string content = read_text_file(path);
    if (trim(content).empty()) {
        warn("annotation file " + path.string() + " contains no records");
        return {};
    }

    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(content);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("failed to parse annotation file " + path.string() + ": " + e.what());
    }
    if (!doc.is_object()) {
        throw LoadError("annotation file " + path.string() +
                        " must be a JSON object mapping question ids to records");
    }
    if (doc.empty()) {
        warn("annotation file " + path.string() + " contains no records");
        return {};
    }

    const LabelVocabulary vocab;
    std::vector<QAPair> pairs;
    pairs.reserve(doc.size());
    for (const auto& [question_id, record] : doc.items()) {
        if (!record.is_object()) {
            throw ValidationError("question '" + question_id + "': record is not a JSON object");
        }
        QAPair pair;
        pair.question_id = question_id;

        std::string image_file = field_value(record, {"Image_ID", "image_id"}, question_id);
        pair.image_id = std::filesystem::path(std::string(trim(image_file))).stem().string();
        if (pair.image_id.empty()) {
            throw ValidationError("question '" + question_id +
                                  "': unresolvable image reference '" + image_file + "'");
        }

        pair.question_text = field_value(record, {"Question", "question"}, question_id);
        std::string raw_answer =
            field_value(record, {"Ground_Truth", "ground_truth", "Answer", "answer"}, question_id);
        std::string raw_type = field_value(record, {"Question_Type", "question_type"}, question_id);

        try {
            pair.question_type = resolve_question_type(raw_type, pair.question_text);
        } catch (const ValidationError& e) {
            throw ValidationError("question '" + question_id + "': " + e.what());
        }

        pair.answer = normalize_answer(raw_answer);
        auto label_index = vocab.find(pair.answer);
        if (!label_index) {
            if (all_digits(pair.answer)) {
                throw ValidationError("question '" + question_id + "': numeric answer '" +
                                      pair.answer + "' is outside the 0..50 range");
            }
            throw ValidationError("question '" + question_id + "': answer '" + pair.answer +
                                  "' is not in the 56-label vocabulary");
        }
        validate_answer_class(pair, *label_index);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

DatasetSplit split_by_image(const std::vector<QAPair>& pairs, double test_image_fraction,
                            std::uint64_t seed) {
    if (pairs.empty()) throw std::invalid_argument("split_by_image: no pairs to split");
    if (!(test_image_fraction > 0.0 && test_image_fraction < 1.0)) {
        throw std::invalid_argument("test_image_fraction must be strictly between 0 and 1");
    }

    std::set<std::string> distinct;
    for (const QAPair& p : pairs) distinct.insert(p.image_id);
    if (distinct.size() < 2) {
        throw std::invalid_argument(
            "split_by_image: need at least two distinct images to form disjoint sides");
    }

    // Canonical order first, then a seeded permutation, so the result depends
    // only on (image-id set, fraction, seed).
    std::vector<std::string> ids(distinct.begin(), distinct.end());
    DetRng rng(seed);
    rng.shuffle(ids);

    const auto n_images = ids.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_image_fraction *
                                                              static_cast<double>(n_images)));
    if (n_test == 0 || n_test >= n_images) {
        throw std::invalid_argument("test_image_fraction " + std::to_string(test_image_fraction) +
                                    " yields an empty split side for " +
                                    std::to_string(n_images) + " images");
    }

    DatasetSplit split;
    split.seed = seed;
    split.fraction = test_image_fraction;
    split.image_ids_test.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.image_ids_train.insert(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());

    for (const QAPair& p : pairs) {
        if (split.image_ids_test.count(p.image_id) != 0) {
            split.test.push_back(p);
        } else {
            split.train.push_back(p);
        }
    }
    return split;
}

std::map<QuestionType, std::int64_t> type_histogram(const std::vector<QAPair>& pairs) {
    std::map<QuestionType, std::int64_t> hist;
    for (QuestionType t : kQuestionTypes) hist[t] = 0;
    for (const QAPair& p : pairs) ++hist[p.question_type];
    return hist;
}

void write_split_file(const DatasetSplit& split, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["format_version"] = 1;
    doc["seed"] = split.seed;
    doc["fraction"] = split.fraction;
    doc["image_ids_train"] = std::vector<std::string>(split.image_ids_train.begin(),
                                                      split.image_ids_train.end());
    doc["image_ids_test"] = std::vector<std::string>(split.image_ids_test.begin(),
                                                     split.image_ids_test.end());
    std::vector<std::string> q_train, q_test;
    q_train.reserve(split.train.size());
    q_test.reserve(split.test.size());
    for (const QAPair& p : split.train) q_train.push_back(p.question_id);
    for (const QAPair& p : split.test) q_test.push_back(p.question_id);
    doc["question_ids_train"] = q_train;
    doc["question_ids_test"] = q_test;
    write_file_atomic(path, doc.dump(2) + "\n");
}

DatasetSplit apply_split_file(const std::vector<QAPair>& pairs,
                              const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("failed to parse split file " + path.string() + ": " + e.what());
    }

    DatasetSplit split;
    try {
        split.seed = doc.at("seed").get<std::uint64_t>();
        split.fraction = doc.at("fraction").get<double>();
        for (const auto& id : doc.at("image_ids_train")) {
            split.image_ids_train.insert(id.get<std::string>());
        }
        for (const auto& id : doc.at("image_ids_test")) {
            split.image_ids_test.insert(id.get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("split file " + path.string() + " is malformed: " + e.what());
    }

    for (const std::string& id : split.image_ids_test) {
        if (split.image_ids_train.count(id) != 0) {
            throw ValidationError("split file " + path.string() + ": image '" + id +
                                  "' appears on both sides");
        }
    }

    for (const QAPair& p : pairs) {
        bool in_train = split.image_ids_train.count(p.image_id) != 0;
        bool in_test = split.image_ids_test.count(p.image_id) != 0;
        if (!in_train && !in_test) {
            throw ValidationError("split file " + path.string() + ": image '" + p.image_id +
                                  "' of question '" + p.question_id + "' is not covered");
        }
        (in_test ? split.test : split.train).push_back(p);
    }
    return split;
}

} // namespace fvqa
