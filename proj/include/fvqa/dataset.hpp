#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fvqa {

enum class QuestionType {
    SimpleCount,
    ComplexCount,
    YesNo,
    ImageCondition,
    RoadCondition,
};

inline constexpr std::array<QuestionType, 5> kQuestionTypes = {
    QuestionType::SimpleCount,   QuestionType::ComplexCount, QuestionType::YesNo,
    QuestionType::ImageCondition, QuestionType::RoadCondition,
};

std::string_view to_string(QuestionType type);             // "SimpleCount", ...
std::string_view question_type_json_key(QuestionType type); // "simple_count", ...
std::string_view question_type_display(QuestionType type);  // "Simple Count", ...
QuestionType question_type_from_string(std::string_view name);

/// One question about one image with its ground-truth answer.
struct QAPair {
    std::string question_id;
    std::string image_id; // filename stem, shared by all questions on the image
    std::string question_text;
    std::string answer; // normalized, member of LabelVocabulary
    QuestionType question_type{};
};

/// The fixed 56-entry answer space: "flooded", "non-flooded",
/// "flooded,non-flooded", "Yes", "No", then "0".."50".
class LabelVocabulary {
public:
    LabelVocabulary();

    std::size_t size() const { return labels_.size(); }
    const std::vector<std::string>& labels() const { return labels_; }

    /// Throws std::out_of_range on an unknown label.
    int index_of(const std::string& label) const;
    std::optional<int> find(const std::string& label) const;
    const std::string& label(int index) const;

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, int> index_;
};

LabelVocabulary build_label_vocabulary();

struct DatasetSplit {
    std::vector<QAPair> train;
    std::vector<QAPair> test;
    std::uint64_t seed = 0;
    double fraction = 0.0; // test image fraction the split was built with
    std::set<std::string> image_ids_train;
    std::set<std::string> image_ids_test;
};

/// Trims surrounding whitespace; all-digit answers are canonicalized to
/// decimal form without leading zeros ("07" -> "7"). Everything else is
/// returned verbatim (comparison stays case-sensitive).
std::string normalize_answer(std::string_view raw);

/// Maps raw annotation type strings onto the five-value enum.
/// "Condition_Recognition" records are disambiguated by whether the question
/// mentions a road. Unknown strings throw ValidationError.
QuestionType resolve_question_type(std::string_view raw_type, std::string_view question_text);

/// Loads the FloodNet VQA annotation file: a JSON object mapping question ids
/// to records. Accepted record fields (first match wins):
///   image file:   "Image_ID" | "image_id"
///   question:     "Question" | "question"
///   answer:       "Ground_Truth" | "ground_truth" | "Answer" | "answer"
///   type:         "Question_Type" | "question_type"
/// Every answer is validated against the vocabulary and the per-type answer
/// class; violations throw ValidationError naming the question id.
std::vector<QAPair> load_annotations(const std::filesystem::path& path);

/// Seeded image-disjoint partition. Every question follows its image;
/// deterministic for fixed (pairs, fraction, seed). Throws if either side
/// would be empty.
DatasetSplit split_by_image(const std::vector<QAPair>& pairs, double test_image_fraction,
                            std::uint64_t seed);

std::map<QuestionType, std::int64_t> type_histogram(const std::vector<QAPair>& pairs);

/// Pinned-split JSON: seed, fraction, per-side image-id and question-id
/// arrays. Rewriting the same split produces identical bytes.
void write_split_file(const DatasetSplit& split, const std::filesystem::path& path);

/// Reassembles a DatasetSplit from a pinned split file, checking that the
/// file covers exactly the given pairs and stays image-disjoint.
DatasetSplit apply_split_file(const std::vector<QAPair>& pairs,
                              const std::filesystem::path& path);

} // namespace fvqa
