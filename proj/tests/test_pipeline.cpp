#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <opencv2/imgcodecs.hpp>

#include "fvqa/encoders.hpp"
#include "fvqa/evaluation.hpp"
#include "fvqa/training.hpp"
#include "testutil.hpp"

using namespace fvqa;

namespace {

// Images whose color scheme encodes the ground truth: the head must learn the
// answer from image content and carry it to images it never trained on.
// Memorization cannot pass this; neither can a pipeline that associates
// features with the wrong item ids.
struct LearnableDataset {
    std::vector<QAPair> pairs;
    std::vector<ImageItem> image_items;
    std::vector<TextItem> text_items;

    LearnableDataset(const std::filesystem::path& image_dir, std::size_t n_images,
                     std::uint64_t seed) {
        std::filesystem::create_directories(image_dir);
        static const char* kConditions[] = {"flooded", "non-flooded", "flooded,non-flooded"};
        DetRng rng(seed);
        std::size_t qid = 0;
        for (std::size_t i = 0; i < n_images; ++i) {
            const std::string image_id = "scene_" + std::to_string(i);
            const int condition = static_cast<int>(rng.bounded(3));
            const auto file = image_dir / (image_id + ".png");
            cv::imwrite(file.string(), render(condition, rng));
            image_items.push_back({image_id, file});

            QAPair image_q;
            image_q.question_id = std::to_string(qid++);
            image_q.image_id = image_id;
            image_q.question_text = "What is the overall condition of the given image ?";
            image_q.answer = kConditions[condition];
            image_q.question_type = QuestionType::ImageCondition;
            pairs.push_back(image_q);

            QAPair yesno_q;
            yesno_q.question_id = std::to_string(qid++);
            yesno_q.image_id = image_id;
            yesno_q.question_text = "Is the road flooded ?";
            yesno_q.answer = condition == 1 ? "No" : "Yes";
            yesno_q.question_type = QuestionType::YesNo;
            pairs.push_back(yesno_q);
        }
        for (const QAPair& p : pairs) text_items.push_back({p.question_id, p.question_text});
    }

    // flooded scenes are dark blue, non-flooded bright green, mixed half/half
    static cv::Mat render(int condition, DetRng& rng) {
        cv::Mat img(32, 32, CV_8UC3);
        auto pixel = [&](bool wet) {
            const int noise = static_cast<int>(rng.bounded(40));
            return wet ? cv::Vec3b(static_cast<unsigned char>(120 + noise), 60, 40)
                       : cv::Vec3b(40, static_cast<unsigned char>(150 + noise), 60);
        };
        for (int y = 0; y < img.rows; ++y) {
            for (int x = 0; x < img.cols; ++x) {
                const bool wet = condition == 0 || (condition == 2 && x < img.cols / 2);
                img.at<cv::Vec3b>(y, x) = pixel(wet);
            }
        }
        return img;
    }
};

} // namespace

TEST_CASE("the trained head generalizes to unseen images") {
    test::TempDir tmp("pipeline");
    LearnableDataset data(tmp / "images", 120, 404);

    const DatasetSplit split = split_by_image(data.pairs, 0.25, 19);

    HashedTextEncoder text_encoder("text-enc", 32, 5);
    GridImageEncoder image_encoder("image-enc", 48, 6);
    const FeatureStore text_store =
        extract_text_features(data.text_items, text_encoder, tmp / "txt", {});
    const FeatureStore image_store =
        extract_image_features(data.image_items, image_encoder, tmp / "img", {.batch_size = 16});

    FusionConfig fusion;
    fusion.method = FusionMethod::Mul;
    fusion.image_dim = 48;
    fusion.text_dim = 32;
    fusion.common_dim = 32;
    fusion.hidden_dims = {48, 32};
    fusion.seed = 3;
    FusionModel model(fusion);

    TrainConfig config;
    config.epochs = 60;
    config.batch_size = 32;
    config.seed = 8;
    const TrainLog log = train(model, split.train, image_store, text_store, config);
    CHECK(log.epochs.back().accuracy > 0.9); // fits the training side

    const EvalReport report = evaluate(model, split.test, image_store, text_store, "probe");
    // the test images were never seen; only the image content links them to
    // their answers
    CHECK(report.overall_accuracy >= 85.0);
    CHECK(report.per_type_accuracy.at(QuestionType::ImageCondition) >= 85.0);
    CHECK(report.per_type_accuracy.at(QuestionType::YesNo) >= 85.0);
    CHECK(decompose_check(report));
}
