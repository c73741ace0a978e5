#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include <opencv2/imgcodecs.hpp>

#include "fvqa/common.hpp"
#include "fvqa/encoders.hpp"
#include "testutil.hpp"

using namespace fvqa;

namespace {

cv::Mat synthetic_raster(int rows, int cols, std::uint64_t seed, int channels = 3) {
    DetRng rng(seed);
    cv::Mat m(rows, cols, CV_MAKETYPE(CV_8U, channels));
    for (int y = 0; y < rows; ++y) {
        auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < cols * channels; ++x) {
            row[x] = static_cast<unsigned char>(rng.bounded(256));
        }
    }
    return m;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

TEST_CASE("provider resolves the backbone names at their published widths") {
    auto& provider = EncoderProvider::global();

    // dummy-input width probe
    auto text = provider.make_text("roberta-large");
    CHECK(text->spec().output_dim == 1024);
    CHECK(text->encode("How many buildings are non flooded ?").size() == 1024);

    auto resnet = provider.make_image("resnet50");
    auto convnext = provider.make_image("convnext-large");
    const cv::Mat probe = synthetic_raster(48, 64, 1);
    CHECK(resnet->encode(probe).size() == 2048);
    CHECK(convnext->encode(probe).size() == 1536);

    CHECK_THROWS_AS((void)provider.make_text("bert-base"), std::out_of_range);
    CHECK_THROWS_AS((void)provider.make_image("vgg16"), std::out_of_range);
}

TEST_CASE("text encoding is deterministic and content-sensitive") {
    HashedTextEncoder enc("t", 64, 7);
    const auto a = enc.encode("Is the road flooded ?");
    const auto b = enc.encode("Is the road flooded ?");
    CHECK(bitwise_equal(a, b));

    const auto c = enc.encode("Is the building flooded ?");
    CHECK_FALSE(bitwise_equal(a, c));

    // token order matters through the bigram terms
    const auto d = enc.encode("flooded road");
    const auto e = enc.encode("road flooded");
    CHECK_FALSE(bitwise_equal(d, e));
}

TEST_CASE("text encoder error and truncation paths") {
    HashedTextEncoder enc("t", 16, 7, TextPreprocess{"lower-alnum", 4});
    CHECK_THROWS_AS((void)enc.encode(""), std::invalid_argument);
    CHECK_THROWS_AS((void)enc.encode("   "), std::invalid_argument);
    CHECK_THROWS_AS((void)enc.encode("???"), std::invalid_argument);

    // truncation keeps the leading tokens: result equals encoding the prefix
    const auto truncated = enc.encode("one two three four five six");
    const auto prefix = enc.encode("one two three four");
    CHECK(bitwise_equal(truncated, prefix));
}

TEST_CASE("image encoding is deterministic and tolerates degenerate input") {
    GridImageEncoder enc("i", 32, 11);
    const cv::Mat img = synthetic_raster(100, 160, 5);
    CHECK(bitwise_equal(enc.encode(img), enc.encode(img)));

    const cv::Mat zeros = cv::Mat::zeros(64, 64, CV_8UC3);
    const auto v = enc.encode(zeros);
    CHECK(v.size() == 32);
    for (float x : v) CHECK(std::isfinite(x));

    const cv::Mat gray = synthetic_raster(32, 32, 9, 1);
    CHECK(enc.encode(gray).size() == 32); // replicated with a warning

    CHECK_THROWS_AS((void)enc.encode(cv::Mat()), std::invalid_argument);
}

TEST_CASE("image loading decodes files and names failures") {
    test::TempDir tmp("imgio");
    const cv::Mat img = synthetic_raster(20, 30, 3);
    cv::imwrite((tmp / "ok.png").string(), img);

    const cv::Mat loaded = load_image_rgb(tmp / "ok.png");
    CHECK(loaded.rows == 20);
    CHECK(loaded.cols == 30);
    CHECK(loaded.channels() == 3);

    write_file_atomic(tmp / "bad.png", "this is not an image");
    CHECK_THROWS_WITH_AS((void)load_image_rgb(tmp / "bad.png"), doctest::Contains("bad.png"),
                         LoadError);
    CHECK_THROWS_AS((void)load_image_rgb(tmp / "missing.png"), LoadError);
}

TEST_CASE("weights digests are stable and parameter-dependent") {
    HashedTextEncoder t1("t", 64, 7), t2("t", 64, 7), t3("t", 64, 8);
    CHECK(t1.weights_digest() == t2.weights_digest());
    CHECK(t1.weights_digest() != t3.weights_digest());

    GridImageEncoder i1("i", 32, 11), i2("i", 32, 11), i3("i", 48, 11);
    CHECK(i1.weights_digest() == i2.weights_digest());
    CHECK(i1.weights_digest() != i3.weights_digest());
}

TEST_CASE("extract_text_features builds a store and is idempotent") {
    test::TempDir tmp("extract-text");
    HashedTextEncoder enc("t", 24, 7);
    std::vector<TextItem> items;
    for (int i = 0; i < 23; ++i) {
        items.push_back({"q" + std::to_string(i),
                         "How many buildings are in image number " + std::to_string(i) + " ?"});
    }

    FeatureStore store = extract_text_features(items, enc, tmp / "s", {.batch_size = 4});
    CHECK(store.size() == items.size());
    CHECK(store.output_dim() == 24);
    for (const TextItem& item : items) {
        CHECK(bitwise_equal(std::vector<float>(store.vector_for(item.id).begin(),
                                               store.vector_for(item.id).end()),
                            enc.encode(item.text)));
    }

    // re-run: validated, not recomputed, identical checksum
    FeatureStore again = extract_text_features(items, enc, tmp / "s", {.batch_size = 4});
    CHECK(again.payload_digest() == store.payload_digest());

    // a different item set must not silently reuse the cache
    items.push_back({"extra", "Is the road flooded ?"});
    CHECK_THROWS_WITH_AS((void)extract_text_features(items, enc, tmp / "s", {}),
                         doctest::Contains("delete"), std::runtime_error);
}

TEST_CASE("extraction results do not depend on the worker count") {
    test::TempDir tmp("extract-par");
    HashedTextEncoder enc("t", 16, 3);
    std::vector<TextItem> items;
    for (int i = 0; i < 57; ++i) {
        items.push_back({"q" + std::to_string(i), "question number " + std::to_string(i)});
    }
    FeatureStore serial =
        extract_text_features(items, enc, tmp / "serial", {.batch_size = 8, .workers = 1});
    FeatureStore parallel =
        extract_text_features(items, enc, tmp / "parallel", {.batch_size = 8, .workers = 4});
    CHECK(serial.payload_digest() == parallel.payload_digest());
    CHECK(serial.item_ids() == parallel.item_ids());
}

TEST_CASE("extract_image_features covers files on disk") {
    test::TempDir tmp("extract-img");
    GridImageEncoder enc("i", 20, 5);
    std::vector<ImageItem> items;
    for (int i = 0; i < 6; ++i) {
        const auto file = tmp / ("im" + std::to_string(i) + ".png");
        cv::imwrite(file.string(), synthetic_raster(24 + i, 36, static_cast<std::uint64_t>(i)));
        items.push_back({"im" + std::to_string(i), file});
    }
    FeatureStore store = extract_image_features(items, enc, tmp / "s", {.batch_size = 2});
    CHECK(store.size() == 6);

    FeatureStore empty = extract_image_features({}, enc, tmp / "empty", {});
    CHECK(empty.size() == 0);
    CHECK(FeatureStore::is_complete(tmp / "empty"));

    std::vector<ImageItem> missing = {{"nope", tmp / "nope.png"}};
    CHECK_THROWS_AS((void)extract_image_features(missing, enc, tmp / "s2", {}), LoadError);
}
