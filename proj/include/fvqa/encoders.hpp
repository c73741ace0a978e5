#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "fvqa/feature_store.hpp"

namespace fvqa {

enum class Modality { Text, Image };

struct ImagePreprocess {
    int width = 224;
    int height = 224;
    // RGB channel normalization, the constants both backbones were
    // pretrained with.
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

struct TextPreprocess {
    std::string tokenizer = "lower-alnum";
    int max_tokens = 64;
};

struct EncoderSpec {
    std::string name;
    Modality modality = Modality::Text;
    int output_dim = 0;
    ImagePreprocess image_pre; // meaningful when modality == Image
    TextPreprocess text_pre;   // meaningful when modality == Text
};

/// Frozen question featurizer. encode() is a pure function of its input:
/// repeated calls return bit-identical vectors, and weights_digest() is
/// unaffected by anything the rest of the pipeline does.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual const EncoderSpec& spec() const = 0;
    /// Throws std::invalid_argument on empty input; truncates over-long
    /// inputs to spec().text_pre.max_tokens with a warning.
    virtual std::vector<float> encode(std::string_view question_text) const = 0;
    virtual std::string weights_digest() const = 0;
};

/// Frozen image featurizer over a decoded RGB raster (CV_8UC3 in [0,255] or
/// CV_32FC3 in [0,1]). Grayscale input is replicated to three channels with
/// a warning. Same determinism contract as TextEncoder.
class ImageEncoder {
public:
    virtual ~ImageEncoder() = default;
    virtual const EncoderSpec& spec() const = 0;
    virtual std::vector<float> encode(const cv::Mat& image_rgb) const = 0;
    virtual std::string weights_digest() const = 0;
};

/// Deterministic stand-in for a pretrained sentence encoder: hashed unigrams
/// and bigrams are mapped to fixed pseudo-random embedding rows (seeded per
/// token hash) and mean-pooled over non-padding tokens.
class HashedTextEncoder : public TextEncoder {
public:
    HashedTextEncoder(std::string name, int output_dim, std::uint64_t weight_seed,
                      TextPreprocess pre = {});
    const EncoderSpec& spec() const override { return spec_; }
    std::vector<float> encode(std::string_view question_text) const override;
    std::string weights_digest() const override { return digest_; }

private:
    EncoderSpec spec_;
    std::uint64_t weight_seed_;
    std::string digest_;
};

/// Deterministic stand-in for a pooled classification backbone: the image is
/// resized, channel-normalized, block-averaged into a coarse grid, and the
/// grid pushed through one frozen seeded projection with tanh.
class GridImageEncoder : public ImageEncoder {
public:
    GridImageEncoder(std::string name, int output_dim, std::uint64_t weight_seed,
                     ImagePreprocess pre = {}, int grid = 8);
    const EncoderSpec& spec() const override { return spec_; }
    std::vector<float> encode(const cv::Mat& image_rgb) const override;
    std::string weights_digest() const override { return digest_; }

private:
    EncoderSpec spec_;
    int grid_;
    std::vector<float> weight_; // output_dim x (grid*grid*3), row-major
    std::vector<float> bias_;
    std::string digest_;
};

/// Resolves encoder names to runtimes. Ships surrogate featurizers under the
/// backbone names (with the backbones' published pooled-feature widths):
///   text:  "roberta-large" (1024)
///   image: "resnet50" (2048), "convnext-large" (1536)
/// Alternate runtimes (e.g. exported static graphs) can be registered under
/// the same names; features computed elsewhere can also be imported directly
/// in the FeatureStore format.
class EncoderProvider {
public:
    static EncoderProvider& global();

    std::unique_ptr<TextEncoder> make_text(const std::string& name) const;
    std::unique_ptr<ImageEncoder> make_image(const std::string& name) const;

    void register_text(const std::string& name,
                       std::function<std::unique_ptr<TextEncoder>()> factory);
    void register_image(const std::string& name,
                        std::function<std::unique_ptr<ImageEncoder>()> factory);

    std::vector<std::string> known_text_encoders() const;
    std::vector<std::string> known_image_encoders() const;

private:
    EncoderProvider();
    std::unordered_map<std::string, std::function<std::unique_ptr<TextEncoder>()>> text_;
    std::unordered_map<std::string, std::function<std::unique_ptr<ImageEncoder>()>> image_;
};

/// Decodes an image file to CV_8UC3 RGB. Throws LoadError naming the path if
/// the file cannot be decoded; grayscale files are replicated to 3 channels
/// with a warning.
cv::Mat load_image_rgb(const std::filesystem::path& path);

struct TextItem {
    std::string id; // question_id
    std::string text;
};

struct ImageItem {
    std::string id; // image_id
    std::filesystem::path path;
};

struct ExtractOptions {
    int batch_size = 32;
    int workers = 0; // 0 -> hardware concurrency
};

/// Encode-once-and-cache. Re-running over a finalized store verifies the
/// checksum and the item set and returns without recomputation; a store that
/// fails verification is reported as corrupt with instructions to delete it.
FeatureStore extract_text_features(const std::vector<TextItem>& items, const TextEncoder& encoder,
                                   const std::filesystem::path& store_dir,
                                   const ExtractOptions& options = {});
FeatureStore extract_image_features(const std::vector<ImageItem>& items,
                                    const ImageEncoder& encoder,
                                    const std::filesystem::path& store_dir,
                                    const ExtractOptions& options = {});

} // namespace fvqa
