#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fvqa {

/// On-disk cache of fixed-width float32 feature vectors.
///
/// Layout: a directory containing
///   manifest.json  — encoder name, output_dim, item list with byte offsets,
///                    checksum algorithm + digest of the payload
///   features.bin   — little-endian float32 vectors, concatenated in
///                    manifest order
///
/// The store is valid only once the manifest exists; the manifest is always
/// written last (atomically), so a crashed extraction never looks complete.
class FeatureStore {
public:
    static constexpr const char* kManifestFile = "manifest.json";
    static constexpr const char* kPayloadFile = "features.bin";

    /// Opens and fully validates a store: manifest shape, payload size,
    /// offset layout, checksum. Throws LoadError on any mismatch.
    static FeatureStore open(const std::filesystem::path& dir);

    /// Writes a complete store. `payload` holds size(ids) * output_dim floats
    /// in id order. Returns the in-memory store without re-reading disk.
    static FeatureStore write(const std::filesystem::path& dir, std::string encoder_name,
                              int output_dim, std::vector<std::string> ids,
                              std::vector<float> payload);

    /// True iff the directory holds a finalized (manifest present) store.
    static bool is_complete(const std::filesystem::path& dir);

    const std::string& encoder_name() const { return encoder_name_; }
    int output_dim() const { return output_dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& item_ids() const { return ids_; }
    const std::string& payload_digest() const { return digest_; }
    const std::filesystem::path& dir() const { return dir_; }

    bool contains(const std::string& item_id) const;

    /// Bit-exact stored vector. Throws std::out_of_range on unknown ids.
    std::span<const float> vector_for(const std::string& item_id) const;

    /// Whole payload in manifest order; used by full-scan consistency checks.
    const std::vector<float>& payload() const { return payload_; }

private:
    FeatureStore() = default;
    void build_index();

    std::filesystem::path dir_;
    std::string encoder_name_;
    int output_dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> payload_;
    std::string digest_;
    std::unordered_map<std::string, std::size_t> index_; // id -> item ordinal
};

} // namespace fvqa
