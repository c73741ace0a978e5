#include "fvqa/feature_store.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fvqa/common.hpp"
#include "fvqa/sha256.hpp"

namespace fvqa {

namespace {

std::vector<float> read_payload(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw LoadError("cannot open feature payload: " + file.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(float) != 0) {
        throw LoadError("feature payload size is not a multiple of 4 bytes: " + file.string());
    }
    std::vector<float> payload(bytes / sizeof(float));
    in.seekg(0);
    if (bytes > 0) {
        in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw LoadError("error while reading feature payload: " + file.string());
    }
    return payload;
}

} // namespace

bool FeatureStore::is_complete(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / kManifestFile);
}

void FeatureStore::build_index() {
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        auto [it, inserted] = index_.emplace(ids_[i], i);
        if (!inserted) {
            throw LoadError("feature store " + dir_.string() + ": duplicate item id '" +
                            ids_[i] + "'");
        }
    }
}

FeatureStore FeatureStore::open(const std::filesystem::path& dir) {
    const auto manifest_path = dir / kManifestFile;
    if (!std::filesystem::exists(manifest_path)) {
        throw LoadError("feature store has no manifest (incomplete or missing): " + dir.string());
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt feature store manifest " + manifest_path.string() + ": " +
                        e.what() + "; delete the store directory and re-extract");
    }

    FeatureStore store;
    store.dir_ = dir;
    std::string checksum_alg, checksum_hex;
    std::vector<std::uint64_t> offsets;
    try {
        store.encoder_name_ = manifest.at("encoder").at("name").get<std::string>();
        store.output_dim_ = manifest.at("encoder").at("output_dim").get<int>();
        const auto count = manifest.at("count").get<std::uint64_t>();
        checksum_alg = manifest.at("checksum").at("algorithm").get<std::string>();
        checksum_hex = manifest.at("checksum").at("digest").get<std::string>();
        for (const auto& item : manifest.at("items")) {
            store.ids_.push_back(item.at("id").get<std::string>());
            offsets.push_back(item.at("offset").get<std::uint64_t>());
        }
        if (count != store.ids_.size()) {
            throw LoadError("feature store manifest " + manifest_path.string() +
                            ": count does not match item list");
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("feature store manifest " + manifest_path.string() +
                        " is malformed: " + e.what());
    }
    if (store.output_dim_ <= 0) {
        throw LoadError("feature store manifest " + manifest_path.string() +
                        ": non-positive output_dim");
    }
    if (checksum_alg != "sha256") {
        throw LoadError("feature store " + dir.string() + ": unsupported checksum algorithm '" +
                        checksum_alg + "'");
    }

    const auto record_bytes = static_cast<std::uint64_t>(store.output_dim_) * sizeof(float);
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (offsets[i] != i * record_bytes) {
            throw LoadError("feature store " + dir.string() + ": item offsets are inconsistent "
                            "with output_dim; delete the store directory and re-extract");
        }
    }

    store.payload_ = read_payload(dir / kPayloadFile);
    if (store.payload_.size() != store.ids_.size() * static_cast<std::size_t>(store.output_dim_)) {
        throw LoadError("feature store " + dir.string() + ": payload size does not match "
                        "manifest; delete the store directory and re-extract");
    }
    store.digest_ = sha256_hex(store.payload_.data(), store.payload_.size() * sizeof(float));
    if (store.digest_ != checksum_hex) {
        throw LoadError("feature store " + dir.string() + ": payload checksum mismatch "
                        "(expected " + checksum_hex + ", got " + store.digest_ +
                        "); delete the store directory and re-extract");
    }

    store.build_index();
    return store;
}

FeatureStore FeatureStore::write(const std::filesystem::path& dir, std::string encoder_name,
                                 int output_dim, std::vector<std::string> ids,
                                 std::vector<float> payload) {
    if (output_dim <= 0) throw std::invalid_argument("feature store output_dim must be positive");
    if (payload.size() != ids.size() * static_cast<std::size_t>(output_dim)) {
        throw std::invalid_argument("feature store payload size does not match ids * output_dim");
    }
    std::filesystem::create_directories(dir);

    const char* payload_bytes = reinterpret_cast<const char*>(payload.data());
    const std::size_t payload_size = payload.size() * sizeof(float);
    {
        std::ofstream out(dir / kPayloadFile, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write feature payload in " + dir.string());
        out.write(payload_bytes, static_cast<std::streamsize>(payload_size));
        out.flush();
        if (!out) throw std::runtime_error("failed writing feature payload in " + dir.string());
    }

    std::string digest = sha256_hex(payload_bytes, payload_size);
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["encoder"] = {{"name", encoder_name}, {"output_dim", output_dim}};
    manifest["count"] = ids.size();
    manifest["checksum"] = {{"algorithm", "sha256"}, {"digest", digest}};
    auto items = nlohmann::json::array();
    const auto record_bytes = static_cast<std::uint64_t>(output_dim) * sizeof(float);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        items.push_back({{"id", ids[i]}, {"offset", i * record_bytes}});
    }
    manifest["items"] = std::move(items);
    // Manifest last: its presence is what marks the store as complete.
    write_file_atomic(dir / kManifestFile, manifest.dump(2) + "\n");

    FeatureStore store;
    store.dir_ = dir;
    store.encoder_name_ = std::move(encoder_name);
    store.output_dim_ = output_dim;
    store.ids_ = std::move(ids);
    store.payload_ = std::move(payload);
    store.digest_ = std::move(digest);
    store.build_index();
    return store;
}

bool FeatureStore::contains(const std::string& item_id) const {
    return index_.count(item_id) != 0;
}

std::span<const float> FeatureStore::vector_for(const std::string& item_id) const {
    auto it = index_.find(item_id);
    if (it == index_.end()) {
        throw std::out_of_range("feature store " + dir_.string() + ": no item '" + item_id + "'");
    }
    const auto dim = static_cast<std::size_t>(output_dim_);
    return {payload_.data() + it->second * dim, dim};
}

} // namespace fvqa
