#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace fvqa {

/// Streaming SHA-256 (OpenSSL EVP underneath).
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t size);
    void update(std::string_view bytes) { update(bytes.data(), bytes.size()); }

    /// Finalizes and returns the lowercase hex digest. Call once.
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(std::string_view bytes);

} // namespace fvqa
