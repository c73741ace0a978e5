#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fvqa {

inline constexpr std::string_view kPipelineVersion = "0.1.0";

/// Input artifact could not be read or parsed.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input artifact was readable but violates a contract (bad answer,
/// unknown question type, inconsistent split file, ...).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string_view trim(std::string_view s);

/// "9:16"-style minutes:seconds. Minutes unpadded, seconds two digits.
std::string format_mmss(double seconds);

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a temp file in the same directory and renames, so readers
/// never observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

void warn(const std::string& message);

} // namespace fvqa
