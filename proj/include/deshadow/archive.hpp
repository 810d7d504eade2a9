#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

#include "deshadow/tensor.hpp"

namespace deshadow {

inline constexpr int kArchiveFormatVersion = 1;

class ArchiveError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Self-describing weight file: a JSON header (with `format_version`, free-form metadata and a
/// tensor table) followed by the raw little-endian doubles of every tensor.
struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;
};

/// Written to a temporary file and renamed into place, so a crash never leaves a torn archive.
void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace deshadow
