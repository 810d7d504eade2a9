#include "deshadow/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace deshadow {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'H', 'A', 'R', 'C', 'H', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header;
    header["format_version"] = kArchiveFormatVersion;
    header["meta"] = archive.meta;
    header["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : archive.tensors) {
        const Shape& s = t.shape();
        header["tensors"].push_back(
            {{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", t.size()}});
        offset += t.size();
    }
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArchiveError("cannot open " + tmp.string() + " for writing");
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof(kMagic));
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : archive.tensors) {
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
        if (!out) throw ArchiveError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open archive " + path.string());
    char magic[sizeof(kMagic)];
    std::uint64_t len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ArchiveError(path.string() + " is not a weight archive");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ArchiveError(path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(path.string() + ": corrupt header: " + e.what());
    }
    const int version = header.value("format_version", 0);
    if (version != kArchiveFormatVersion) {
        throw ArchiveError(path.string() + ": unsupported format_version " + std::to_string(version));
    }

    Archive archive;
    archive.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        const auto dims = entry.at("shape").get<std::vector<int>>();
        if (dims.size() != 4) throw ArchiveError(path.string() + ": bad tensor shape");
        const Shape shape{dims[0], dims[1], dims[2], dims[3]};
        const auto count = entry.at("count").get<std::size_t>();
        if (count != shape.numel()) throw ArchiveError(path.string() + ": tensor size mismatch");
        std::vector<double> values(count);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw ArchiveError(path.string() + ": truncated tensor data");
        archive.tensors.emplace(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
    }
    return archive;
}

}  // namespace deshadow
