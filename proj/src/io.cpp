#include "dynamite/io.hpp"

#include <fstream>
#include <iterator>

namespace dynamite::io {

namespace {

constexpr std::size_t kMagicSize = 8;

std::string pad_magic(std::string_view magic) {
    std::string m(magic.substr(0, kMagicSize));
    m.resize(kMagicSize, '\0');
    return m;
}

}  // namespace

BinaryWriter::BinaryWriter(std::string_view magic, std::uint32_t version) {
    const auto m = pad_magic(magic);
    buffer_.insert(buffer_.end(), m.begin(), m.end());
    put(version);
}

void BinaryWriter::put_string(std::string_view s) {
    put(static_cast<std::uint64_t>(s.size()));
    buffer_.insert(buffer_.end(), s.begin(), s.end());
}

void BinaryWriter::put_doubles(const double* data, std::size_t count) {
    const auto* p = reinterpret_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + count * sizeof(double));
}

void BinaryWriter::put_bytes(const std::vector<char>& bytes) {
    put(static_cast<std::uint64_t>(bytes.size()));
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

void BinaryWriter::save(const std::filesystem::path& path) const {
    write_file(path, std::string_view(buffer_.data(), buffer_.size()));
}

BinaryReader::BinaryReader(std::vector<char> bytes, std::string_view magic,
                           std::uint32_t expected_version, std::string what)
    : bytes_(std::move(bytes)), what_(std::move(what)) {
    const auto m = pad_magic(magic);
    if (bytes_.size() < kMagicSize + sizeof(std::uint32_t) ||
        std::string(bytes_.data(), kMagicSize) != m) {
        throw ArtifactError(what_ + ": not a " + std::string(magic) + " container");
    }
    pos_ = kMagicSize;
    const auto version = get<std::uint32_t>();
    if (version != expected_version) {
        throw ArtifactError(what_ + ": format version " + std::to_string(version) +
                            " does not match supported version " +
                            std::to_string(expected_version));
    }
}

BinaryReader BinaryReader::open(const std::filesystem::path& path, std::string_view magic,
                                std::uint32_t expected_version) {
    return BinaryReader(read_file(path), magic, expected_version, path.string());
}

std::string BinaryReader::get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
}

void BinaryReader::get_doubles(double* out, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(out, bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
}

std::vector<char> BinaryReader::get_bytes() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::vector<char> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                          bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
}

void BinaryReader::expect_end() const {
    if (!at_end()) throw ArtifactError(what_ + ": trailing bytes after payload");
}

void BinaryReader::need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw ArtifactError(what_ + ": truncated file");
}

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ArtifactError("write failed for " + path.string());
}

}  // namespace dynamite::io
