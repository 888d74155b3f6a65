#pragma once

#include "dynamite/common.hpp"

#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

namespace dynamite::io {

/// Little binary container: a 8-byte magic tag, a u32 format version, then
/// whatever the owner writes. Only trivially copyable values go through
/// put/get; the host is assumed little-endian.
class BinaryWriter {
public:
    BinaryWriter(std::string_view magic, std::uint32_t version);

    template <typename T>
    void put(const T& value) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&value);
        buffer_.insert(buffer_.end(), p, p + sizeof(T));
    }

    void put_string(std::string_view s);
    void put_doubles(const double* data, std::size_t count);
    void put_bytes(const std::vector<char>& bytes);

    [[nodiscard]] const std::vector<char>& bytes() const { return buffer_; }
    void save(const std::filesystem::path& path) const;

private:
    std::vector<char> buffer_;
};

class BinaryReader {
public:
    /// Throws ArtifactError when the magic differs or the version is not
    /// `expected_version`; the message names both versions.
    BinaryReader(std::vector<char> bytes, std::string_view magic, std::uint32_t expected_version,
                 std::string what);

    static BinaryReader open(const std::filesystem::path& path, std::string_view magic,
                             std::uint32_t expected_version);

    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        T value;
        need(sizeof(T));
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string get_string();
    void get_doubles(double* out, std::size_t count);
    std::vector<char> get_bytes();

    [[nodiscard]] bool at_end() const { return pos_ == bytes_.size(); }
    void expect_end() const;

private:
    void need(std::size_t n) const;

    std::vector<char> bytes_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace dynamite::io
