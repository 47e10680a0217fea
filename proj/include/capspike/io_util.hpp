#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capspike/errors.hpp"

namespace capspike {

// CRC32 (IEEE 802.3, reflected, poly 0xEDB88320).
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

// Little-endian byte buffer used to assemble the binary artifact formats
// (NNIR / SNNC / NGDS). Every file ends with a CRC32 of all preceding bytes.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void bytes(const void* p, std::size_t n);
    void text(const std::string& s) { bytes(s.data(), s.size()); }

    // Appends the CRC32 trailer and writes the whole buffer to `path`.
    void write_file_with_crc(const std::string& path) const;

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

// Reads a whole file, verifies and strips the CRC32 trailer, then exposes
// sequential little-endian reads. Out-of-range reads throw checksum_error
// (a short file is indistinguishable from a damaged one).
class ByteReader {
public:
    explicit ByteReader(const std::string& path);

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::string text(std::size_t n);
    void bytes(void* out, std::size_t n);

    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
    std::string path_;
};

// Text/CSV helpers shared by the report writers.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows);
std::string markdown_table(const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows);

// Fixed-precision float formatting ("%.*f").
std::string fmt_fixed(double v, int digits);

std::uint32_t crc32_of_file(const std::string& path);

} // namespace capspike
