#include "ltc/binio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <zlib.h>

#include "ltc/error.hpp"

namespace ltc::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay safe on very large blobs.
    std::size_t offset = 0;
    constexpr std::size_t kChunk = 1u << 30;
    while (offset < bytes.size()) {
        const std::size_t n = std::min(kChunk, bytes.size() - offset);
        crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(n));
        offset += n;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string crc32_hex(std::uint32_t crc) {
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << crc;
    return os.str();
}

static std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> bytes(size);
    if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
        throw IoError("short read on " + path.string());
    return bytes;
}

std::string file_crc32_hex(const std::filesystem::path& path) {
    return crc32_hex(crc32(slurp(path)));
}

std::vector<std::uint8_t> encode_f32le(std::span<const float> values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        out[4 * i + 0] = static_cast<std::uint8_t>(bits);
        out[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
        out[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
        out[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
    }
    return out;
}

std::vector<float> decode_f32le(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % 4 != 0) throw CorruptStoreError("float32 blob size is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::uint32_t bits = std::uint32_t{bytes[4 * i]} | (std::uint32_t{bytes[4 * i + 1]} << 8) |
                                   (std::uint32_t{bytes[4 * i + 2]} << 16) |
                                   (std::uint32_t{bytes[4 * i + 3]} << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

std::string write_f32(const std::filesystem::path& path, std::span<const float> values) {
    const auto bytes = encode_f32le(values);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed on " + path.string());
    return crc32_hex(crc32(bytes));
}

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count,
                            const std::string& expected_crc) {
    if (!std::filesystem::exists(path)) throw IoError("missing tensor file " + path.string());
    const auto bytes = slurp(path);
    if (bytes.size() != expected_count * 4)
        throw CorruptStoreError(path.filename().string() + ": expected " + std::to_string(expected_count * 4) +
                                " bytes, found " + std::to_string(bytes.size()));
    if (!expected_crc.empty() && crc32_hex(crc32(bytes)) != expected_crc)
        throw CorruptStoreError(path.filename().string() + ": checksum mismatch");
    return decode_f32le(bytes);
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed on " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw CorruptStoreError(path.string() + ": malformed JSON (" + e.what() + ")");
    }
}

json tensor_entry(const std::string& file, const std::vector<std::size_t>& shape) {
    return json{{"file", file}, {"shape", shape}, {"dtype", "float32"}, {"byte_order", "little"}};
}

std::size_t shape_count(const json& entry) {
    std::size_t n = 1;
    for (const auto& d : entry.at("shape")) n *= d.get<std::size_t>();
    return n;
}

void check_tensor_entry(const json& entry, const std::string& field) {
    if (entry.value("dtype", "") != "float32")
        throw CorruptStoreError(field + ": unsupported dtype '" + entry.value("dtype", "") + "'");
    if (entry.value("byte_order", "") != "little")
        throw CorruptStoreError(field + ": unsupported byte order '" + entry.value("byte_order", "") + "'");
}

} // namespace ltc::binio
