#pragma once

// Packed little-endian float32 blobs with CRC-32 checksums, plus the small
// JSON helpers every manifest in the toolkit shares.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ltc::binio {

using json = nlohmann::json;

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::string crc32_hex(std::uint32_t crc);
/// CRC-32 of a whole file, hex encoded. Throws IoError if unreadable.
std::string file_crc32_hex(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_f32le(std::span<const float> values);
std::vector<float> decode_f32le(std::span<const std::uint8_t> bytes);

/// Writes `values` as packed float32 LE; returns the hex CRC-32 of the bytes written.
std::string write_f32(const std::filesystem::path& path, std::span<const float> values);

/// Reads exactly `expected_count` floats. Size mismatch or checksum mismatch
/// (when `expected_crc` is non-empty) raises CorruptStoreError.
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count,
                            const std::string& expected_crc = {});

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

/// Describes one tensor blob inside a manifest.
json tensor_entry(const std::string& file, const std::vector<std::size_t>& shape);
std::size_t shape_count(const json& entry);
/// Checks the dtype/byte_order fields of a tensor entry.
void check_tensor_entry(const json& entry, const std::string& field);

} // namespace ltc::binio
