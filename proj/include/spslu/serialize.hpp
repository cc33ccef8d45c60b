#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "spslu/model.hpp"

namespace spslu {

/// Model file "SPSLU" version 1:
///   8 bytes   magic "SPSLU\0\0\x01"
///   8 bytes   header length N, little-endian uint64
///   N bytes   UTF-8 JSON header: format, version, config, vocab, tensor
///             manifest (name, shape, byte offset, byte length), payload
///             byte count and CRC32
///   payload   little-endian float32 values in manifest order
inline constexpr std::array<char, 8> kModelMagic = {'S', 'P', 'S', 'L', 'U', 0, 0, 1};
inline constexpr int kModelFormatVersion = 1;

std::string serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(const std::string& bytes);

void save_model(const TrainedModel& model, const std::filesystem::path& path);
/// Throws DataError on bad magic/version, manifest or payload length
/// mismatch, truncation or checksum failure.
TrainedModel load_model(const std::filesystem::path& path);

/// Parsed JSON header of a model file (validates framing, not the payload).
nlohmann::json read_model_header(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::string& bytes, std::size_t offset = 0);

}  // namespace spslu
