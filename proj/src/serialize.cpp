#include "spslu/serialize.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "spslu/errors.hpp"

namespace spslu {

namespace fs = std::filesystem;

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

void put_f32_le(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

float get_f32_le(const std::string& in, std::size_t at) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) {
    u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return std::bit_cast<float>(u);
}

nlohmann::json vocab_json(const Vocabularies& v) {
  return {{"words", v.words.tokens()},
          {"slot_tags", v.slot_tags.tokens()},
          {"intents", v.intents.tokens()}};
}

Vocabulary vocab_from(const nlohmann::json& j) {
  Vocabulary v;
  for (const auto& t : j) v.add(t.get<std::string>());
  if (v.size() != j.size()) throw DataError("model file: duplicate vocabulary entry");
  return v;
}

struct Framed {
  nlohmann::json header;
  std::size_t payload_at = 0;
};

Framed parse_frame(const std::string& bytes) {
  if (bytes.size() < 16) throw DataError("model file truncated: no header");
  if (std::memcmp(bytes.data(), kModelMagic.data(), kModelMagic.size()) != 0) {
    throw DataError("not an SPSLU model file (bad magic)");
  }
  const std::uint64_t header_len = get_u64_le(bytes, 8);
  if (header_len > bytes.size() - 16) throw DataError("model file truncated: header");
  Framed f;
  try {
    f.header = nlohmann::json::parse(bytes.begin() + 16,
                                     bytes.begin() + 16 + static_cast<long>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model header is not valid JSON: ") + e.what());
  }
  if (f.header.value("format", "") != "SPSLU" ||
      f.header.value("version", -1) != kModelFormatVersion) {
    throw DataError("unsupported model format/version");
  }
  f.payload_at = 16 + header_len;
  return f;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint32_t crc32_of(const std::string& bytes, std::size_t offset) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data() + offset);
  std::size_t left = bytes.size() - offset;
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string serialize_model(const TrainedModel& model) {
  const auto& params = model.net.params();
  std::string payload;
  payload.reserve(params.total_elements() * 4);
  nlohmann::json manifest = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.at(i);
    const std::size_t offset = payload.size();
    for (float v : p.tensor.data) put_f32_le(payload, v);
    manifest.push_back({{"name", p.name},
                        {"shape", p.tensor.shape},
                        {"offset", offset},
                        {"length", payload.size() - offset}});
  }
  nlohmann::json header = {
      {"format", "SPSLU"},
      {"version", kModelFormatVersion},
      {"config", model.config.to_json()},
      {"vocab", vocab_json(model.vocabs)},
      {"tensors", manifest},
      {"payload_bytes", payload.size()},
      {"payload_crc32", crc32_of(payload)},
  };
  const std::string text = header.dump();
  std::string out(kModelMagic.begin(), kModelMagic.end());
  put_u64_le(out, text.size());
  out += text;
  out += payload;
  return out;
}

TrainedModel deserialize_model(const std::string& bytes) {
  const auto frame = parse_frame(bytes);
  const auto& h = frame.header;
  try {
    const std::size_t payload_bytes = h.at("payload_bytes");
    const std::size_t have = bytes.size() - frame.payload_at;
    if (have < payload_bytes) throw DataError("model file truncated: payload");
    if (have > payload_bytes) {
      throw DataError("payload length mismatch: header says " +
                      std::to_string(payload_bytes) + " bytes, file has " +
                      std::to_string(have));
    }
    if (crc32_of(bytes, frame.payload_at) != h.at("payload_crc32").get<std::uint32_t>()) {
      throw DataError("model payload checksum mismatch");
    }
    ModelConfig cfg = ModelConfig::from_json(h.at("config"));
    Vocabularies vocabs;
    vocabs.words = vocab_from(h.at("vocab").at("words"));
    vocabs.slot_tags = vocab_from(h.at("vocab").at("slot_tags"));
    vocabs.intents = vocab_from(h.at("vocab").at("intents"));
    TrainedModel model(cfg, vocabs);
    auto& params = model.net.params();
    const auto& manifest = h.at("tensors");
    if (manifest.size() != params.size()) {
      throw DataError("manifest lists " + std::to_string(manifest.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
    }
    std::size_t expect_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = manifest[i];
      auto& p = params.at(i);
      const std::string name = entry.at("name");
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const std::size_t offset = entry.at("offset");
      const std::size_t length = entry.at("length");
      if (name != p.name || shape != p.tensor.shape) {
        throw DataError("manifest entry " + std::to_string(i) + " (" + name +
                        ") does not match the model layout");
      }
      if (offset != expect_offset || length != p.tensor.size() * 4 ||
          offset + length > payload_bytes) {
        throw DataError("manifest/payload length mismatch for " + name);
      }
      for (std::size_t k = 0; k < p.tensor.size(); ++k) {
        p.tensor.data[k] = get_f32_le(bytes, frame.payload_at + offset + 4 * k);
      }
      if (!all_finite<float>(p.tensor.data)) {
        throw DataError("non-finite value in tensor " + name);
      }
      expect_offset += length;
    }
    if (expect_offset != payload_bytes) {
      throw DataError("manifest/payload length mismatch: manifest covers " +
                      std::to_string(expect_offset) + " bytes");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed model header: ") + e.what());
  }
}

void save_model(const TrainedModel& model, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed to write model file: " + path.string());
}

TrainedModel load_model(const fs::path& path) { return deserialize_model(read_file(path)); }

nlohmann::json read_model_header(const fs::path& path) {
  return parse_frame(read_file(path)).header;
}

}  // namespace spslu
