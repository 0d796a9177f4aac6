#include "exitlab/workbench/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "exitlab/errors.hpp"
#include "exitlab/workbench/config.hpp"

namespace exitlab {

namespace {

constexpr std::size_t kMagicSize = 8;

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}

std::uint32_t crc_of(const std::string& bytes, std::size_t len) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(len)));
}

}  // namespace

std::string encode_checkpoint(const MultiExitModel& model, const CheckpointMeta& meta) {
  Json manifest = Json::array();
  for (const auto& p : model.parameters()) manifest.push_back({{"name", p.name}, {"shape", p.tensor->shape()}});
  const Json header = {
      {"format_version", kCheckpointVersion},
      {"config", to_json(model.config())},
      {"meta",
       {{"regime", meta.regime},
        {"scaling", meta.scaling},
        {"seed", meta.seed},
        {"dataset", meta.dataset},
        {"run_config", meta.run_config}}},
      {"parameters", manifest},
  };
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, kMagicSize);
  put_le(out, text.size(), 8);
  out += text;
  for (const auto& p : model.parameters()) {
    for (double v : p.tensor->data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  put_le(out, crc_of(out, out.size()), 4);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicSize + 8 + 4) throw CorruptFileError("checkpoint is truncated");
  const std::size_t body = bytes.size() - 4;
  if (crc_of(bytes, body) != static_cast<std::uint32_t>(get_le(bytes, body, 4))) {
    throw CorruptFileError("checkpoint checksum mismatch");
  }
  if (bytes.compare(0, 6, kCheckpointMagic, 6) != 0) throw CorruptFileError("not a checkpoint (bad magic)");
  if (bytes.compare(0, kMagicSize, kCheckpointMagic, kMagicSize) != 0) {
    throw VersionMismatchError("unsupported checkpoint version '" + bytes.substr(0, kMagicSize) + "'");
  }
  const std::uint64_t header_len = get_le(bytes, kMagicSize, 8);
  const std::size_t data_start = kMagicSize + 8 + header_len;
  if (header_len > body || data_start > body) throw CorruptFileError("checkpoint header length out of range");

  Json header;
  try {
    header = Json::parse(bytes.substr(kMagicSize + 8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw VersionMismatchError("unsupported checkpoint format_version " + header.at("format_version").dump());
    }
    MultiExitModel model(model_config_from_json(header.at("config")));
    const Json& manifest = header.at("parameters");
    auto params = model.parameters();
    if (manifest.size() != params.size()) throw CorruptFileError("parameter manifest does not match config");
    std::size_t pos = data_start;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (manifest[i].at("name").get<std::string>() != params[i].name ||
          manifest[i].at("shape").get<Shape>() != params[i].tensor->shape()) {
        throw CorruptFileError("parameter manifest entry '" + params[i].name + "' does not match config");
      }
      for (double& v : params[i].tensor->data()) {
        if (pos + 8 > body) throw CorruptFileError("checkpoint parameter data is truncated");
        v = std::bit_cast<double>(get_le(bytes, pos, 8));
        pos += 8;
      }
    }
    if (pos != body) throw CorruptFileError("checkpoint has trailing bytes");
    const Json& m = header.at("meta");
    CheckpointMeta meta{m.at("regime").get<std::string>(), m.at("scaling").get<std::string>(),
                        m.at("seed").get<std::uint64_t>(), m.at("dataset").get<std::string>(),
                        m.value("run_config", std::string())};
    return {std::move(model), std::move(meta)};
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("checkpoint header is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

void save_checkpoint(const MultiExitModel& model, const CheckpointMeta& meta, const std::string& path) {
  const std::string bytes = encode_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace exitlab
