#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "strm/config.hpp"
#include "strm/model.hpp"

namespace strm {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (pos + sizeof(U) > bytes.size()) throw std::runtime_error("checkpoint truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[pos + i]) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model, std::uint64_t step,
                                               const std::string& config_hash) {
  nlohmann::ordered_json meta = model.config();
  if (!config_hash.empty()) meta["config_hash"] = config_hash;
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  auto params = model.params();
  const ModelConfig cfg = model.config();
  put_le(out, static_cast<std::uint64_t>(params.size(cfg)));
  put_le(out, step);
  params.visit(cfg, [&](const std::string&, nn::Mat<float>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put_le(out, m.data()[i]);
  });
  return out;
}

Model<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes, CheckpointInfo* info) {
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto text_len = get_le<std::uint32_t>(bytes, pos);
  if (pos + text_len > bytes.size()) throw std::runtime_error("checkpoint truncated");
  const std::string text(reinterpret_cast<const char*>(bytes.data() + pos), text_len);
  pos += text_len;
  const auto meta = nlohmann::ordered_json::parse(text);
  ModelConfig cfg;
  from_json(meta, cfg);
  cfg.validate();

  const auto count = get_le<std::uint64_t>(bytes, pos);
  const auto step = get_le<std::uint64_t>(bytes, pos);
  ModelParams<float> params(cfg);
  if (count != params.size(cfg)) {
    throw std::runtime_error("checkpoint parameter count " + std::to_string(count) + " does not match config (" +
                             std::to_string(params.size(cfg)) + ")");
  }
  if (bytes.size() - pos != count * 4) throw std::runtime_error("checkpoint parameter block has the wrong size");
  params.visit(cfg, [&](const std::string&, nn::Mat<float>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_le<float>(bytes, pos);
  });
  if (info != nullptr) {
    info->config = cfg;
    info->training_step = step;
    info->config_hash = meta.value("config_hash", std::string());
  }
  return Model<float>(cfg, std::move(params));
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, std::uint64_t step,
                     const std::string& config_hash) {
  const auto bytes = serialize_checkpoint(model, step, config_hash);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Model<float> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, info);
}

}  // namespace strm
