#include "psl/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>

namespace psl {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'L', '1'};

template <class T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t offset) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& detail) {
  throw std::runtime_error("checkpoint " + path.string() + ": " + detail);
}

void need(const std::filesystem::path& path, const std::string& bytes, std::size_t offset, std::size_t count,
          const char* what) {
  if (offset > bytes.size() || count > bytes.size() - offset) {
    corrupt(path, std::string("truncated ") + what + ": need " + std::to_string(count) + " bytes at offset " +
                      std::to_string(offset) + ", file has " + std::to_string(bytes.size()));
  }
}

nlohmann::json metadata_json(const TrainingMetadata& m) {
  return {{"epsilon_int", m.epsilon_int},
          {"epoch", m.epoch},
          {"seed", m.seed},
          {"selection_criterion", m.selection_criterion},
          {"extra", m.extra}};
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const Network& net = checkpoint.network;
  nlohmann::json directory = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, tensor] : net.params()) {
    directory.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", payload.size()}});
    for (Index i = 0; i < tensor.size(); ++i) put_le<double>(payload, tensor[i]);
  }
  const nlohmann::json header = {{"format_version", kCheckpointVersion},
                                 {"topology", net.topology()},
                                 {"metadata", metadata_json(checkpoint.metadata)},
                                 {"tensors", std::move(directory)},
                                 {"payload_bytes", payload.size()}};
  const std::string header_text = header.dump();

  std::string bytes(kMagic, sizeof kMagic);
  put_le<std::uint64_t>(bytes, header_text.size());
  bytes += header_text;
  bytes += payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  need(path, bytes, 0, sizeof kMagic, "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) corrupt(path, "bad magic at offset 0");
  need(path, bytes, 4, 8, "header length");
  const auto header_len = get_le<std::uint64_t>(bytes, 4);
  need(path, bytes, 12, header_len, "header");
  const std::size_t payload_start = 12 + header_len;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("unparseable header at offset 12: ") + e.what());
  }

  try {
    const auto version = header.at("format_version").get<std::uint32_t>();
    if (version != kCheckpointVersion) {
      corrupt(path, "format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    Network net = from_topology(header.at("topology"));
    const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
    need(path, bytes, payload_start, payload_bytes, "payload");
    if (bytes.size() != payload_start + payload_bytes) {
      corrupt(path, "trailing bytes after payload at offset " + std::to_string(payload_start + payload_bytes));
    }

    std::set<std::string> seen;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      auto it = net.params().find(name);
      if (it == net.params().end()) corrupt(path, "tensor '" + name + "' is not part of the topology");
      if (it->second.shape() != shape) {
        corrupt(path, "tensor '" + name + "' has shape " + shape_string(shape) + ", topology expects " +
                          shape_string(it->second.shape()));
      }
      const std::size_t count = static_cast<std::size_t>(numel(shape));
      if (offset > payload_bytes || count * 8 > payload_bytes - offset) {
        corrupt(path, "tensor '" + name + "' extends past the payload (offset " + std::to_string(offset) + ")");
      }
      for (std::size_t i = 0; i < count; ++i) {
        it->second[static_cast<Index>(i)] = get_le<double>(bytes, payload_start + offset + 8 * i);
      }
      if (!seen.insert(name).second) corrupt(path, "tensor '" + name + "' appears twice in the directory");
    }
    if (seen.size() != net.params().size()) corrupt(path, "tensor directory does not cover every parameter");

    const auto& meta = header.at("metadata");
    TrainingMetadata metadata{meta.at("epsilon_int").get<int>(), meta.at("epoch").get<int>(),
                              meta.at("seed").get<std::uint64_t>(),
                              meta.at("selection_criterion").get<std::string>(), meta.at("extra")};
    return Checkpoint{std::move(net), std::move(metadata)};
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const nlohmann::json& expected_topology) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.network.topology() != expected_topology) {
    corrupt(path, "topology mismatch: file has " + ckpt.network.topology().dump() + ", expected " +
                      expected_topology.dump());
  }
  return ckpt;
}

}  // namespace psl
