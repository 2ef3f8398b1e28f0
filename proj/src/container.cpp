#include "repsim/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "repsim/error.hpp"

namespace repsim {
namespace {

static_assert(std::endian::native == std::endian::little, "container payloads are written in host order");

constexpr char kMagic[4] = {'R', 'S', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.append(raw, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos, const char* what) {
  if (pos + sizeof(T) > bytes.size()) {
    throw FormatError(std::string("container truncated while reading ") + what + " at byte " + std::to_string(pos));
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

const Tensor& TensorContainer::get(std::string_view name) const {
  for (const auto& [key, tensor] : tensors) {
    if (key == name) return tensor;
  }
  throw FormatError("container has no tensor named '" + std::string(name) + "'");
}

std::string encode_container(const TensorContainer& container) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, tensor] : container.tensors) {
    manifest.push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}});
    offset += tensor.size() * sizeof(double);
  }
  const std::string header = nlohmann::json{{"meta", container.meta}, {"tensors", manifest}}.dump();

  std::string out;
  out.reserve(16 + header.size() + offset);
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& [name, tensor] : container.tensors) {
    out.append(reinterpret_cast<const char*>(tensor.data()), tensor.size() * sizeof(double));
  }
  return out;
}

TensorContainer decode_container(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("container: bad magic (expected \"RSTC\")");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos, "version");
  if (version != kVersion) throw FormatError("container: unsupported version " + std::to_string(version));
  const auto header_bytes = take<std::uint64_t>(bytes, pos, "header length");
  if (pos + header_bytes > bytes.size()) {
    throw FormatError("container truncated: header needs " + std::to_string(header_bytes) + " bytes at byte " +
                      std::to_string(pos));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_bytes));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: malformed header: ") + e.what());
  }
  pos += header_bytes;
  const std::string_view payload = bytes.substr(pos);

  TensorContainer container;
  container.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = element_count(shape);
    if (offset + count * sizeof(double) > payload.size()) {
      throw FormatError("container truncated: tensor '" + name + "' needs bytes up to " +
                        std::to_string(offset + count * sizeof(double)) + " of a " +
                        std::to_string(payload.size()) + "-byte payload");
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), payload.data() + offset, count * sizeof(double));
    container.tensors.emplace_back(name, Tensor(shape, std::move(values)));
  }
  return container;
}

void write_container(const TensorContainer& container, const std::filesystem::path& path) {
  write_file_atomic(path, encode_container(container));
}

TensorContainer read_container(const std::filesystem::path& path) { return decode_container(read_file(path)); }

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + temp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + temp.string());
  }
  std::filesystem::rename(temp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return std::move(buffer).str();
}

}  // namespace repsim
