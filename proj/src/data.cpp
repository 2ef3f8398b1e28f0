#include "repsim/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>

#include "repsim/container.hpp"
#include "repsim/error.hpp"
#include "repsim/rng.hpp"

namespace repsim {
namespace {

static_assert(std::endian::native == std::endian::little, "RSDS fields are read in host order");

constexpr char kMagic[4] = {'R', 'S', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.append(raw, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos, const char* field) {
  if (pos + sizeof(T) > bytes.size()) {
    throw FormatError(std::string("RSDS truncated in header field '") + field + "' at byte " + std::to_string(pos));
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

void validate_header(const RsdsHeader& h) {
  if (h.channels != 3) throw FormatError("RSDS: expected C=3, got " + std::to_string(h.channels));
  if (h.height == 0 || h.width == 0) throw FormatError("RSDS: zero image extent");
  if (h.num_classes == 0 || h.num_classes > 256) {
    throw FormatError("RSDS: class count " + std::to_string(h.num_classes) + " outside [1, 256]");
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (!std::isfinite(h.mean[c]) || !std::isfinite(h.std[c]) || h.std[c] <= 0.0) {
      throw FormatError("RSDS: channel " + std::to_string(c) + " statistics must be finite with std > 0");
    }
  }
}

}  // namespace

std::string encode_rsds(const RawDataset& raw) {
  const RsdsHeader& h = raw.header;
  validate_header(h);
  if (raw.labels.size() != h.count || raw.pixels.size() != h.count * h.record_pixels()) {
    throw FormatError("RSDS encode: payload sizes do not match header count " + std::to_string(h.count));
  }
  std::string out;
  out.reserve(kRsdsHeaderBytes + h.count * (1 + h.record_pixels()));
  out.append(kMagic, 4);
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, h.count);
  put<std::uint32_t>(out, h.channels);
  put<std::uint32_t>(out, h.height);
  put<std::uint32_t>(out, h.width);
  put<std::uint32_t>(out, h.num_classes);
  for (double m : h.mean) put<double>(out, m);
  for (double s : h.std) put<double>(out, s);
  const std::size_t rp = h.record_pixels();
  for (std::size_t i = 0; i < h.count; ++i) {
    if (raw.labels[i] >= h.num_classes) {
      throw FormatError("RSDS encode: record " + std::to_string(i) + " has label " + std::to_string(raw.labels[i]));
    }
    out.push_back(static_cast<char>(raw.labels[i]));
    out.append(reinterpret_cast<const char*>(raw.pixels.data() + i * rp), rp);
  }
  return out;
}

RawDataset decode_rsds(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("RSDS: bad magic at byte 0 (expected \"RSDS\")");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint16_t>(bytes, pos, "version");
  if (version != kVersion) {
    throw FormatError("RSDS: unsupported version " + std::to_string(version) + " at byte 4");
  }
  RawDataset raw;
  RsdsHeader& h = raw.header;
  h.count = take<std::uint32_t>(bytes, pos, "N");
  h.channels = take<std::uint32_t>(bytes, pos, "C");
  h.height = take<std::uint32_t>(bytes, pos, "H");
  h.width = take<std::uint32_t>(bytes, pos, "W");
  h.num_classes = take<std::uint32_t>(bytes, pos, "D");
  for (double& m : h.mean) m = take<double>(bytes, pos, "mean");
  for (double& s : h.std) s = take<double>(bytes, pos, "std");
  validate_header(h);

  const std::size_t rp = h.record_pixels();
  const std::size_t record = 1 + rp;
  const std::size_t expected = kRsdsHeaderBytes + std::size_t{h.count} * record;
  if (bytes.size() < expected) {
    const std::size_t complete = (bytes.size() - kRsdsHeaderBytes) / record;
    throw FormatError("RSDS truncated: header declares " + std::to_string(h.count) + " records (" +
                      std::to_string(expected) + " bytes) but file has " + std::to_string(bytes.size()) +
                      " bytes; record " + std::to_string(complete) + " at byte " +
                      std::to_string(kRsdsHeaderBytes + complete * record) + " is incomplete");
  }
  if (bytes.size() > expected) {
    throw FormatError("RSDS: " + std::to_string(bytes.size() - expected) + " trailing bytes after record " +
                      std::to_string(h.count));
  }
  raw.labels.resize(h.count);
  raw.pixels.resize(std::size_t{h.count} * rp);
  for (std::size_t i = 0; i < h.count; ++i) {
    const std::size_t offset = kRsdsHeaderBytes + i * record;
    const auto label = static_cast<std::uint8_t>(bytes[offset]);
    if (label >= h.num_classes) {
      throw FormatError("RSDS: record " + std::to_string(i) + " at byte " + std::to_string(offset) + " has label " +
                        std::to_string(label) + " >= D=" + std::to_string(h.num_classes));
    }
    raw.labels[i] = label;
    std::memcpy(raw.pixels.data() + i * rp, bytes.data() + offset + 1, rp);
  }
  return raw;
}

void write_rsds(const RawDataset& raw, const std::filesystem::path& path) {
  write_file_atomic(path, encode_rsds(raw));
}

std::pair<std::array<double, 3>, std::array<double, 3>> channel_statistics(const RawDataset& raw) {
  const RsdsHeader& h = raw.header;
  const std::size_t plane = std::size_t{h.height} * h.width;
  std::array<double, 3> mean{}, stdev{};
  const double count = static_cast<double>(h.count) * static_cast<double>(plane);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < h.count; ++i) {
      const std::uint8_t* p = raw.pixels.data() + i * h.record_pixels() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k] / 255.0;
    }
    mean[c] = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < h.count; ++i) {
      const std::uint8_t* p = raw.pixels.data() + i * h.record_pixels() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] / 255.0 - mean[c];
        sq += d * d;
      }
    }
    stdev[c] = std::sqrt(sq / count);
  }
  return {mean, stdev};
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("gather: empty index set");
  const std::size_t rp = images.size() / size();
  Tensor out({indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ShapeError("gather: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(images.data() + indices[i] * rp, rp, out.data() + i * rp);
  }
  return out;
}

nn::Labels Dataset::gather_labels(std::span<const std::size_t> indices) const {
  nn::Labels out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_tag) const {
  Dataset out;
  out.name = name;
  out.split = std::move(split_tag);
  out.num_classes = num_classes;
  out.images = gather(indices);
  out.labels = gather_labels(indices);
  out.header_sha256 = header_sha256;
  return out;
}

Dataset decode_dataset(const RawDataset& raw, std::string name, std::string split) {
  const RsdsHeader& h = raw.header;
  if (h.count == 0) throw FormatError("RSDS: dataset '" + name + "' has no records");
  Dataset ds;
  ds.name = std::move(name);
  ds.split = std::move(split);
  ds.num_classes = h.num_classes;
  ds.images = Tensor({h.count, h.channels, h.height, h.width});
  const std::size_t plane = std::size_t{h.height} * h.width;
  for (std::size_t i = 0; i < h.count; ++i) {
    for (std::size_t c = 0; c < h.channels; ++c) {
      const std::size_t base = i * h.record_pixels() + c * plane;
      const double mean = h.mean[c];
      const double inv_std = 1.0 / h.std[c];
      for (std::size_t k = 0; k < plane; ++k) {
        ds.images[base + k] = (raw.pixels[base + k] / 255.0 - mean) * inv_std;
      }
    }
  }
  ds.labels.assign(raw.labels.begin(), raw.labels.end());
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const std::string& expected_name, const std::string& split) {
  if (!std::filesystem::exists(path)) throw Error("dataset file not found: " + path.string());
  const std::string bytes = read_file(path);
  Dataset ds;
  try {
    ds = decode_dataset(decode_rsds(bytes), expected_name, split);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  ds.header_sha256 = sha256_hex(std::string_view(bytes).substr(0, kRsdsHeaderBytes));
  return ds;
}

Dataset concat(const Dataset& first, const Dataset& second, std::string split_tag) {
  if (first.num_classes != second.num_classes) throw ShapeError("concat: class counts differ");
  const Shape& a = first.images.shape();
  const Shape& b = second.images.shape();
  if (a[1] != b[1] || a[2] != b[2] || a[3] != b[3]) {
    throw ShapeError("concat: image geometry " + to_string(a) + " vs " + to_string(b));
  }
  Dataset out;
  out.name = first.name;
  out.split = std::move(split_tag);
  out.num_classes = first.num_classes;
  std::vector<double> values(first.images.values().begin(), first.images.values().end());
  values.insert(values.end(), second.images.values().begin(), second.images.values().end());
  out.images = Tensor({a[0] + b[0], a[1], a[2], a[3]}, std::move(values));
  out.labels = first.labels;
  out.labels.insert(out.labels.end(), second.labels.begin(), second.labels.end());
  out.header_sha256 = first.header_sha256 + "+" + second.header_sha256;
  return out;
}

std::pair<Dataset, Dataset> take_split(const Dataset& dataset, std::size_t n_train, std::size_t n_test,
                                       std::uint64_t seed) {
  if (n_train + n_test > dataset.size()) {
    throw ShapeError("take_split: requested " + std::to_string(n_train) + " + " + std::to_string(n_test) +
                     " records but '" + dataset.name + "' has " + std::to_string(dataset.size()));
  }
  if (n_train == 0) throw ShapeError("take_split: n_train must be positive");
  Rng rng(derive_seed(seed, "split"));
  const std::vector<std::size_t> perm = rng.permutation(dataset.size());
  const std::span<const std::size_t> all(perm);
  std::pair<Dataset, Dataset> out;
  out.first = dataset.subset(all.subspan(0, n_train), dataset.split + ":train");
  if (n_test > 0) {
    out.second = dataset.subset(all.subspan(n_train, n_test), dataset.split + ":test");
  } else {
    out.second.name = dataset.name;
    out.second.split = dataset.split + ":test";
    out.second.num_classes = dataset.num_classes;
  }
  return out;
}

std::vector<BatchIndices> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch) {
  if (batch_size == 0) throw ShapeError("batches: batch_size must be at least 1");
  Rng rng(derive_seed(seed, "shuffle", epoch));
  const std::vector<std::size_t> perm = rng.permutation(dataset_size);
  std::vector<BatchIndices> out;
  for (std::size_t start = 0; start < dataset_size; start += batch_size) {
    const std::size_t end = std::min(dataset_size, start + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::string ProbeSet::identity() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i : indices) h = mix_seed(h ^ i);
  return source + "|seed=" + std::to_string(seed) + "|n=" + std::to_string(indices.size()) + "|" + std::to_string(h);
}

ProbeSet make_probe(const Dataset& dataset, std::size_t n_probe, std::uint64_t seed) {
  if (n_probe == 0 || n_probe > dataset.size()) {
    throw ShapeError("make_probe: n_probe " + std::to_string(n_probe) + " outside [1, " +
                     std::to_string(dataset.size()) + "]");
  }
  Rng rng(derive_seed(seed, "probe"));
  std::vector<std::size_t> perm = rng.permutation(dataset.size());
  perm.resize(n_probe);
  ProbeSet probe;
  probe.source = dataset.name + "/" + dataset.split;
  probe.seed = seed;
  probe.images = dataset.gather(perm);
  probe.indices = std::move(perm);
  return probe;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

}  // namespace repsim
