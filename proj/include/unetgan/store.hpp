#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unetgan/metrics.hpp"
#include "unetgan/nets.hpp"

namespace unetgan {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Raw little-endian helpers

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(const std::string& in, std::size_t off) { return std::bit_cast<float>(get_u32(in, off)); }

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TEN1 tensor files

template <typename S>
std::string encode_tensor(const Tensor<S>& t) {
  std::string out = "TEN1";
  out.reserve(8 + 4 * t.rank() + 4 * t.numel());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (S v : t.values()) detail::put_f32(out, static_cast<float>(v));
  return out;
}

/// Decodes one TEN1 blob starting at `offset`; advances offset past it.
/// `origin` names the source in error messages.
inline Tensor<float> decode_tensor(const std::string& bytes, std::size_t& offset, const std::string& origin) {
  const std::size_t start = offset;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() < offset + n) {
      throw FormatError(origin + ": truncated " + what + " at offset " + std::to_string(offset) + " (file has " +
                        std::to_string(bytes.size()) + " bytes)");
    }
  };
  need(4, "magic");
  if (bytes.compare(offset, 4, "TEN1") != 0) throw FormatError(origin + ": bad magic at offset " + std::to_string(offset));
  offset += 4;
  need(4, "rank");
  const std::uint32_t rank = detail::get_u32(bytes, offset);
  offset += 4;
  if (rank > 8) throw FormatError(origin + ": implausible rank " + std::to_string(rank) + " at offset " + std::to_string(start + 4));
  need(4 * std::size_t(rank), "dims");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = detail::get_u32(bytes, offset);
    count *= shape[i];
    if (count > (std::uint64_t(1) << 32)) {
      throw FormatError(origin + ": dimension product overflows at offset " + std::to_string(offset));
    }
    offset += 4;
  }
  need(4 * count, "payload");
  std::vector<float> values(count);
  for (std::uint64_t i = 0; i < count; ++i) values[i] = detail::get_f32(bytes, offset + 4 * i);
  offset += 4 * count;
  return Tensor<float>(std::move(shape), std::move(values));
}

template <typename S>
void write_tensor(const fs::path& path, const Tensor<S>& t) {
  detail::write_file(path, encode_tensor(t));
}

inline Tensor<float> read_tensor(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t off = 0;
  Tensor<float> t = decode_tensor(bytes, off, path.string());
  if (off != bytes.size()) {
    throw FormatError(path.string() + ": file length " + std::to_string(bytes.size()) + " does not match header (expected " +
                      std::to_string(off) + ")");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct ManifestEntry {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::string label;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::string domain;
  std::string profile;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  fs::path root;  // directory holding manifest.json; not serialised

  std::size_t size() const { return entries.size(); }
  void sort() {
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  }
};

inline json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["domain"] = m.domain;
  j["profile"] = m.profile;
  j["seed"] = m.seed;
  j["samples"] = json::array();
  for (const auto& e : m.entries) j["samples"].push_back({{"id", e.id}, {"image", e.image}, {"label", e.label}});
  return j;
}

/// Writes root/manifest.json with entries sorted by id.
inline void write_manifest(DatasetManifest m) {
  m.sort();
  detail::write_file(m.root / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

inline DatasetManifest read_manifest(const fs::path& path_or_dir) {
  const fs::path path = fs::is_directory(path_or_dir) ? path_or_dir / "manifest.json" : path_or_dir;
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.domain = j.at("domain").get<std::string>();
    m.profile = j.value("profile", "");
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("samples"))
      m.entries.push_back({s.at("id").get<std::string>(), s.at("image").get<std::string>(), s.at("label").get<std::string>()});
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  m.root = path.parent_path();
  return m;
}

struct Sample {
  std::string id;
  std::string domain;
  Tensor<float> image;  // 1 x H x W
  LabelMap labels;
};

inline Sample load_sample(const DatasetManifest& m, std::size_t i) {
  const auto& e = m.entries.at(i);
  Tensor<float> image = read_tensor(m.root / e.image);
  const Tensor<float> lbl = read_tensor(m.root / e.label);
  if (image.rank() != 3 || image.dim(0) != 1) throw FormatError(e.image + ": expected a 1xHxW image, got " + to_string(image.shape()));
  if (lbl.rank() != 2 || lbl.dim(0) != image.dim(1) || lbl.dim(1) != image.dim(2)) {
    throw FormatError(e.label + ": labelmap shape " + to_string(lbl.shape()) + " does not match image");
  }
  std::vector<std::uint8_t> labels(lbl.numel());
  for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = static_cast<std::uint8_t>(std::lround(lbl[k]));
  return {e.id, m.domain, std::move(image), LabelMap(lbl.dim(0), lbl.dim(1), std::move(labels))};
}

inline std::vector<Sample> load_samples(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.push_back(load_sample(m, i));
  return out;
}

inline Tensor<float> labelmap_tensor(const LabelMap& l) {
  std::vector<float> v(l.labels.begin(), l.labels.end());
  return Tensor<float>({l.height, l.width}, std::move(v));
}

/// Writes one sample's image and labelmap next to the manifest and records it.
inline void add_sample(DatasetManifest& m, const std::string& id, const Tensor<float>& image, const LabelMap& labels) {
  const std::string img = id + "_img.ten", lbl = id + "_lbl.ten";
  write_tensor(m.root / img, image);
  write_tensor(m.root / lbl, labelmap_tensor(labels));
  m.entries.push_back({id, img, lbl});
}

/// Seeded shuffle of the ids, cut at the rounded cumulative fractions.
inline std::vector<DatasetManifest> split_dataset(const DatasetManifest& m, const std::vector<double>& fractions,
                                                  std::uint64_t seed) {
  if (m.entries.empty()) throw DomainError("split_dataset: empty manifest");
  double total = 0;
  for (double f : fractions) {
    if (f < 0) throw DomainError("split_dataset: negative fraction");
    total += f;
  }
  if (fractions.empty() || std::abs(total - 1.0) > 1e-9) throw DomainError("split_dataset: fractions must sum to 1");
  DatasetManifest sorted = m;
  sorted.sort();
  std::vector<std::size_t> order(sorted.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<DatasetManifest> parts;
  double cum = 0;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    cum += fractions[k];
    const std::size_t end =
        k + 1 == fractions.size() ? order.size() : static_cast<std::size_t>(std::llround(cum * double(order.size())));
    DatasetManifest part = sorted;
    part.entries.clear();
    for (std::size_t i = begin; i < end; ++i) part.entries.push_back(sorted.entries[order[i]]);
    part.sort();
    parts.push_back(std::move(part));
    begin = end;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// PGM exports

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); }

inline std::string encode_pgm(std::size_t height, std::size_t width, const std::vector<std::uint8_t>& pixels) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

/// Binary 8-bit PGM of the last two dims of `image`.
template <typename S>
void export_pgm(const fs::path& path, const Tensor<S>& image) {
  if (image.rank() < 2 || image.numel() != image.dim(image.rank() - 2) * image.dim(image.rank() - 1)) {
    throw ShapeError("export_pgm: expected a single image, got " + to_string(image.shape()));
  }
  std::vector<std::uint8_t> px(image.numel());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(static_cast<double>(image[i]));
  detail::write_file(path, encode_pgm(image.dim(image.rank() - 2), image.dim(image.rank() - 1), px));
}

/// Pixels whose label differs from a 4-neighbour, restricted to foreground.
inline std::vector<bool> label_contours(const LabelMap& l) {
  std::vector<bool> edge(l.labels.size(), false);
  for (std::size_t y = 0; y < l.height; ++y)
    for (std::size_t x = 0; x < l.width; ++x) {
      const auto v = l.labels[y * l.width + x];
      if (v == 0) continue;
      const bool differs = (y > 0 && l.labels[(y - 1) * l.width + x] != v) ||
                           (y + 1 < l.height && l.labels[(y + 1) * l.width + x] != v) ||
                           (x > 0 && l.labels[y * l.width + x - 1] != v) || (x + 1 < l.width && l.labels[y * l.width + x + 1] != v);
      edge[y * l.width + x] = differs;
    }
  return edge;
}

template <typename S>
void export_overlay(const fs::path& path, const Tensor<S>& image, const LabelMap& labels) {
  if (image.numel() != labels.labels.size()) throw ShapeError("export_overlay: image and labelmap sizes differ");
  const auto edge = label_contours(labels);
  std::vector<std::uint8_t> px(image.numel());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = edge[i] ? 255 : to_byte(static_cast<double>(image[i]));
  detail::write_file(path, encode_pgm(labels.height, labels.width, px));
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void to_json(json& j, const UnetConfig& c) {
  j = json{{"base_channels", c.base_channels}, {"n_classes", c.n_classes}, {"taps", c.taps}};
}
inline void from_json(const json& j, UnetConfig& c) {
  j.at("base_channels").get_to(c.base_channels);
  j.at("n_classes").get_to(c.n_classes);
  j.at("taps").get_to(c.taps);
}
inline void to_json(json& j, const GeneratorConfig& c) {
  j = json{{"base_channels", c.base_channels}, {"residual_blocks", c.residual_blocks}};
}
inline void from_json(const json& j, GeneratorConfig& c) {
  j.at("base_channels").get_to(c.base_channels);
  j.at("residual_blocks").get_to(c.residual_blocks);
}
inline void to_json(json& j, const DiscriminatorConfig& c) { j = json{{"base_channels", c.base_channels}}; }
inline void from_json(const json& j, DiscriminatorConfig& c) { j.at("base_channels").get_to(c.base_channels); }

/// "UGCK", u32 version, u32 header length, JSON header, then per parameter a
/// u32-length-prefixed name and a TEN1 blob. Values are stored as f32.
template <typename Model>
std::string encode_checkpoint(const Model& model, std::uint64_t step = 0) {
  json header;
  header["kind"] = Model::kKind;
  header["version"] = kCheckpointVersion;
  header["config"] = model.config();
  header["seed"] = model.seed();
  header["step"] = step;
  header["parameters"] = json::array();
  for (const auto& p : model.params()) header["parameters"].push_back(p.name);
  const std::string h = header.dump();

  std::string out = "UGCK";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (const auto& p : model.params()) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    out += encode_tensor(p.value);
  }
  return out;
}

template <typename Model>
void save_checkpoint(const fs::path& path, const Model& model, std::uint64_t step = 0) {
  detail::write_file(path, encode_checkpoint(model, step));
}

struct CheckpointHeader {
  std::string kind;
  std::uint32_t version = 0;
  json config;
  std::uint64_t seed = 0, step = 0;
  std::vector<std::string> parameters;
};

namespace detail {
inline CheckpointHeader parse_checkpoint_header(const std::string& bytes, const std::string& origin, std::size_t& offset) {
  if (bytes.size() < 12) throw FormatError(origin + ": truncated checkpoint at offset " + std::to_string(bytes.size()));
  if (bytes.compare(0, 4, "UGCK") != 0) throw FormatError(origin + ": bad checkpoint magic at offset 0");
  CheckpointHeader h;
  h.version = get_u32(bytes, 4);
  if (h.version != kCheckpointVersion) {
    throw FormatError(origin + ": checkpoint version " + std::to_string(h.version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const std::uint32_t len = get_u32(bytes, 8);
  if (bytes.size() < 12 + std::size_t(len)) throw FormatError(origin + ": truncated checkpoint header at offset 12");
  try {
    const json j = json::parse(bytes.substr(12, len));
    h.kind = j.at("kind").get<std::string>();
    h.config = j.at("config");
    h.seed = j.at("seed").get<std::uint64_t>();
    h.step = j.at("step").get<std::uint64_t>();
    h.parameters = j.at("parameters").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(origin + ": malformed checkpoint header: " + e.what());
  }
  offset = 12 + len;
  return h;
}
}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const fs::path& path) {
  std::size_t off = 0;
  return detail::parse_checkpoint_header(detail::read_file(path), path.string(), off);
}

/// Rebuilds a model of type Model from a checkpoint. Throws FormatError on a
/// kind or version mismatch or when the parameter layout differs.
template <typename Model>
Model load_checkpoint(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  const std::string origin = path.string();
  std::size_t off = 0;
  const CheckpointHeader h = detail::parse_checkpoint_header(bytes, origin, off);
  if (h.kind != Model::kKind) {
    throw FormatError(origin + ": checkpoint holds a " + h.kind + ", expected a " + std::string(Model::kKind));
  }
  using Config = std::decay_t<decltype(std::declval<const Model&>().config())>;
  Config cfg;
  try {
    cfg = h.config.get<Config>();
  } catch (const json::exception& e) {
    throw FormatError(origin + ": bad model config: " + e.what());
  }
  Model model(cfg, h.seed);
  auto& params = model.params();
  if (params.size() != h.parameters.size()) throw FormatError(origin + ": parameter count does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (bytes.size() < off + 4) throw FormatError(origin + ": truncated at offset " + std::to_string(off));
    const std::uint32_t len = detail::get_u32(bytes, off);
    off += 4;
    if (bytes.size() < off + len) throw FormatError(origin + ": truncated name at offset " + std::to_string(off));
    const std::string name = bytes.substr(off, len);
    off += len;
    if (name != params[i].name) {
      throw FormatError(origin + ": parameter '" + name + "' at offset " + std::to_string(off - len) + ", expected '" +
                        params[i].name + "'");
    }
    const Tensor<float> t = decode_tensor(bytes, off, origin);
    if (t.shape() != params[i].value.shape()) throw FormatError(origin + ": shape mismatch for " + name);
    using S = std::decay_t<decltype(params[i].value[0])>;
    params[i].value = cast<S>(t);
  }
  if (off != bytes.size()) throw FormatError(origin + ": trailing bytes after offset " + std::to_string(off));
  return model;
}

}  // namespace unetgan
