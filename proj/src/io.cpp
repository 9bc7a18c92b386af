#include "trt/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include <json.hpp>

namespace trt::io {

namespace {

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t& offset) : bytes_(bytes), offset_(offset) {}

  void need(std::size_t n, const char* what) const {
    if (offset_ + n > bytes_.size()) {
      throw LengthError(std::string("truncated ") + what + ": need " + std::to_string(n) + " bytes at offset " +
                        std::to_string(offset_) + ", have " + std::to_string(bytes_.size() - offset_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[offset_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = std::uint16_t(bytes_[offset_] | (bytes_[offset_ + 1] << 8));
    offset_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[offset_ + std::size_t(i)]) << (8 * i);
    offset_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
    offset_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t& offset_;
};

std::string printable(const std::string& magic) {
  std::string out;
  for (unsigned char c : magic) {
    if (c >= 32 && c < 127) {
      out += char(c);
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

}  // namespace

Bytes encode_tensor(const Tensor& t) {
  if (t.ndim() == 0 || t.ndim() > 255) throw FormatError("tensor rank must be 1..255");
  Bytes out;
  out.reserve(6 + 4 * t.ndim() + 4 * t.size());
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  put_u8(out, kDtypeFloat32);
  put_u8(out, std::uint8_t(t.ndim()));
  for (auto d : t.dims()) {
    if (d > 0xffffffffu) throw FormatError("tensor extent exceeds u32");
    put_u32(out, std::uint32_t(d));
  }
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  Reader r(bytes, offset);
  const auto magic = r.text(4, "tensor magic");
  if (std::memcmp(magic.data(), kTensorMagic, 4) != 0) {
    throw FormatError("bad tensor magic '" + printable(magic) + "', expected 'TRT1'");
  }
  const auto dtype = r.u8("tensor dtype");
  if (dtype != kDtypeFloat32) throw UnsupportedError("unsupported tensor dtype code " + std::to_string(dtype));
  const auto ndim = r.u8("tensor rank");
  if (ndim == 0) throw FormatError("tensor rank must be at least 1");
  Dims dims;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const auto d = r.u32("tensor extents");
    if (d == 0) throw FormatError("tensor extent must be positive");
    dims.push_back(d);
  }
  const std::size_t n = dims_volume(dims);
  r.need(4 * n, "tensor payload");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(r.u32("tensor payload"));
  return Tensor(std::move(dims), std::move(data));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

template <typename F>
auto with_path(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const LengthError& e) {
    throw LengthError(path.string() + ": " + e.what());
  } catch (const UnsupportedError& e) {
    throw UnsupportedError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return with_path(path, [&] {
    std::size_t offset = 0;
    auto t = decode_tensor(bytes, offset);
    if (offset != bytes.size()) {
      throw LengthError(std::to_string(bytes.size() - offset) + " trailing bytes after tensor payload");
    }
    return t;
  });
}

// ---------------------------------------------------------------------------
// Checkpoints

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  check_parameters(ckpt.config, ckpt.params);
  Bytes out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, std::uint32_t(ckpt.params.size() + 1));
  auto put_name = [&](const std::string& name) {
    if (name.size() > 0xffff) throw FormatError("entry name too long");
    put_u16(out, std::uint16_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  };
  const auto& c = ckpt.config;
  put_name("config");
  for (std::uint32_t v : {c.image_size, c.patch_size, c.embed_dim, c.num_blocks, c.num_heads, c.mlp_ratio,
                          c.num_classes, c.selection_mass_fixed()}) {
    put_u32(out, v);
  }
  for (const auto& [name, t] : ckpt.params) {
    put_name(name);
    const auto bytes = encode_tensor(t);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  Reader r(bytes, offset);
  const auto magic = r.text(4, "checkpoint magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic '" + printable(magic) + "', expected 'TRTC'");
  }
  const auto count = r.u32("entry count");
  Checkpoint ckpt;
  bool have_config = false;
  std::set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.u16("entry name length");
    auto name = r.text(len, "entry name");
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint entry '" + name + "'");
    if (name == "config") {
      auto& c = ckpt.config;
      c.image_size = r.u32("config");
      c.patch_size = r.u32("config");
      c.embed_dim = r.u32("config");
      c.num_blocks = r.u32("config");
      c.num_heads = r.u32("config");
      c.mlp_ratio = r.u32("config");
      c.num_classes = r.u32("config");
      c.selection_mass = double(r.u32("config")) / 1e6;
      have_config = true;
      continue;
    }
    ckpt.params.emplace(std::move(name), decode_tensor(bytes, offset));
  }
  if (offset != bytes.size()) {
    throw LengthError(std::to_string(bytes.size() - offset) + " trailing bytes after last checkpoint entry");
  }
  if (!have_config) throw FormatError("checkpoint has no 'config' entry");
  try {
    ckpt.config.validate();
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  check_parameters(ckpt.config, ckpt.params);
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return with_path(path, [&] { return decode_checkpoint(bytes); });
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void manifest_error(std::size_t line, const std::string& what) {
  throw FormatError("manifest line " + std::to_string(line) + ": " + what);
}

long parse_int(std::size_t line, const std::string& text, const char* field) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    manifest_error(line, std::string("malformed ") + field + " '" + text + "'");
  }
  if (used != text.size()) manifest_error(line, std::string("malformed ") + field + " '" + text + "'");
  return v;
}

BoundingBox parse_box(std::size_t line, const std::string& text) {
  std::vector<long> v;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    v.push_back(parse_int(line, text.substr(start, comma - start), "box coordinate"));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (v.size() != 4) manifest_error(line, "box needs 4 coordinates, got '" + text + "'");
  if (v[2] <= v[0] || v[3] <= v[1]) manifest_error(line, "box '" + text + "' needs x0 < x1 and y0 < y1");
  if (v[0] < 0 || v[1] < 0) manifest_error(line, "box '" + text + "' lies outside the image");
  return {std::int32_t(v[0]), std::int32_t(v[1]), std::int32_t(v[2]), std::int32_t(v[3])};
}

}  // namespace

std::vector<ManifestLine> parse_manifest_text(const std::string& text) {
  std::vector<ManifestLine> out;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::istringstream fields(raw);
    std::string field;
    if (!(fields >> field) || field[0] == '#') continue;
    ManifestLine rec;
    rec.line = lineno;
    bool have_id = false, have_image = false, have_label = false;
    do {
      const auto colon = field.find(':');
      if (colon == std::string::npos || colon == 0) manifest_error(lineno, "field '" + field + "' is not key:value");
      const auto key = field.substr(0, colon), value = field.substr(colon + 1);
      if (value.empty()) manifest_error(lineno, "empty value for '" + key + "'");
      if (key == "id") {
        rec.id = value;
        have_id = true;
      } else if (key == "image") {
        rec.image = value;
        have_image = true;
      } else if (key == "label") {
        const long l = parse_int(lineno, value, "label");
        if (l < 0) manifest_error(lineno, "label must be nonnegative");
        rec.label = std::size_t(l);
        have_label = true;
      } else if (key == "box") {
        rec.boxes.push_back(parse_box(lineno, value));
      } else {
        manifest_error(lineno, "unknown key '" + key + "'");
      }
    } while (fields >> field);
    if (!have_id) manifest_error(lineno, "missing field 'id'");
    if (!have_image) manifest_error(lineno, "missing field 'image'");
    if (!have_label) manifest_error(lineno, "missing field 'label'");
    if (rec.boxes.empty()) manifest_error(lineno, "missing field 'box'");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ManifestLine> parse_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_manifest_text(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<Sample> load_samples(const std::filesystem::path& manifest) {
  const auto lines = parse_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<Sample> out;
  for (const auto& l : lines) {
    std::filesystem::path img = l.image;
    if (img.is_relative()) img = base / img;
    Sample s{l.id, read_tensor(img), l.label, l.boxes};
    if (s.image.ndim() != 3 || s.image.dim(0) != 3) {
      throw FormatError(manifest.string() + ": manifest line " + std::to_string(l.line) + ": image '" +
                        img.string() + "' is not 3xHxW");
    }
    for (const auto& b : s.boxes) {
      if (!b.within(s.image.dim(2), s.image.dim(1))) {
        throw FormatError(manifest.string() + ": manifest line " + std::to_string(l.line) +
                          ": box lies outside the " + std::to_string(s.image.dim(2)) + "x" +
                          std::to_string(s.image.dim(1)) + " image");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_samples(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  for (const auto& s : samples) {
    const std::string file = s.id + ".trt";
    write_tensor(dir / file, s.image);
    manifest << "id:" << s.id << " image:" << file << " label:" << s.label;
    for (const auto& b : s.boxes) manifest << " box:" << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1;
    manifest << '\n';
  }
  write_text(dir / "manifest.txt", manifest.str());
}

// ---------------------------------------------------------------------------
// Heatmap

Bytes encode_heatmap(const Tensor& map, const Tensor& image, double alpha) {
  map.require_matrix();
  const std::size_t h = map.rows(), w = map.cols();
  if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != h || image.dim(2) != w) {
    throw DimensionError("heatmap: map " + dims_to_string(map.dims()) + " vs image " + dims_to_string(image.dims()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("heatmap: alpha must lie in [0, 1]");
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + 3 * h * w);
  auto quantize = [](double v) { return std::uint8_t(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::clamp(double(map(y, x)), 0.0, 1.0);
      const double cm[3] = {v, 0.0, 1.0 - v};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.push_back(quantize(alpha * cm[ch] + (1.0 - alpha) * double(image[(ch * h + y) * w + x])));
      }
    }
  return out;
}

void write_heatmap(const std::filesystem::path& path, const Tensor& map, const Tensor& image, double alpha) {
  write_file(path, encode_heatmap(map, image, alpha));
}

// ---------------------------------------------------------------------------
// JSON configs

namespace {

using nlohmann::json;

template <typename V>
void take(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

json parse_json_file(const std::filesystem::path& path, std::initializer_list<std::string_view> known) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw FormatError(path.string() + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw FormatError(path.string() + ": unknown key '" + key + "'");
    }
  }
  return j;
}

}  // namespace

ToyTaskConfig read_toy_config(const std::filesystem::path& path) {
  const auto j = parse_json_file(
      path, {"image_size", "num_classes", "min_object", "max_object", "noise", "background", "samples_per_epoch",
             "seed"});
  ToyTaskConfig c;
  try {
    take(j, "image_size", c.image_size);
    take(j, "num_classes", c.num_classes);
    take(j, "min_object", c.min_object);
    take(j, "max_object", c.max_object);
    take(j, "noise", c.noise);
    take(j, "background", c.background);
    take(j, "samples_per_epoch", c.samples_per_epoch);
    take(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  const auto j = parse_json_file(path, {"learning_rate", "weight_decay", "phase1_steps", "phase2_steps", "batch_size",
                                        "seed", "patch_size", "embed_dim", "num_blocks", "num_heads", "mlp_ratio",
                                        "selection_mass"});
  TrainConfig c;
  try {
    take(j, "learning_rate", c.learning_rate);
    take(j, "weight_decay", c.weight_decay);
    take(j, "phase1_steps", c.phase1_steps);
    take(j, "phase2_steps", c.phase2_steps);
    take(j, "batch_size", c.batch_size);
    take(j, "seed", c.seed);
    take(j, "patch_size", c.patch_size);
    take(j, "embed_dim", c.embed_dim);
    take(j, "num_blocks", c.num_blocks);
    take(j, "num_heads", c.num_heads);
    take(j, "mlp_ratio", c.mlp_ratio);
    take(j, "selection_mass", c.selection_mass);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const ToyTaskConfig& c) {
  json j{{"image_size", c.image_size}, {"num_classes", c.num_classes}, {"min_object", c.min_object},
         {"max_object", c.max_object}, {"noise", c.noise}, {"background", c.background},             {"samples_per_epoch", c.samples_per_epoch},
         {"seed", c.seed}};
  return j.dump(2) + "\n";
}

std::string to_json(const TrainConfig& c) {
  json j{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"phase1_steps", c.phase1_steps},
         {"phase2_steps", c.phase2_steps},   {"batch_size", c.batch_size},     {"seed", c.seed},
         {"patch_size", c.patch_size},       {"embed_dim", c.embed_dim},       {"num_blocks", c.num_blocks},
         {"num_heads", c.num_heads},         {"mlp_ratio", c.mlp_ratio},       {"selection_mass", c.selection_mass}};
  return j.dump(2) + "\n";
}

}  // namespace trt::io
