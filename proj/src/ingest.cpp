// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/ingest.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "orchard/error.hpp"

namespace orchard {

using nlohmann::json;

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PGM

namespace {

struct PgmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

[[noreturn]] void pgm_error(const std::string& what, std::size_t offset) {
  throw ValidationError("pgm: " + what + " at byte offset " + std::to_string(offset));
}

PgmHeader parse_pgm_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2) pgm_error("truncated header", bytes.size());
  if (bytes[0] != 'P' || bytes[1] != '5') {
    std::string magic(reinterpret_cast<const char*>(bytes.data()), 2);
    pgm_error("unsupported magic '" + magic + "'", 0);
  }
  std::size_t pos = 2;
  auto next_int = [&](const char* name) -> int {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1'000'000'000L) pgm_error(std::string("oversized ") + name, start);
      ++pos;
    }
    if (pos == start) pgm_error(std::string("expected ") + name, start);
    return static_cast<int>(value);
  };
  PgmHeader h;
  h.width = next_int("width");
  h.height = next_int("height");
  h.maxval = next_int("maxval");
  if (pos >= bytes.size() || !is_space(bytes[pos])) pgm_error("missing whitespace after maxval", pos);
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) pgm_error("non-positive dimensions", 2);
  return h;
}

std::vector<std::uint8_t> pgm_header_bytes(int w, int h, int maxval) {
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
                             std::to_string(maxval) + "\n";
  return {header.begin(), header.end()};
}

}  // namespace

std::vector<std::uint8_t> encode_depth_pgm(const DepthImage& image) {
  auto out = pgm_header_bytes(image.width, image.height, 65535);
  out.reserve(out.size() + 2 * image.data.size());
  for (std::uint16_t v : image.data) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

std::vector<std::uint8_t> encode_mask_pgm(const MaskImage& image) {
  auto out = pgm_header_bytes(image.width, image.height, 255);
  out.insert(out.end(), image.data.begin(), image.data.end());
  return out;
}

DepthImage decode_depth_pgm(std::span<const std::uint8_t> bytes) {
  const PgmHeader h = parse_pgm_header(bytes);
  if (h.maxval != 65535) pgm_error("depth maxval must be 65535, got " + std::to_string(h.maxval), 2);
  DepthImage img(h.width, h.height);
  const std::size_t need = 2 * img.data.size();
  if (bytes.size() - h.data_offset < need) {
    pgm_error("truncated payload: expected " + std::to_string(need) + " bytes, found " +
                  std::to_string(bytes.size() - h.data_offset),
              bytes.size());
  }
  const std::uint8_t* p = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
  }
  return img;
}

MaskImage decode_mask_pgm(std::span<const std::uint8_t> bytes) {
  const PgmHeader h = parse_pgm_header(bytes);
  if (h.maxval != 255) pgm_error("mask maxval must be 255, got " + std::to_string(h.maxval), 2);
  MaskImage img(h.width, h.height);
  const std::size_t need = img.data.size();
  if (bytes.size() - h.data_offset < need) {
    pgm_error("truncated payload: expected " + std::to_string(need) + " bytes, found " +
                  std::to_string(bytes.size() - h.data_offset),
              bytes.size());
  }
  std::memcpy(img.data.data(), bytes.data() + h.data_offset, need);
  for (std::size_t i = 0; i < need; ++i) {
    if (img.data[i] > 3) {
      pgm_error("mask class code " + std::to_string(img.data[i]) + " outside {0,1,2,3}",
                h.data_offset + i);
    }
  }
  return img;
}

DepthImage read_depth_pgm(const std::filesystem::path& path) {
  try {
    return decode_depth_pgm(read_file_bytes(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

MaskImage read_mask_pgm(const std::filesystem::path& path) {
  try {
    return decode_mask_pgm(read_file_bytes(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_depth_pgm(const std::filesystem::path& path, const DepthImage& image) {
  write_file_bytes(path, encode_depth_pgm(image));
}

void write_mask_pgm(const std::filesystem::path& path, const MaskImage& image) {
  write_file_bytes(path, encode_mask_pgm(image));
}

// ---------------------------------------------------------------------------
// Back-projection

MaskImage erode_mask(const MaskImage& mask, int px) {
  MaskImage cur = mask;
  for (int step = 0; step < px; ++step) {
    MaskImage next = cur;
    for (int v = 0; v < cur.height; ++v) {
      for (int u = 0; u < cur.width; ++u) {
        const std::uint8_t c = cur.at(u, v);
        if (c == 0) continue;
        const bool keep = (u == 0 || cur.at(u - 1, v) == c) &&
                          (u + 1 == cur.width || cur.at(u + 1, v) == c) &&
                          (v == 0 || cur.at(u, v - 1) == c) &&
                          (v + 1 == cur.height || cur.at(u, v + 1) == c);
        if (!keep) next.at(u, v) = 0;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

LabeledPointCloud backproject_frame(const DepthImage& depth, const MaskImage& mask,
                                    const CameraIntrinsics& k,
                                    const BackprojectOptions& options) {
  k.validate();
  if (depth.width != k.width || depth.height != k.height) {
    throw ValidationError("depth image is " + std::to_string(depth.width) + "x" +
                          std::to_string(depth.height) + " but intrinsics are " +
                          std::to_string(k.width) + "x" + std::to_string(k.height));
  }
  if (mask.width != depth.width || mask.height != depth.height) {
    throw ValidationError("mask dimensions do not match depth dimensions");
  }
  if (options.erode_px < 0) throw ValidationError("erode_px must be >= 0");

  const MaskImage eroded = erode_mask(mask, options.erode_px);
  LabeledPointCloud cloud;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const std::uint16_t d = depth.at(u, v);
      if (d == 0) continue;
      const std::uint8_t code = eroded.at(u, v);
      if (code != static_cast<std::uint8_t>(PointLabel::kTrunk) &&
          code != static_cast<std::uint8_t>(PointLabel::kBranch)) {
        continue;
      }
      const double z = d * k.depth_scale;
      if (z > options.max_range) continue;
      cloud.push_back(Vec3((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z),
                      static_cast<PointLabel>(code));
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyType { kFloat32, kFloat64, kUint8 };

struct PlyProperty {
  std::string name;
  PlyType type;
};

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
    case PlyType::kUint8: return 1;
  }
  return 0;
}

std::optional<PlyType> parse_type(const std::string& s) {
  if (s == "float" || s == "float32") return PlyType::kFloat32;
  if (s == "double" || s == "float64") return PlyType::kFloat64;
  if (s == "uchar" || s == "uint8") return PlyType::kUint8;
  return std::nullopt;
}

[[noreturn]] void ply_error(const std::string& what) { throw ValidationError("ply: " + what); }

double read_le(const std::uint8_t* p, PlyType t) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  switch (t) {
    case PlyType::kFloat32: {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    case PlyType::kFloat64: {
      double d;
      std::memcpy(&d, p, 8);
      return d;
    }
    case PlyType::kUint8: return *p;
  }
  return 0;
}

}  // namespace

std::vector<std::uint8_t> encode_ply(const LabeledPointCloud& cloud, PlyFormat format) {
  cloud.validate();
  std::ostringstream header;
  header << "ply\n"
         << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
         << "element vertex " << cloud.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\nproperty uchar label\n"
         << "end_header\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  if (format == PlyFormat::kAscii) {
    char line[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec3& p = cloud.points[i];
      const int n = std::snprintf(line, sizeof line, "%.9g %.9g %.9g %d\n",
                                  static_cast<double>(static_cast<float>(p.x())),
                                  static_cast<double>(static_cast<float>(p.y())),
                                  static_cast<double>(static_cast<float>(p.z())),
                                  static_cast<int>(cloud.labels[i]));
      out.insert(out.end(), line, line + n);
    }
  } else {
    out.reserve(out.size() + 13 * cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        const float f = static_cast<float>(cloud.points[i][c]);
        std::uint8_t b[4];
        std::memcpy(b, &f, 4);
        out.insert(out.end(), b, b + 4);
      }
      out.push_back(static_cast<std::uint8_t>(cloud.labels[i]));
    }
  }
  return out;
}

LabeledPointCloud decode_ply(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::optional<std::string> {
    if (pos >= bytes.size()) return std::nullopt;
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    std::string line(reinterpret_cast<const char*>(bytes.data() + pos), end - pos);
    pos = end < bytes.size() ? end + 1 : end;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  auto first = next_line();
  if (!first || *first != "ply") ply_error("missing 'ply' magic");

  bool ascii = false;
  bool have_format = false;
  std::size_t vertex_count = 0;
  bool have_vertex = false;
  bool in_vertex = false;
  std::vector<PlyProperty> props;
  for (;;) {
    auto line = next_line();
    if (!line) ply_error("header not terminated by end_header");
    std::istringstream ss(*line);
    std::string kw;
    ss >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt, ver;
      ss >> fmt >> ver;
      if (fmt == "ascii") ascii = true;
      else if (fmt == "binary_little_endian") ascii = false;
      else ply_error("unsupported format '" + fmt + "'");
      have_format = true;
    } else if (kw == "element") {
      std::string name;
      long long count = -1;
      ss >> name >> count;
      if (count < 0) ply_error("bad element count for '" + name + "'");
      if (name == "vertex") {
        if (have_vertex) ply_error("duplicate vertex element");
        vertex_count = static_cast<std::size_t>(count);
        have_vertex = true;
        in_vertex = true;
      } else {
        if (count != 0) ply_error("unknown property layout: unsupported element '" + name + "'");
        in_vertex = false;
      }
    } else if (kw == "property") {
      std::string type, name;
      ss >> type >> name;
      if (!in_vertex) continue;  // properties of an empty foreign element
      auto t = parse_type(type);
      if (!t || !(name == "x" || name == "y" || name == "z" || name == "label")) {
        ply_error("unknown property layout: '" + type + " " + name + "'");
      }
      if (name == "label" && *t != PlyType::kUint8) ply_error("unknown property layout: label must be uchar");
      if (name != "label" && *t == PlyType::kUint8) ply_error("unknown property layout: coordinates must be float");
      for (const auto& p : props)
        if (p.name == name) ply_error("duplicate property '" + name + "'");
      props.push_back({name, *t});
    } else {
      ply_error("unexpected header keyword '" + kw + "'");
    }
  }
  if (!have_format) ply_error("missing format line");
  if (!have_vertex) ply_error("missing vertex element");
  if (props.size() != 4) ply_error("unknown property layout: need x, y, z and label");

  int slot[4] = {-1, -1, -1, -1};  // x y z label -> property index
  for (std::size_t i = 0; i < props.size(); ++i) {
    const auto& n = props[i].name;
    const int s = n == "x" ? 0 : n == "y" ? 1 : n == "z" ? 2 : 3;
    slot[s] = static_cast<int>(i);
  }

  LabeledPointCloud cloud;
  cloud.reserve(vertex_count);
  if (ascii) {
    std::size_t read = 0;
    while (read < vertex_count) {
      auto line = next_line();
      if (!line) break;
      if (line->find_first_not_of(" \t") == std::string::npos) continue;
      std::istringstream ss(*line);
      double v[4];
      for (std::size_t i = 0; i < 4; ++i) {
        if (!(ss >> v[i])) ply_error("malformed vertex line " + std::to_string(read));
        if (props[i].type == PlyType::kFloat32) v[i] = static_cast<float>(v[i]);
      }
      const double code = v[slot[3]];
      if (code != static_cast<int>(code)) ply_error("non-integer label on vertex " + std::to_string(read));
      cloud.push_back(Vec3(v[slot[0]], v[slot[1]], v[slot[2]]),
                      label_from_code(static_cast<int>(code)));
      ++read;
    }
    if (read < vertex_count) {
      ply_error("truncated: header declares " + std::to_string(vertex_count) +
                " vertices but " + std::to_string(read) + " present");
    }
  } else {
    std::size_t stride = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : props) {
      offsets.push_back(stride);
      stride += type_size(p.type);
    }
    const std::size_t available = (bytes.size() - pos) / stride;
    if (available < vertex_count) {
      ply_error("truncated: header declares " + std::to_string(vertex_count) +
                " vertices but " + std::to_string(available) + " present");
    }
    for (std::size_t i = 0; i < vertex_count; ++i) {
      const std::uint8_t* rec = bytes.data() + pos + i * stride;
      double v[4];
      for (std::size_t j = 0; j < 4; ++j) v[j] = read_le(rec + offsets[j], props[j].type);
      cloud.push_back(Vec3(v[slot[0]], v[slot[1]], v[slot[2]]),
                      label_from_code(static_cast<int>(v[slot[3]])));
    }
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!is_finite(cloud.points[i])) ply_error("vertex " + std::to_string(i) + " is not finite");
  }
  return cloud;
}

LabeledPointCloud read_ply(const std::filesystem::path& path) {
  try {
    auto cloud = decode_ply(read_file_bytes(path));
    cloud.frame_id = path.filename().string();
    return cloud;
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_ply(const std::filesystem::path& path, const LabeledPointCloud& cloud, PlyFormat format) {
  write_file_bytes(path, encode_ply(cloud, format));
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw ValidationError("manifest: " + path + " " + what);
}

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) schema_error(path + "." + it.key(), "is not a recognized field");
  }
}

double number_field(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) schema_error(path + "." + key, "is required");
  const json& v = obj.at(key);
  if (!v.is_number()) schema_error(path + "." + key, "must be a number");
  return v.get<double>();
}

int int_field(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) schema_error(path + "." + key, "is required");
  const json& v = obj.at(key);
  if (!v.is_number_integer()) schema_error(path + "." + key, "must be an integer");
  return v.get<int>();
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) schema_error("$", "must be an object");
  reject_unknown(doc, "$", {"intrinsics", "frames"});
  if (!doc.contains("intrinsics") || !doc["intrinsics"].is_object()) {
    schema_error("intrinsics", "is required and must be an object");
  }
  const json& ij = doc["intrinsics"];
  reject_unknown(ij, "intrinsics", {"width", "height", "fx", "fy", "cx", "cy", "depth_scale"});
  Manifest m;
  m.intrinsics.width = int_field(ij, "intrinsics", "width");
  m.intrinsics.height = int_field(ij, "intrinsics", "height");
  m.intrinsics.fx = number_field(ij, "intrinsics", "fx");
  m.intrinsics.fy = number_field(ij, "intrinsics", "fy");
  m.intrinsics.cx = number_field(ij, "intrinsics", "cx");
  m.intrinsics.cy = number_field(ij, "intrinsics", "cy");
  if (ij.contains("depth_scale")) m.intrinsics.depth_scale = number_field(ij, "intrinsics", "depth_scale");
  try {
    m.intrinsics.validate();
  } catch (const ValidationError& e) {
    schema_error("intrinsics:", e.what());
  }

  if (!doc.contains("frames") || !doc["frames"].is_array()) schema_error("frames", "is required and must be an array");
  const json& frames = doc["frames"];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string path = "frames[" + std::to_string(i) + "]";
    const json& f = frames[i];
    if (!f.is_object()) schema_error(path, "must be an object");
    reject_unknown(f, path, {"depth", "mask", "pose", "timestamp"});
    FrameRecord rec;
    for (const char* key : {"depth", "mask"}) {
      if (!f.contains(key) || !f[key].is_string() || f[key].get<std::string>().empty()) {
        schema_error(path + "." + key, "must be a non-empty string");
      }
      std::filesystem::path p = f[key].get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      (std::string(key) == "depth" ? rec.depth_path : rec.mask_path) = p.string();
    }
    if (f.contains("pose") && !f["pose"].is_null()) {
      const json& pj = f["pose"];
      if (!pj.is_array() || pj.size() != 16) schema_error(path + ".pose", "must be 16 numbers (row-major 4x4) or null");
      std::vector<double> vals;
      for (const auto& v : pj) {
        if (!v.is_number()) schema_error(path + ".pose", "must contain only numbers");
        vals.push_back(v.get<double>());
      }
      try {
        rec.pose = RigidTransform::from_row_major(vals);
      } catch (const ValidationError& e) {
        schema_error(path + ".pose", std::string("is not rigid: ") + e.what());
      }
    }
    if (f.contains("timestamp") && !f["timestamp"].is_null()) {
      rec.timestamp = number_field(f, path, "timestamp");
    }
    m.frames.push_back(std::move(rec));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string manifest_to_json(const Manifest& manifest) {
  const auto& k = manifest.intrinsics;
  json doc;
  doc["intrinsics"] = {{"width", k.width}, {"height", k.height}, {"fx", k.fx}, {"fy", k.fy},
                       {"cx", k.cx},       {"cy", k.cy},         {"depth_scale", k.depth_scale}};
  doc["frames"] = json::array();
  for (const auto& f : manifest.frames) {
    json fj;
    fj["depth"] = f.depth_path;
    fj["mask"] = f.mask_path;
    fj["pose"] = f.pose ? json(f.pose->row_major()) : json(nullptr);
    if (f.timestamp) fj["timestamp"] = *f.timestamp;
    doc["frames"].push_back(fj);
  }
  return doc.dump(2) + "\n";
}

}  // namespace orchard
