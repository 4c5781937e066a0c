#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "lddmm/errors.hpp"
#include "lddmm/flow.hpp"
#include "lddmm/point_cloud.hpp"

namespace lddmm {

namespace fs = std::filesystem;

enum class CloudFormat { automatic, csv, ply };

inline CloudFormat parse_cloud_format(const std::string& s) {
  if (s == "auto" || s.empty()) return CloudFormat::automatic;
  if (s == "csv") return CloudFormat::csv;
  if (s == "ply") return CloudFormat::ply;
  throw ConfigError("unknown point-cloud format '" + s + "' (expected csv or ply)");
}

namespace detail {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view tok, const std::string& where) {
  tok = trim(tok);
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty()) {
    throw ParseError(where + ": cannot parse number '" + std::string(tok) + "'");
  }
  return v;
}

inline void write_double(std::string& out, double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  out.append(buf.data(), res.ptr);
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace detail

/// One point per line, comma-separated. Blank lines and lines starting with '#' are skipped.
inline Points parse_csv_points(std::string_view text, const std::string& name = "csv") {
  std::vector<double> values;
  Index d = -1;
  Index rows = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = detail::trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const std::string where = name + " row " + std::to_string(line_no);
    Index cols = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      values.push_back(detail::parse_double(line.substr(start, comma == std::string_view::npos ? comma : comma - start),
                                            where));
      ++cols;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (d < 0) {
      d = cols;
    } else if (cols != d) {
      throw ParseError(name + ": inconsistent dimension at row " + std::to_string(line_no) + " (" +
                       std::to_string(cols) + " columns, expected " + std::to_string(d) + ")");
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(name + ": no points");
  return Eigen::Map<const Points>(values.data(), rows, d);
}

inline std::string format_csv_points(const Points& p) {
  std::string out;
  out.reserve(static_cast<std::size_t>(p.size()) * 24);
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index k = 0; k < p.cols(); ++k) {
      if (k > 0) out.push_back(',');
      detail::write_double(out, p(i, k));
    }
    out.push_back('\n');
  }
  return out;
}

inline void save_csv(const Points& p, const fs::path& path) { detail::write_file(path, format_csv_points(p)); }

inline Points load_csv(const fs::path& path) { return parse_csv_points(detail::read_file(path), path.string()); }

namespace detail {

enum class PlyFormat { ascii, binary_le, binary_be };

struct PlyProperty {
  std::string name;
  std::string type;       // scalar type, or list item type
  std::string count_type; // non-empty for list properties
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw ParseError("ply: unknown property type '" + t + "'");
}

class PlyReader {
 public:
  PlyReader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) { parse_header(); }

  Points vertices;
  std::vector<std::array<std::size_t, 3>> faces;

  void read_body(bool want_faces) {
    for (std::size_t e = 0; e < elements_.size(); ++e) {
      const PlyElement& el = elements_[e];
      const bool is_vertex = el.name == "vertex";
      const bool is_face = el.name == "face";
      std::array<int, 3> xyz{-1, -1, -1};
      int index_prop = -1;
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        const auto& prop = el.properties[p];
        if (is_vertex && prop.count_type.empty()) {
          if (prop.name == "x") xyz[0] = static_cast<int>(p);
          if (prop.name == "y") xyz[1] = static_cast<int>(p);
          if (prop.name == "z") xyz[2] = static_cast<int>(p);
        }
        if (is_face && !prop.count_type.empty() && (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
          index_prop = static_cast<int>(p);
        }
      }
      if (is_vertex) {
        if (xyz[0] < 0 || xyz[1] < 0 || xyz[2] < 0) throw ParseError(name_ + ": vertex element lacks x, y, z");
        vertices.resize(static_cast<Index>(el.count), 3);
      }
      std::vector<double> scalars(el.properties.size());
      std::vector<double> list;
      for (std::size_t i = 0; i < el.count; ++i) {
        const std::string where = name_ + ": " + el.name + " " + std::to_string(i);
        if (format_ == PlyFormat::ascii) begin_ascii_line(where);
        for (std::size_t p = 0; p < el.properties.size(); ++p) {
          const auto& prop = el.properties[p];
          if (prop.count_type.empty()) {
            scalars[p] = read_value(prop.type, where);
          } else {
            const double c = read_value(prop.count_type, where);
            if (c < 0 || c != std::floor(c)) throw ParseError(where + ": bad list length");
            list.resize(static_cast<std::size_t>(c));
            for (auto& v : list) v = read_value(prop.type, where);
            if (is_face && static_cast<int>(p) == index_prop && want_faces) add_polygon(list, where);
          }
        }
        if (format_ == PlyFormat::ascii) end_ascii_line(where);
        if (is_vertex) {
          for (int k = 0; k < 3; ++k) {
            vertices(static_cast<Index>(i), k) = scalars[static_cast<std::size_t>(xyz[static_cast<std::size_t>(k)])];
          }
        }
      }
    }
    if (vertices.rows() == 0) throw ParseError(name_ + ": no vertices");
  }

 private:
  void parse_header() {
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::string_view {
      if (pos_ >= data_.size()) throw ParseError(name_ + ": truncated header");
      std::size_t end = data_.find('\n', pos_);
      if (end == std::string::npos) end = data_.size();
      std::string_view line(data_.data() + pos_, end - pos_);
      pos_ = end + 1;
      ++line_no;
      return trim(line);
    };
    if (next_line() != "ply") throw ParseError(name_ + ": missing 'ply' magic");
    bool have_format = false;
    while (true) {
      const std::string_view line = next_line();
      std::istringstream ss{std::string(line)};
      std::string key;
      ss >> key;
      if (key == "end_header") break;
      if (key.empty() || key == "comment" || key == "obj_info") continue;
      if (key == "format") {
        std::string fmt;
        ss >> fmt;
        if (fmt == "ascii") format_ = PlyFormat::ascii;
        else if (fmt == "binary_little_endian") format_ = PlyFormat::binary_le;
        else if (fmt == "binary_big_endian") format_ = PlyFormat::binary_be;
        else throw ParseError(name_ + ": unsupported format '" + fmt + "'");
        have_format = true;
      } else if (key == "element") {
        PlyElement el;
        long long count = -1;
        ss >> el.name >> count;
        if (!ss || count < 0) throw ParseError(name_ + ": bad element line " + std::to_string(line_no));
        el.count = static_cast<std::size_t>(count);
        elements_.push_back(std::move(el));
      } else if (key == "property") {
        if (elements_.empty()) throw ParseError(name_ + ": property before element at line " + std::to_string(line_no));
        PlyProperty prop;
        std::string type;
        ss >> type;
        if (type == "list") {
          ss >> prop.count_type >> prop.type >> prop.name;
          ply_type_size(prop.count_type);
        } else {
          prop.type = type;
          ss >> prop.name;
        }
        if (!ss) throw ParseError(name_ + ": bad property line " + std::to_string(line_no));
        ply_type_size(prop.type);
        elements_.back().properties.push_back(std::move(prop));
      } else {
        throw ParseError(name_ + ": unexpected header keyword '" + key + "' at line " + std::to_string(line_no));
      }
    }
    if (!have_format) throw ParseError(name_ + ": missing format line");
  }

  void begin_ascii_line(const std::string& where) {
    while (true) {
      if (pos_ >= data_.size()) throw ParseError(where + ": unexpected end of file");
      std::size_t end = data_.find('\n', pos_);
      if (end == std::string::npos) end = data_.size();
      line_ = trim(std::string_view(data_.data() + pos_, end - pos_));
      pos_ = end + 1;
      if (!line_.empty()) return;
    }
  }

  void end_ascii_line(const std::string& where) {
    if (!trim(line_).empty()) throw ParseError(where + ": trailing values");
  }

  double read_value(const std::string& type, const std::string& where) {
    if (format_ == PlyFormat::ascii) {
      line_ = trim(line_);
      std::size_t end = line_.find_first_of(" \t");
      if (end == std::string_view::npos) end = line_.size();
      if (end == 0) throw ParseError(where + ": missing value");
      const double v = parse_double(line_.substr(0, end), where);
      line_.remove_prefix(end);
      return v;
    }
    const std::size_t size = ply_type_size(type);
    if (pos_ + size > data_.size()) throw ParseError(where + ": unexpected end of file");
    std::array<unsigned char, 8> raw{};
    std::memcpy(raw.data(), data_.data() + pos_, size);
    pos_ += size;
    const bool swap = (format_ == PlyFormat::binary_le) != (std::endian::native == std::endian::little);
    if (swap) std::reverse(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(size));
    auto as = [&raw](auto tag) {
      decltype(tag) v;
      std::memcpy(&v, raw.data(), sizeof(v));
      return static_cast<double>(v);
    };
    if (type == "char" || type == "int8") return as(std::int8_t{});
    if (type == "uchar" || type == "uint8") return as(std::uint8_t{});
    if (type == "short" || type == "int16") return as(std::int16_t{});
    if (type == "ushort" || type == "uint16") return as(std::uint16_t{});
    if (type == "int" || type == "int32") return as(std::int32_t{});
    if (type == "uint" || type == "uint32") return as(std::uint32_t{});
    if (type == "float" || type == "float32") return as(float{});
    return as(double{});
  }

  // Polygons are fanned into triangles.
  void add_polygon(const std::vector<double>& idx, const std::string& where) {
    if (idx.size() < 3) throw ParseError(where + ": face with fewer than 3 vertices");
    for (double v : idx) {
      if (v < 0 || v != std::floor(v)) throw ParseError(where + ": bad vertex index");
    }
    for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
      faces.push_back({static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[k]),
                       static_cast<std::size_t>(idx[k + 1])});
    }
  }

  std::string data_;
  std::string name_;
  std::size_t pos_ = 0;
  PlyFormat format_ = PlyFormat::ascii;
  std::vector<PlyElement> elements_;
  std::string_view line_;
};

}  // namespace detail

inline Points parse_ply_vertices(std::string data, const std::string& name = "ply") {
  detail::PlyReader reader(std::move(data), name);
  reader.read_body(false);
  return std::move(reader.vertices);
}

inline TriangleMesh parse_ply_mesh(std::string data, const std::string& name = "ply") {
  detail::PlyReader reader(std::move(data), name);
  reader.read_body(true);
  return TriangleMesh(std::move(reader.vertices), reader.faces);
}

inline TriangleMesh load_mesh(const fs::path& path) { return parse_ply_mesh(detail::read_file(path), path.string()); }

/// Points in file order, no normalization.
inline PointCloud load_point_cloud(const fs::path& path, CloudFormat format = CloudFormat::automatic) {
  if (format == CloudFormat::automatic) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    format = ext == ".ply" ? CloudFormat::ply : CloudFormat::csv;
  }
  if (format == CloudFormat::ply) return PointCloud(parse_ply_vertices(detail::read_file(path), path.string()));
  return PointCloud(load_csv(path));
}

inline void save_point_cloud(const PointCloud& cloud, const fs::path& path) { save_csv(cloud.points(), path); }

inline fs::path frame_path(const fs::path& dir, int t) { return dir / ("frame_" + std::to_string(t) + ".csv"); }
inline fs::path momentum_path(const fs::path& dir, int t) { return dir / ("momentum_" + std::to_string(t) + ".csv"); }

inline void write_json(const nlohmann::json& j, const fs::path& path) { detail::write_file(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Writes frame_<t>.csv for every frame of a deformed cloud (no manifest).
inline void save_frames(const std::vector<Points>& frames, const fs::path& dir) {
  ensure_directory(dir);
  for (std::size_t t = 0; t < frames.size(); ++t) save_csv(frames[t], frame_path(dir, static_cast<int>(t)));
}

/// Writes frame_<t>.csv (z[t]) and momentum_<t>.csv (a[t]) for t = 0..τ and a
/// manifest.json holding `extra` plus n, d, tau, sigma. Returns the manifest path.
inline fs::path save_trajectory(const TrajectoryBundle& bundle, const fs::path& dir,
                                const nlohmann::json& extra = nlohmann::json::object()) {
  bundle.validate();
  ensure_directory(dir);
  for (int t = 0; t <= bundle.tau(); ++t) {
    const auto s = static_cast<std::size_t>(t);
    save_csv(bundle.z[s], frame_path(dir, t));
    save_csv(bundle.a[s], momentum_path(dir, t));
  }
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["n"] = bundle.size();
  manifest["d"] = bundle.dim();
  manifest["tau"] = bundle.tau();
  manifest["sigma"] = bundle.kernel.sigma;
  const fs::path path = dir / "manifest.json";
  write_json(manifest, path);
  return path;
}

inline TrajectoryBundle load_trajectory(const fs::path& dir) {
  const nlohmann::json manifest = read_json(dir / "manifest.json");
  TrajectoryBundle bundle;
  try {
    bundle.kernel.sigma = manifest.at("sigma").get<double>();
    const int tau = manifest.at("tau").get<int>();
    if (tau < 1) throw ParseError(dir.string() + ": manifest tau must be at least 1");
    for (int t = 0; t <= tau; ++t) {
      bundle.z.push_back(load_csv(frame_path(dir, t)));
      bundle.a.push_back(load_csv(momentum_path(dir, t)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir.string() + "/manifest.json: " + e.what());
  }
  bundle.validate();
  return bundle;
}

}  // namespace lddmm
