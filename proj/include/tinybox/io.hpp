#pragma once

#include <array>
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

#include "tinybox/error.hpp"
#include "tinybox/eval.hpp"
#include "tinybox/tensor.hpp"

namespace tinybox {

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Detection / ground-truth JSONL
//
// One object per line:
//   {"image_id": "...", "class_id": 3, "cx": ..., "cy": ..., "w": ..., "h": ..., "score": ...}
// Ground truth omits "score" and carries "ignored": true only when set.
// Numbers are written in shortest round-trip form.

namespace detail {

inline std::string box_fields(const BBox& b) {
  return "\"cx\":" + format_double(b.cx) + ",\"cy\":" + format_double(b.cy) + ",\"w\":" + format_double(b.w) +
         ",\"h\":" + format_double(b.h);
}

inline std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

template <typename Fn>
void for_each_json_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      if (end == text.size()) break;
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw MalformedLineError(line_no, line);
    }
    try {
      fn(j, line_no);
    } catch (const nlohmann::json::exception&) {
      throw MalformedLineError(line_no, line);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonPositiveSize || e.kind() == ErrorKind::InvalidArgument)
        throw MalformedLineError(line_no, line);
      throw;
    }
    if (end == text.size()) break;
  }
}

inline std::string json_image_id(const nlohmann::json& j) {
  const auto& v = j.at("image_id");
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw Error(ErrorKind::InvalidArgument, "image_id must be a string or integer");
}

inline BBox json_box(const nlohmann::json& j) {
  return BBox(j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("w").get<double>(), j.at("h").get<double>());
}

}  // namespace detail

inline std::string write_detections_jsonl(const std::vector<Detection>& dets) {
  std::string out;
  for (const auto& d : dets) {
    out += "{\"image_id\":" + detail::quoted(d.image_id) + ",\"class_id\":" + std::to_string(d.class_id) + "," +
           detail::box_fields(d.box) + ",\"score\":" + format_double(d.score) + "}\n";
  }
  return out;
}

inline std::string write_ground_truth_jsonl(const std::vector<GroundTruth>& gts) {
  std::string out;
  for (const auto& g : gts) {
    out += "{\"image_id\":" + detail::quoted(g.image_id) + ",\"class_id\":" + std::to_string(g.class_id) + "," +
           detail::box_fields(g.box);
    if (g.ignored) out += ",\"ignored\":true";
    out += "}\n";
  }
  return out;
}

inline std::vector<Detection> read_detections_jsonl(std::string_view text) {
  std::vector<Detection> dets;
  detail::for_each_json_line(text, [&](const nlohmann::json& j, std::size_t) {
    Detection d;
    d.image_id = detail::json_image_id(j);
    d.class_id = j.at("class_id").get<int>();
    d.box = detail::json_box(j);
    d.score = j.contains("score") ? j.at("score").get<double>() : 1.0;
    detail::require(d.score >= 0.0 && d.score <= 1.0 && d.class_id >= 0, ErrorKind::InvalidArgument,
                    "score outside [0, 1] or negative class");
    dets.push_back(std::move(d));
  });
  return dets;
}

inline std::vector<GroundTruth> read_ground_truth_jsonl(std::string_view text) {
  std::vector<GroundTruth> gts;
  detail::for_each_json_line(text, [&](const nlohmann::json& j, std::size_t) {
    GroundTruth g;
    g.image_id = detail::json_image_id(j);
    g.class_id = j.at("class_id").get<int>();
    g.box = detail::json_box(j);
    g.ignored = j.value("ignored", false);
    gts.push_back(std::move(g));
  });
  return gts;
}

// ---------------------------------------------------------------------------
// Tensor manifest + blob
//
// <stem>.json holds {"shape": [d0, d1, d2, d3], "dtype": "f32le"}; <stem>.bin
// holds the row-major values as little-endian IEEE-754 binary32.

inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

inline void write_tensor(const std::filesystem::path& manifest, const Tensor4<double>& t) {
  nlohmann::ordered_json j;
  j["shape"] = {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  j["dtype"] = "f32le";
  write_text_file(manifest, j.dump() + "\n");
  std::string blob(t.size() * 4, '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto f = static_cast<float>(t.storage()[i]);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) blob[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  write_text_file(blob_path_for(manifest), blob);
}

inline Tensor4<double> read_tensor(const std::filesystem::path& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, "bad manifest " + manifest.string() + ": " + e.what());
  }
  Shape4 shape{};
  try {
    const auto dims = j.at("shape").get<std::vector<std::size_t>>();
    detail::require(dims.size() == 4, ErrorKind::ShapeMismatch, "manifest shape must have 4 dimensions");
    for (std::size_t i = 0; i < 4; ++i) shape[i] = dims[i];
    detail::require(j.at("dtype").get<std::string>() == "f32le", ErrorKind::InvalidArgument,
                    "unsupported dtype (only f32le)");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, "bad manifest " + manifest.string() + ": " + e.what());
  }
  const std::string blob = read_text_file(blob_path_for(manifest));
  const std::size_t n = shape[0] * shape[1] * shape[2] * shape[3];
  if (blob.size() != 4 * n) {
    throw Error(ErrorKind::ShapeMismatch, "blob has " + std::to_string(blob.size()) + " bytes, expected " +
                                              std::to_string(4 * n));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * i + static_cast<std::size_t>(b)])) << (8 * b);
    float f = 0.0f;
    std::memcpy(&f, &bits, 4);
    values[i] = f;
  }
  return Tensor4<double>(shape, std::move(values));
}

// ---------------------------------------------------------------------------
// VisDrone DET annotations
//
// Per line: x,y,w,h,score,category[,truncation,occlusion], integers, pixel
// units, (x, y) the top-left corner. Categories 1..10 are object classes
// 0..9; 0 (ignored region) and 11 (others) are ignored.

struct VisDroneRecord {
  int x = 0, y = 0, w = 0, h = 0;
  int score = 0;
  int category = 0;
  int truncation = 0, occlusion = 0;
  int field_count = 8;  // 6, 7 or 8 as read

  friend bool operator==(const VisDroneRecord&, const VisDroneRecord&) = default;
};

namespace detail {

inline bool parse_int_field(std::string_view s, int& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

inline std::vector<VisDroneRecord> parse_visdrone_records(std::string_view text) {
  std::vector<VisDroneRecord> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    std::string_view body = line;
    if (body.back() == ',') body.remove_suffix(1);  // some exports end lines with a comma

    std::vector<int> fields;
    std::size_t p = 0;
    for (;;) {
      const std::size_t comma = body.find(',', p);
      const std::string_view tok = body.substr(p, comma == std::string_view::npos ? std::string_view::npos : comma - p);
      int v = 0;
      if (!detail::parse_int_field(tok, v)) throw MalformedLineError(line_no, std::string(line));
      fields.push_back(v);
      if (comma == std::string_view::npos) break;
      p = comma + 1;
    }
    if (fields.size() < 6 || fields.size() > 8 || fields[5] < 0 || fields[5] > 11) {
      throw MalformedLineError(line_no, std::string(line));
    }
    if (fields[2] <= 0 || fields[3] <= 0) {
      throw Error(ErrorKind::NonPositiveSize, "line " + std::to_string(line_no) + ": '" + std::string(line) + "'");
    }
    VisDroneRecord r;
    r.x = fields[0];
    r.y = fields[1];
    r.w = fields[2];
    r.h = fields[3];
    r.score = fields[4];
    r.category = fields[5];
    r.field_count = static_cast<int>(fields.size());
    if (fields.size() > 6) r.truncation = fields[6];
    if (fields.size() > 7) r.occlusion = fields[7];
    out.push_back(r);
  }
  return out;
}

inline std::string format_visdrone_records(const std::vector<VisDroneRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.w) + "," + std::to_string(r.h) +
           "," + std::to_string(r.score) + "," + std::to_string(r.category);
    if (r.field_count > 6) out += "," + std::to_string(r.truncation);
    if (r.field_count > 7) out += "," + std::to_string(r.occlusion);
    out += "\n";
  }
  return out;
}

inline GroundTruth visdrone_to_ground_truth(const VisDroneRecord& r, const std::string& image_id, double image_w,
                                            double image_h) {
  detail::require(image_w > 0 && image_h > 0, ErrorKind::InvalidArgument, "image size must be positive");
  GroundTruth g;
  g.image_id = image_id;
  const bool ignored = r.category == 0 || r.category == 11;
  g.ignored = ignored;
  g.class_id = ignored ? -1 : r.category - 1;
  g.box = BBox((r.x + 0.5 * r.w) / image_w, (r.y + 0.5 * r.h) / image_h, r.w / image_w, r.h / image_h);
  return g;
}

/// Parses VisDrone text into normalized center-format ground truth.
/// Throws MalformedLineError (1-based line) or NonPositiveSize.
inline std::vector<GroundTruth> parse_visdrone_annotations(std::string_view text, double image_w, double image_h,
                                                           const std::string& image_id = "0") {
  std::vector<GroundTruth> gts;
  for (const auto& r : parse_visdrone_records(text)) gts.push_back(visdrone_to_ground_truth(r, image_id, image_w, image_h));
  return gts;
}

// Back to pixel records (rounded to the nearest pixel). Ignored objects are
// written as category 0; score 1 marks evaluated objects, 0 ignored ones.
inline VisDroneRecord ground_truth_to_visdrone(const GroundTruth& g, double image_w, double image_h) {
  VisDroneRecord r;
  const CornerBox c = to_corners(g.box);
  r.x = static_cast<int>(std::lround(c.x1 * image_w));
  r.y = static_cast<int>(std::lround(c.y1 * image_h));
  r.w = static_cast<int>(std::lround(g.box.w * image_w));
  r.h = static_cast<int>(std::lround(g.box.h * image_h));
  r.category = g.ignored ? 0 : g.class_id + 1;
  r.score = g.ignored ? 0 : 1;
  return r;
}

}  // namespace tinybox
