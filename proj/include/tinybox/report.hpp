#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tinybox/error.hpp"
#include "tinybox/io.hpp"

namespace tinybox {

using Cell = std::variant<std::int64_t, double, std::string>;

// Tabular sweep output. Rows hold one cell per column.
struct SweepReport {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  friend bool operator==(const SweepReport&, const SweepReport&) = default;
};

enum class ReportFormat { csv, json, table };

inline const char* extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::csv: return ".csv";
    case ReportFormat::json: return ".json";
    case ReportFormat::table: return ".txt";
  }
  return "";
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string cell_text(const Cell& c) {
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  return std::get<std::string>(c);
}

inline std::string cell_pretty(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", *d);
    return buf;
  }
  return cell_text(c);
}

}  // namespace detail

inline std::string to_csv(const SweepReport& r) {
  std::string out;
  for (std::size_t i = 0; i < r.columns.size(); ++i) out += (i ? "," : "") + detail::csv_escape(r.columns[i]);
  out += "\n";
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + detail::csv_escape(detail::cell_text(row[i]));
    out += "\n";
  }
  return out;
}

inline std::string to_json(const SweepReport& r) {
  nlohmann::ordered_json j;
  j["title"] = r.title;
  j["columns"] = r.columns;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    auto jr = nlohmann::ordered_json::array();
    for (const auto& c : row) std::visit([&](const auto& v) { jr.push_back(v); }, c);
    rows.push_back(std::move(jr));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

inline SweepReport report_from_json(const std::string& text) {
  SweepReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.title = j.at("title").get<std::string>();
    r.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& jr : j.at("rows")) {
      std::vector<Cell> row;
      for (const auto& v : jr) {
        if (v.is_number_integer()) row.emplace_back(v.get<std::int64_t>());
        else if (v.is_number_float()) row.emplace_back(v.get<double>());
        else row.emplace_back(v.get<std::string>());
      }
      r.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad report json: ") + e.what());
  }
  return r;
}

// Column-aligned plain text: numbers right-aligned, text left-aligned.
inline std::string to_table(const SweepReport& r) {
  std::vector<std::size_t> width(r.columns.size());
  for (std::size_t i = 0; i < r.columns.size(); ++i) width[i] = r.columns[i].size();
  for (const auto& row : r.rows)
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i)
      width[i] = std::max(width[i], detail::cell_pretty(row[i]).size());
  auto pad = [](const std::string& s, std::size_t w, bool right) {
    const std::string fill(w - s.size(), ' ');
    return right ? fill + s : s + fill;
  };
  std::string out;
  if (!r.title.empty()) out += r.title + "\n";
  for (std::size_t i = 0; i < r.columns.size(); ++i) out += (i ? "  " : "") + pad(r.columns[i], width[i], false);
  out += "\n";
  for (std::size_t i = 0; i < r.columns.size(); ++i) out += (i ? "  " : "") + std::string(width[i], '-');
  out += "\n";
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i)
      out += (i ? "  " : "") + pad(detail::cell_pretty(row[i]), width[i], !std::holds_alternative<std::string>(row[i]));
    out += "\n";
  }
  return out;
}

inline std::string emit_report(const SweepReport& r, ReportFormat f) {
  switch (f) {
    case ReportFormat::csv: return to_csv(r);
    case ReportFormat::json: return to_json(r);
    case ReportFormat::table: return to_table(r);
  }
  return {};
}

// Writes <out_dir>/<name><ext> and returns the path.
inline std::filesystem::path write_report(const SweepReport& r, ReportFormat f, const std::filesystem::path& out_dir,
                                          const std::string& name) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  const auto path = out_dir / (name + extension(f));
  write_text_file(path, emit_report(r, f));
  return path;
}

}  // namespace tinybox
