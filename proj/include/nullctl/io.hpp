#pragma once

/// Output helpers: RFC-4180 CSV with round-trip doubles, file checksums and
/// small self-contained SVG line charts.

#include <cstdint>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace nullctl {

/// %.17g, with inf / -inf / nan spelled out.
std::string format_double(double v);

using CsvCell = std::variant<std::string, double, long long>;

/// CRLF line endings, fields quoted only when needed.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<CsvCell>& cells);
  const std::string& path() const { return path_; }

 private:
  void write_fields(const std::vector<std::string>& fields);
  std::string path_;
  std::size_t width_;
  std::ofstream out_;
};

std::string csv_escape(const std::string& field);

/// FNV-1a 64 of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::string& path);

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct ChartSpec {
  std::string title, xlabel, ylabel;
  bool logx = false, logy = false;
};

/// Non-finite points (and non-positive ones on log axes) are skipped.
void write_svg_chart(const std::string& path, const ChartSpec& spec,
                     const std::vector<Series>& series);

void write_text(const std::string& path, const std::string& content);

}  // namespace nullctl
