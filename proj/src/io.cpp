#include "nullctl/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <sstream>

#include "nullctl/errors.hpp"
#include "nullctl/seed.hpp"

namespace nullctl {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : path_(path), width_(header.size()), out_(path, std::ios::binary) {
  if (!out_) throw ValidationError("cannot open '" + path + "' for writing");
  write_fields(header);
}

void CsvWriter::write_fields(const std::vector<std::string>& fields) {
  for (std::size_t j = 0; j < fields.size(); ++j) {
    if (j) out_ << ',';
    out_ << csv_escape(fields[j]);
  }
  out_ << "\r\n";
}

void CsvWriter::row(const std::vector<CsvCell>& cells) {
  if (cells.size() != width_) throw std::logic_error("csv row width mismatch in " + path_);
  std::vector<std::string> f;
  f.reserve(cells.size());
  for (const auto& c : cells) {
    if (const auto* s = std::get_if<std::string>(&c)) f.push_back(*s);
    else if (const auto* d = std::get_if<double>(&c)) f.push_back(format_double(*d));
    else f.push_back(std::to_string(std::get<long long>(c)));
  }
  write_fields(f);
  out_.flush();
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << content;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

}  // namespace

void write_svg_chart(const std::string& path, const ChartSpec& spec,
                     const std::vector<Series>& series) {
  const double W = 640, H = 420, L = 70, R = 150, Tp = 40, B = 50;
  auto tx = [&](double v) { return spec.logx ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.logy ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return false;
    if (spec.logx && x <= 0) return false;
    if (spec.logy && y <= 0) return false;
    return true;
  };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t j = 0; j < std::min(s.x.size(), s.y.size()); ++j)
      if (usable(s.x[j], s.y[j])) {
        x0 = std::min(x0, tx(s.x[j]));
        x1 = std::max(x1, tx(s.x[j]));
        y0 = std::min(y0, ty(s.y[j]));
        y1 = std::max(y1, ty(s.y[j]));
      }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - Tp - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(spec.title) << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << Tp << "\" width=\"" << W - L - R << "\" height=\""
    << H - Tp - B << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto tick = [](double v) { return format_double(std::round(v * 1000) / 1000); };
  o << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
    << (spec.logx ? "1e" : "") << tick(x0) << "</text>\n";
  o << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
    << (spec.logx ? "1e" : "") << tick(x1) << "</text>\n";
  o << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\">"
    << (spec.logy ? "1e" : "") << tick(y0) << "</text>\n";
  o << "<text x=\"" << L - 6 << "\" y=\"" << Tp + 10 << "\" text-anchor=\"end\">"
    << (spec.logy ? "1e" : "") << tick(y1) << "</text>\n";
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(spec.xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (Tp + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (Tp + H - B) / 2 << ")\">" << xml_escape(spec.ylabel) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* col = kColors[s % std::size(kColors)];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    const auto& sr = series[s];
    for (std::size_t j = 0; j < std::min(sr.x.size(), sr.y.size()); ++j)
      if (usable(sr.x[j], sr.y[j])) o << px(sr.x[j]) << ',' << py(sr.y[j]) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << Tp + 16 * (s + 1) << "\" fill=\"" << col << "\">"
      << xml_escape(sr.name) << "</text>\n";
  }
  o << "</svg>\n";
  write_text(path, o.str());
}

}  // namespace nullctl
