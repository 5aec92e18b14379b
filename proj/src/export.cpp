// SPDX-License-Identifier: Apache-2.0

#include "gridpinn/export.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gridpinn::io {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

void finish(std::ofstream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
  finish(os, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_table(const std::vector<std::string>& header,
                 const std::vector<Vector>& columns,
                 const std::filesystem::path& path) {
  if (header.size() != columns.size()) throw ShapeError("write_table: header and column counts differ");
  if (columns.empty()) throw ContractError("write_table: no columns");
  const Index rows = columns.front().size();
  for (const auto& c : columns) {
    if (c.size() != rows) throw ShapeError("write_table: ragged columns");
  }
  auto os = open_out(path);
  for (size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
  os << '\n' << std::setprecision(17);
  for (Index r = 0; r < rows; ++r) {
    for (size_t k = 0; k < columns.size(); ++k) os << (k ? "," : "") << columns[k](r);
    os << '\n';
  }
  finish(os, path);
}

void write_side_by_side(const Vector& times, const Matrix& truth, const Matrix& pred,
                        const std::vector<std::string>& names,
                        const std::filesystem::path& path) {
  const Index n = truth.rows();
  if (pred.rows() != n || static_cast<Index>(names.size()) != n ||
      truth.cols() != times.size() || pred.cols() != times.size()) {
    throw ShapeError("write_side_by_side: shape mismatch");
  }
  std::vector<std::string> header{"t"};
  std::vector<Vector> cols{times};
  for (Index i = 0; i < n; ++i) {
    header.push_back(names[static_cast<size_t>(i)] + "_true");
    cols.push_back(truth.row(i).transpose());
  }
  for (Index i = 0; i < n; ++i) {
    header.push_back(names[static_cast<size_t>(i)] + "_pred");
    cols.push_back(pred.row(i).transpose());
  }
  write_table(header, cols, path);
}

void write_svg_plot(const Vector& x, const std::vector<Series>& series,
                    const std::string& title, const std::string& x_label,
                    const std::filesystem::path& path) {
  if (x.size() < 2 || series.empty()) throw ContractError("svg plot: need two points and a series");
  constexpr double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 50;
  constexpr std::array<const char*, 6> palette{"#1f77b4", "#d62728", "#2ca02c",
                                               "#9467bd", "#ff7f0e", "#17becf"};
  double y_lo = series.front().y.minCoeff(), y_hi = series.front().y.maxCoeff();
  for (const auto& s : series) {
    if (s.y.size() != x.size()) throw ShapeError("svg plot: series length differs from x");
    y_lo = std::min(y_lo, s.y.minCoeff());
    y_hi = std::max(y_hi, s.y.maxCoeff());
  }
  if (y_hi - y_lo < 1e-12 * std::max(1.0, std::abs(y_hi))) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double x_lo = x.minCoeff(), x_hi = x.maxCoeff();
  auto px = [&](double v) { return left + (v - x_lo) / (x_hi - x_lo) * (width - left - right); };
  auto py = [&](double v) { return top + (y_hi - v) / (y_hi - y_lo) * (height - top - bottom); };

  auto os = open_out(path);
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width - left - right
     << "\" height=\"" << height - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x_lo + (x_hi - x_lo) * k / 4.0;
    const double yv = y_lo + (y_hi - y_lo) * k / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << height - bottom + 16
       << "\" text-anchor=\"middle\">" << xv << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv
       << "</text>\n";
  }
  os << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 10
     << "\" text-anchor=\"middle\">" << escape_xml(x_label) << "</text>\n";
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % palette.size()];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
       << (series[s].dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (Index i = 0; i < x.size(); ++i) os << px(x(i)) << ',' << py(series[s].y(i)) << ' ';
    os << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(s) + 10.0;
    os << "<line x1=\"" << width - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << width - right + 30
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\""
       << (series[s].dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
    os << "<text x=\"" << width - right + 34 << "\" y=\"" << ly + 4 << "\">"
       << escape_xml(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  finish(os, path);
}

}  // namespace gridpinn::io
