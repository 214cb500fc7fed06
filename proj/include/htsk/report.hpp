#pragma once

#include "htsk/concentration_lab.hpp"
#include "htsk/matrix_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace htsk {

// RFC 4180: quote fields containing a comma, quote or line break; double
// embedded quotes; CRLF record separators.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw std::invalid_argument("CSV row has the wrong number of fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) text_ += ',';
      text_ += csv_field(fields[i]);
    }
    text_ += "\r\n";
  }

  void row(const std::vector<double>& values) {
    std::vector<std::string> f;
    f.reserve(values.size());
    for (double v : values) f.push_back(format_double(v));
    row(f);
  }

  const std::string& str() const { return text_; }

 private:
  std::size_t columns_;
  std::string text_;
};

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << text;
  if (!os) throw IoError("failed writing " + path);
}

// threshold, survival, ci_low, ci_high [, envelope]
inline std::string tail_curve_csv(const TailCurve& c, const std::vector<double>& envelope = {}) {
  std::vector<std::string> header{"threshold", "survival", "ci_low", "ci_high"};
  if (!envelope.empty()) header.push_back("envelope");
  CsvWriter w(header);
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    std::vector<double> r{c.thresholds[i], c.survival[i], c.ci_low[i], c.ci_high[i]};
    if (!envelope.empty()) r.push_back(envelope[i]);
    w.row(r);
  }
  return w.str();
}

namespace detail {

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

/// Standalone SVG line chart of log S(u) against u^alpha. Points with zero
/// survival are dropped; the fitted line, when present, is drawn dashed.
inline std::string tail_curve_svg(const TailCurve& c, double alpha, const std::string& title) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < c.thresholds.size(); ++i)
    if (c.survival[i] > 0.0 && c.thresholds[i] >= 0.0)
      pts.emplace_back(std::pow(c.thresholds[i], alpha), std::log(c.survival[i]));
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::string safe_title;
  for (char ch : title) safe_title += (ch == '<' || ch == '>' || ch == '&') ? '_' : ch;
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << safe_title << "</text>\n";
  double x0 = 0.0, x1 = 1.0, y0 = -1.0, y1 = 0.0;
  if (!pts.empty()) {
    x0 = x1 = pts.front().first;
    y0 = y1 = pts.front().second;
    for (auto [x, y] : pts) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 - x0 <= 0.0) x1 = x0 + 1.0;
  if (y1 - y0 <= 0.0) y0 = y1 - 1.0;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return T + (y1 - y) / (y1 - y0) * (H - T - B); };
  using detail::px;
  os << "<g stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << px(L) << "\" y1=\"" << px(H - B) << "\" x2=\"" << px(W - R) << "\" y2=\"" << px(H - B) << "\"/>\n";
  os << "<line x1=\"" << px(L) << "\" y1=\"" << px(T) << "\" x2=\"" << px(L) << "\" y2=\"" << px(H - B) << "\"/>\n";
  os << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << px(sx(xv)) << "\" y=\"" << px(H - B + 16) << "\" text-anchor=\"middle\">"
       << detail::label(xv) << "</text>\n";
    os << "<text x=\"" << px(L - 6) << "\" y=\"" << px(sy(yv) + 4) << "\" text-anchor=\"end\">" << detail::label(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << px((L + W - R) / 2) << "\" y=\"" << px(H - 10) << "\" text-anchor=\"middle\">u^"
     << detail::label(alpha) << "</text>\n";
  os << "<text x=\"16\" y=\"" << px((T + H - B) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << px((T + H - B) / 2) << ")\">log survival</text>\n</g>\n";
  if (!pts.empty()) {
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) os << (i ? " " : "") << px(sx(pts[i].first)) << ',' << px(sy(pts[i].second));
    os << "\"/>\n";
  }
  if (c.fit && !pts.empty()) {
    // log S = a - b u^beta, drawn on the same u^alpha axis
    os << "<polyline fill=\"none\" stroke=\"firebrick\" stroke-dasharray=\"5,4\" points=\"";
    for (int k = 0; k <= 40; ++k) {
      const double xa = x0 + (x1 - x0) * k / 40.0;
      const double u = std::pow(xa, 1.0 / alpha);
      const double y = std::clamp(c.fit->intercept - c.fit->rate * std::pow(std::max(u - c.fit->location, 0.0), c.fit->exponent), y0, y1);
      os << (k ? " " : "") << px(sx(xa)) << ',' << px(sy(y));
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace htsk
