#include "cacdec/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace cacdec::svgplot {

namespace {

std::string fmt(double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string bland_altman_svg(const stats::BlandAltman& ba, const std::string& title) {
  const int W = 640, H = 480, ML = 70, MR = 20, MT = 40, MB = 50;
  double xmin = 0, xmax = 1, ymin = -1, ymax = 1;
  if (!ba.rows.empty()) {
    xmin = xmax = ba.rows[0].mean;
    ymin = ymax = ba.rows[0].diff;
    for (const auto& r : ba.rows) {
      xmin = std::min(xmin, r.mean);
      xmax = std::max(xmax, r.mean);
      for (double y : {r.diff, r.loa_low, r.loa_high}) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (xmax - xmin < 1e-9) xmax = xmin + 1;
  if (ymax - ymin < 1e-9) {
    ymax += 1;
    ymin -= 1;
  }
  double xpad = 0.05 * (xmax - xmin), ypad = 0.08 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
    << "</text>\n";
  // axes
  s << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
    << H - MB << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double x = xmin + i * (xmax - xmin) / 5;
    double y = ymin + i * (ymax - ymin) / 5;
    s << "<line x1=\"" << fmt(px(x)) << "\" y1=\"" << H - MB << "\" x2=\"" << fmt(px(x))
      << "\" y2=\"" << H - MB + 5 << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << fmt(px(x)) << "\" y=\"" << H - MB + 20
      << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(x) << "</text>\n";
    s << "<line x1=\"" << ML - 5 << "\" y1=\"" << fmt(py(y)) << "\" x2=\"" << ML << "\" y2=\""
      << fmt(py(y)) << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << ML - 8 << "\" y=\"" << fmt(py(y) + 4)
      << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(y) << "</text>\n";
  }
  s << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"12\">mean of pair</text>\n";
  s << "<text x=\"16\" y=\"" << (MT + H - MB) / 2
    << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << (MT + H - MB) / 2 << ")\">difference</text>\n";

  // LoA curves and bias, drawn across sorted means.
  std::vector<stats::BlandAltman::Row> rows = ba.rows;
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.mean < b.mean; });
  auto polyline = [&](auto get, const char* color, const char* dash) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-dasharray=\"" << dash
      << "\" points=\"";
    for (const auto& r : rows) s << fmt(px(r.mean)) << "," << fmt(py(get(r))) << " ";
    s << "\"/>\n";
  };
  if (!rows.empty()) {
    polyline([](const auto& r) { return r.loa_low; }, "crimson", "6,4");
    polyline([](const auto& r) { return r.loa_high; }, "crimson", "6,4");
    s << "<line x1=\"" << fmt(px(rows.front().mean)) << "\" y1=\"" << fmt(py(ba.bias))
      << "\" x2=\"" << fmt(px(rows.back().mean)) << "\" y2=\"" << fmt(py(ba.bias))
      << "\" stroke=\"steelblue\"/>\n";
  }
  for (const auto& r : ba.rows)
    s << "<circle cx=\"" << fmt(px(r.mean)) << "\" cy=\"" << fmt(py(r.diff))
      << "\" r=\"3\" fill=\"black\" fill-opacity=\"0.6\"/>\n";
  s << "</svg>\n";
  return s.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace cacdec::svgplot
