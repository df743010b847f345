#include "megan/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace megan::svg {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

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

std::ofstream open_out(const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

std::string polyline(const std::vector<double>& ys, double x0, double y0, double w, double h, double ymin,
                     double ymax, const char* color) {
  std::string pts;
  char buf[64];
  const double span = (ymax > ymin) ? (ymax - ymin) : 1.0;
  for (size_t i = 0; i < ys.size(); ++i) {
    const double x = x0 + w * (ys.size() > 1 ? static_cast<double>(i) / (ys.size() - 1) : 0.5);
    const double y = y0 + h - h * (ys[i] - ymin) / span;
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
    pts += buf;
  }
  return "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.2\" points=\"" +
         pts + "\"/>\n";
}

}  // namespace

void write_line_plot(const std::string& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series) {
  if (series.empty()) throw std::invalid_argument("write_line_plot: no series");
  double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(ymin)) {
    ymin = 0.0;
    ymax = 1.0;
  }
  const double W = 720, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  auto f = open_out(path);
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">"
    << escape_xml(title) << "</text>\n";
  f << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
    << "\" fill=\"none\" stroke=\"#888\"/>\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.0f\" y=\"%.0f\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">",
                W / 2, H - 12.0);
  f << buf << escape_xml(x_label) << "</text>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%.0f\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
                "transform=\"rotate(-90 16 %.0f)\">",
                H / 2, H / 2);
  f << buf << escape_xml(y_label) << "</text>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.0f\" y=\"%.0f\" font-size=\"10\" font-family=\"sans-serif\">%.4g</text>\n", 8.0,
                mt + 12.0, ymax);
  f << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.0f\" y=\"%.0f\" font-size=\"10\" font-family=\"sans-serif\">%.4g</text>\n", 8.0,
                H - mb, ymin);
  f << buf;
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % 6];
    f << polyline(series[s].y, ml, mt, W - ml - mr, H - mt - mb, ymin, ymax, color);
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.0f\" y=\"%.0f\" width=\"12\" height=\"3\" fill=\"%s\"/>", ml + 10 + 130.0 * s,
                  mt - 10.0, color);
    f << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.0f\" y=\"%.0f\" font-size=\"11\" font-family=\"sans-serif\">", ml + 26 + 130.0 * s,
                  mt - 4.0);
    f << buf << escape_xml(series[s].name) << "</text>\n";
  }
  f << "</svg>\n";
}

void write_record_panels(const std::string& path, const Eigen::MatrixXf& signals, const std::string& title,
                         const std::vector<std::string>& panel_labels) {
  const int n = static_cast<int>(signals.rows());
  const int cols = 4;
  const int rows = (n + cols - 1) / cols;
  const double pw = 220, ph = 120, gap = 12, mt = 40;
  const double W = cols * (pw + gap) + gap;
  const double H = mt + rows * (ph + gap) + gap;
  auto f = open_out(path);
  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\">"
    << escape_xml(title) << "</text>\n";
  for (int v = 0; v < n; ++v) {
    const double x0 = gap + (v % cols) * (pw + gap);
    const double y0 = mt + (v / cols) * (ph + gap);
    f << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#bbb\"/>\n";
    std::vector<double> ys(signals.cols());
    for (int t = 0; t < signals.cols(); ++t) ys[t] = signals(v, t);
    const double lo = *std::min_element(ys.begin(), ys.end());
    const double hi = *std::max_element(ys.begin(), ys.end());
    f << polyline(ys, x0 + 2, y0 + 14, pw - 4, ph - 18, lo, hi == lo ? lo + 1 : hi, kPalette[0]);
    const std::string label = v < static_cast<int>(panel_labels.size()) ? panel_labels[v] : "";
    f << "<text x=\"" << x0 + 6 << "\" y=\"" << y0 + 12
      << "\" font-size=\"10\" font-family=\"sans-serif\">" << escape_xml(label) << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace megan::svg
