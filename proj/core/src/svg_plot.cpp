// SPDX-License-Identifier: Apache-2.0
#include "uniqseg/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "uniqseg/errors.hpp"

namespace uniqseg::svg {
namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMarginLeft = 60;
constexpr int kMarginBottom = 50;
constexpr int kMarginTop = 40;
constexpr int kMarginRight = 20;

const char* kPalette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2"};

std::ofstream open(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("svg: cannot open " + path.string());
  return f;
}

}  // namespace

void write_bar_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& labels, const std::vector<double>& values,
                     const std::string& value_name) {
  if (labels.size() != values.size()) throw ContractError("svg: label/value count mismatch");
  double vmax = 1e-9;
  for (double v : values) vmax = std::max(vmax, v);
  vmax *= 1.15;

  int plot_w = kWidth - kMarginLeft - kMarginRight;
  int plot_h = kHeight - kMarginTop - kMarginBottom;
  int n = static_cast<int>(values.size());
  double slot = static_cast<double>(plot_w) / std::max(1, n);
  double bar_w = slot * 0.6;

  auto f = open(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\">\n";
  f << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << title << "</text>\n";
  f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
    << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"#333\"/>\n";
  f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
    << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"#333\"/>\n";
  f << "<text x=\"16\" y=\"" << kMarginTop + plot_h / 2
    << "\" font-size=\"12\" transform=\"rotate(-90 16," << kMarginTop + plot_h / 2 << ")\" "
    << "text-anchor=\"middle\">" << value_name << "</text>\n";

  for (int g = 0; g <= 4; ++g) {
    double v = vmax * g / 4.0;
    int y = kHeight - kMarginBottom - static_cast<int>(v / vmax * plot_h);
    f << "<line x1=\"" << kMarginLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kMarginLeft
      << "\" y2=\"" << y << "\" stroke=\"#333\"/>\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    f << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << y + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
  }

  for (int i = 0; i < n; ++i) {
    double x0 = kMarginLeft + slot * i + (slot - bar_w) / 2;
    int h = static_cast<int>(values[i] / vmax * plot_h);
    int y0 = kHeight - kMarginBottom - h;
    f << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << bar_w << "\" height=\"" << h
      << "\" fill=\"" << kPalette[i % 6] << "\"/>\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", values[i]);
    f << "<text x=\"" << x0 + bar_w / 2 << "\" y=\"" << y0 - 5
      << "\" font-size=\"11\" text-anchor=\"middle\">" << buf << "</text>\n";
    f << "<text x=\"" << x0 + bar_w / 2 << "\" y=\"" << kHeight - kMarginBottom + 18
      << "\" font-size=\"12\" text-anchor=\"middle\">" << labels[i] << "</text>\n";
  }
  f << "</svg>\n";
}

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  double vmax = 1e-9, vmin = 0.0;
  std::size_t steps = 1;
  for (const auto& [name, values] : series) {
    steps = std::max(steps, values.size());
    for (double v : values) {
      vmax = std::max(vmax, v);
      vmin = std::min(vmin, v);
    }
  }
  vmax *= 1.05;

  int plot_w = kWidth - kMarginLeft - kMarginRight;
  int plot_h = kHeight - kMarginTop - kMarginBottom;

  auto f = open(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\">\n";
  f << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << title << "</text>\n";
  f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
    << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"#333\"/>\n";
  f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
    << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"#333\"/>\n";

  for (int g = 0; g <= 4; ++g) {
    double v = vmin + (vmax - vmin) * g / 4.0;
    int y = kHeight - kMarginBottom - static_cast<int>((v - vmin) / (vmax - vmin) * plot_h);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    f << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << y + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << buf << "</text>\n";
  }

  int si = 0;
  for (const auto& [name, values] : series) {
    if (!values.empty()) {
      f << "<polyline fill=\"none\" stroke=\"" << kPalette[si % 6]
        << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < values.size(); ++i) {
        double x = kMarginLeft +
                   static_cast<double>(i) / std::max<std::size_t>(1, steps - 1) * plot_w;
        double y = kHeight - kMarginBottom - (values[i] - vmin) / (vmax - vmin) * plot_h;
        f << x << "," << y << " ";
      }
      f << "\"/>\n";
    }
    f << "<rect x=\"" << kWidth - 150 << "\" y=\"" << kMarginTop + 16 * si
      << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[si % 6] << "\"/>\n";
    f << "<text x=\"" << kWidth - 135 << "\" y=\"" << kMarginTop + 16 * si + 9
      << "\" font-size=\"11\">" << name << "</text>\n";
    ++si;
  }
  f << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 14
    << "\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
  f << "</svg>\n";
}

}  // namespace uniqseg::svg
