#include "plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "thz/io.hpp"

namespace thz::cli::plots {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, const Range& y, const std::string& y_label) {
  const double x0 = kLeft, y0 = kHeight - kBottom, x1 = kWidth - kRight;
  os << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y0 - (y0 - kTop) * i / 4.0;
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
  }
  os << "<text transform=\"rotate(-90)\" x=\"" << -(kTop + y0) / 2 << "\" y=\"16\" text-anchor=\"middle\">"
     << escape(y_label) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<Series>& series) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kTop + 16.0 * static_cast<double>(i);
    os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\""
       << kColors[i % 7] << "\"/>\n<text x=\"" << kWidth - kRight + 28 << "\" y=\"" << y + 9 << "\">"
       << escape(series[i].name) << "</text>\n";
  }
}

}  // namespace

void write_line_plot(const std::filesystem::path& file, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<Series>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xr.add(s.x[i]);
      yr.add(s.y[i]);
    }
  }
  xr.finish();
  yr.finish();
  const double x0 = kLeft, y0 = kHeight - kBottom, x1 = kWidth - kRight;
  auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - kTop); };
  std::ostringstream os;
  header(os, title);
  axes(os, yr, y_label);
  for (int i = 0; i <= 4; ++i) {
    const double v = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    os << "<text x=\"" << px(v) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << num(v) << "</text>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << kColors[k % 7] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    os << "\"/>\n";
  }
  legend(os, series);
  os << "</svg>\n";
  io::write_text(file, os.str());
}

void write_bar_chart(const std::filesystem::path& file, const std::string& title,
                     const std::vector<std::string>& categories, const std::vector<Series>& series) {
  Range yr;
  yr.add(0.0);
  for (const auto& s : series) {
    for (double v : s.y) yr.add(v);
  }
  yr.finish();
  const double x0 = kLeft, y0 = kHeight - kBottom, x1 = kWidth - kRight;
  auto py = [&](double v) { return y0 - (v - yr.lo) / (yr.hi - yr.lo) * (y0 - kTop); };
  std::ostringstream os;
  header(os, title);
  axes(os, yr, "");
  const double group = (x1 - x0) / static_cast<double>(std::max<std::size_t>(categories.size(), 1));
  const double bar = group * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = x0 + group * static_cast<double>(c) + group * 0.1;
    for (std::size_t k = 0; k < series.size(); ++k) {
      if (c >= series[k].y.size() || !std::isfinite(series[k].y[c])) continue;
      const double top = py(std::max(series[k].y[c], 0.0)), base = py(std::min(series[k].y[c], 0.0));
      os << "<rect x=\"" << gx + bar * static_cast<double>(k) << "\" y=\"" << top << "\" width=\"" << bar * 0.9
         << "\" height=\"" << base - top << "\" fill=\"" << kColors[k % 7] << "\"/>\n";
    }
    os << "<text x=\"" << gx + group * 0.4 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
       << escape(categories[c]) << "</text>\n";
  }
  legend(os, series);
  os << "</svg>\n";
  io::write_text(file, os.str());
}

}  // namespace thz::cli::plots
