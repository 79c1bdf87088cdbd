#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "inflare/error.hpp"

namespace inflare::cli::svg {

namespace {

constexpr double kSize = 480.0;
constexpr double kPad = 36.0;

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double map(double v, double out_lo, double out_hi) const {
    const double span = hi > lo ? hi - lo : 1.0;
    return out_lo + (v - lo) / span * (out_hi - out_lo);
  }
};

std::ofstream open(const std::filesystem::path& path, const std::string& title) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\" viewBox=\"0 0 " << kSize << ' ' << kSize << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kSize / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">"
      << title << "</text>\n"
      << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize - 2 * kPad << "\" height=\""
      << kSize - 2 * kPad << "\" fill=\"none\" stroke=\"#888\"/>\n";
  return out;
}

}  // namespace

void scatter(const std::filesystem::path& path, const std::string& title,
             const std::vector<Series>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    detail::require(s.points.cols() >= 2 || s.points.rows() == 0, "svg::scatter needs >= 2 columns");
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
      xr.add(s.points(i, 0));
      yr.add(s.points(i, 1));
    }
  }
  auto out = open(path, title);
  out.precision(5);
  for (const auto& s : series) {
    out << "<g fill=\"" << s.color << "\" fill-opacity=\"0.6\">\n";
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
      const double x = s.points(i, 0), y = s.points(i, 1);
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      out << "<circle cx=\"" << xr.map(x, kPad, kSize - kPad) << "\" cy=\""
          << yr.map(y, kSize - kPad, kPad) << "\" r=\"" << s.radius << "\"/>\n";
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
}

void line(const std::filesystem::path& path, const std::string& title, std::span<const double> ys) {
  const bool log_scale = !ys.empty() && std::all_of(ys.begin(), ys.end(), [](double v) { return v > 0; });
  Range xr, yr;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    xr.add(static_cast<double>(i));
    yr.add(log_scale ? std::log10(ys[i]) : ys[i]);
  }
  auto out = open(path, title + (log_scale ? " (log10)" : ""));
  out.precision(5);
  out << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double y = log_scale ? std::log10(ys[i]) : ys[i];
    if (!std::isfinite(y)) continue;
    out << xr.map(static_cast<double>(i), kPad, kSize - kPad) << ',' << yr.map(y, kSize - kPad, kPad)
        << ' ';
  }
  out << "\"/>\n</svg>\n";
}

}  // namespace inflare::cli::svg
