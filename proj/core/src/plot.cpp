#include "chaintok/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace chaintok::plot {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 440;
constexpr int kMarginL = 70, kMarginR = 24, kMarginT = 48, kMarginB = 56;

const char* kPalette[] = {"#5b4b8a", "#c9a227", "#3b7a57", "#a23b3b",
                          "#3b5ba2", "#a23b8a", "#6b6b6b", "#c96a27"};

std::string fmt(double v) {
    std::ostringstream os;
    if (std::abs(v) >= 1000 || (std::abs(v) < 0.01 && v != 0.0)) {
        os.precision(2);
        os << std::scientific << v;
    } else {
        os.precision(3);
        os << v;
    }
    return os.str();
}

struct Range {
    double lo = 0.0, hi = 1.0;
    double map(double v, double px_lo, double px_hi) const {
        if (hi == lo) return 0.5 * (px_lo + px_hi);
        return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
    }
};

void axes(std::ostringstream& svg, const Range& xr, const Range& yr,
          const std::string& title, const std::string& x_label,
          const std::string& y_label) {
    svg << "<rect x='0' y='0' width='" << kWidth << "' height='" << kHeight
        << "' fill='white'/>\n";
    svg << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' "
        << "font-size='15' font-family='sans-serif'>" << title << "</text>\n";
    svg << "<line x1='" << kMarginL << "' y1='" << kHeight - kMarginB << "' x2='"
        << kWidth - kMarginR << "' y2='" << kHeight - kMarginB
        << "' stroke='black'/>\n";
    svg << "<line x1='" << kMarginL << "' y1='" << kMarginT << "' x2='" << kMarginL
        << "' y2='" << kHeight - kMarginB << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        const double px = xr.map(fx, kMarginL, kWidth - kMarginR);
        svg << "<line x1='" << px << "' y1='" << kHeight - kMarginB << "' x2='" << px
            << "' y2='" << kHeight - kMarginB + 5 << "' stroke='black'/>\n";
        svg << "<text x='" << px << "' y='" << kHeight - kMarginB + 20
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
            << fmt(fx) << "</text>\n";
        const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        const double py = yr.map(fy, kHeight - kMarginB, kMarginT);
        svg << "<line x1='" << kMarginL - 5 << "' y1='" << py << "' x2='" << kMarginL
            << "' y2='" << py << "' stroke='black'/>\n";
        svg << "<text x='" << kMarginL - 8 << "' y='" << py + 4
            << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << fmt(fy)
            << "</text>\n";
    }
    svg << "<text x='" << (kMarginL + kWidth - kMarginR) / 2 << "' y='"
        << kHeight - 14 << "' text-anchor='middle' font-size='12' "
        << "font-family='sans-serif'>" << x_label << "</text>\n";
    svg << "<text x='18' y='" << (kMarginT + kHeight - kMarginB) / 2
        << "' text-anchor='middle' font-size='12' font-family='sans-serif' "
        << "transform='rotate(-90 18 " << (kMarginT + kHeight - kMarginB) / 2 << ")'>"
        << y_label << "</text>\n";
}

void write_svg(const std::string& path, const std::string& body) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("plot: cannot open " + path);
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='"
      << kHeight << "'>\n"
      << body << "</svg>\n";
}

}  // namespace

void line_chart(const std::vector<Series>& series, const std::string& title,
                const std::string& x_label, const std::string& y_label,
                const std::string& path) {
    Range xr{1e300, -1e300}, yr{1e300, -1e300};
    for (const Series& s : series) {
        for (double v : s.x) {
            xr.lo = std::min(xr.lo, v);
            xr.hi = std::max(xr.hi, v);
        }
        for (double v : s.y) {
            yr.lo = std::min(yr.lo, v);
            yr.hi = std::max(yr.hi, v);
        }
    }
    if (xr.lo > xr.hi) xr = {0, 1};
    if (yr.lo > yr.hi) yr = {0, 1};
    if (yr.lo == yr.hi) {
        yr.lo -= 0.5;
        yr.hi += 0.5;
    }
    std::ostringstream svg;
    axes(svg, xr, yr, title, x_label, y_label);
    int ci = 0;
    for (const Series& s : series) {
        const char* color = kPalette[ci % 8];
        svg << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (size_t i = 0; i < s.x.size(); ++i) {
            svg << xr.map(s.x[i], kMarginL, kWidth - kMarginR) << ","
                << yr.map(s.y[i], kHeight - kMarginB, kMarginT) << " ";
        }
        svg << "'/>\n";
        if (series.size() > 1 && ci < 8) {
            const int ly = kMarginT + 16 * ci;
            svg << "<line x1='" << kWidth - kMarginR - 110 << "' y1='" << ly << "' x2='"
                << kWidth - kMarginR - 90 << "' y2='" << ly << "' stroke='" << color
                << "' stroke-width='2'/>\n";
            svg << "<text x='" << kWidth - kMarginR - 84 << "' y='" << ly + 4
                << "' font-size='11' font-family='sans-serif'>" << s.name << "</text>\n";
        }
        ++ci;
    }
    write_svg(path, svg.str());
}

void bar_chart(const std::vector<std::pair<std::string, double>>& bars,
               const std::string& title, const std::string& y_label,
               const std::string& path) {
    Range yr{0.0, 1e-12};
    for (const auto& [name, v] : bars) yr.hi = std::max(yr.hi, v);
    yr.hi *= 1.1;
    std::ostringstream svg;
    axes(svg, Range{0, static_cast<double>(bars.size())}, yr, title, "", y_label);
    const double span = static_cast<double>(kWidth - kMarginL - kMarginR);
    const double bw = span / std::max<size_t>(bars.size(), 1) * 0.6;
    for (size_t i = 0; i < bars.size(); ++i) {
        const double cx = kMarginL + span * (i + 0.5) / bars.size();
        const double top = yr.map(bars[i].second, kHeight - kMarginB, kMarginT);
        svg << "<rect x='" << cx - bw / 2 << "' y='" << top << "' width='" << bw
            << "' height='" << (kHeight - kMarginB - top) << "' fill='"
            << kPalette[i % 8] << "'/>\n";
        svg << "<text x='" << cx << "' y='" << kHeight - kMarginB + 34
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
            << bars[i].first << "</text>\n";
        svg << "<text x='" << cx << "' y='" << top - 5
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>"
            << fmt(bars[i].second) << "</text>\n";
    }
    write_svg(path, svg.str());
}

}  // namespace chaintok::plot
