/**
 * Native SVG summary plots (lines and bars); no plotting dependency.
 * Charts are derived solely from CSV-backed data so they can be regenerated
 * offline.
 */
#pragma once

#include <string>
#include <vector>

namespace chaintok::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

void line_chart(const std::vector<Series>& series, const std::string& title,
                const std::string& x_label, const std::string& y_label,
                const std::string& path);

void bar_chart(const std::vector<std::pair<std::string, double>>& bars,
               const std::string& title, const std::string& y_label,
               const std::string& path);

}  // namespace chaintok::plot
