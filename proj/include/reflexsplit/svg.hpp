#pragma once

#include <string>
#include <vector>

namespace reflexsplit {

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

// Minimal SVG line chart for schedule/variance curves.
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::vector<SvgSeries>& series);

} // namespace reflexsplit
