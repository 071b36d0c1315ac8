#include "reflexsplit/svg.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::vector<SvgSeries>& series) {
    constexpr int kW = 760, kH = 420, kPad = 50;
    double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
    double ymin = xmin, ymax = xmax;
    for (const auto& s : series) {
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (series.empty() || xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    std::ofstream out(path);
    if (!out) throw DataError("cannot write svg: " + path);
    auto px = [&](double x) { return kPad + (x - xmin) / (xmax - xmin) * (kW - 2 * kPad); };
    auto py = [&](double y) { return kH - kPad - (y - ymin) / (ymax - ymin) * (kH - 2 * kPad); };

    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH
        << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << kW / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
        << "</text>\n";
    out << "<line x1='" << kPad << "' y1='" << kH - kPad << "' x2='" << kW - kPad << "' y2='"
        << kH - kPad << "' stroke='black'/>\n";
    out << "<line x1='" << kPad << "' y1='" << kPad << "' x2='" << kPad << "' y2='" << kH - kPad
        << "' stroke='black'/>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        out << "<polyline fill='none' stroke='" << colors[i % 6] << "' stroke-width='1.5' points='";
        for (std::size_t j = 0; j < s.x.size(); ++j) {
            out << px(s.x[j]) << ',' << py(s.y[j]) << ' ';
        }
        out << "'/>\n";
        out << "<text x='" << kW - kPad + 4 << "' y='"
            << (s.y.empty() ? kPad : py(s.y.back())) << "' font-size='11' fill='" << colors[i % 6]
            << "'>" << s.label << "</text>\n";
    }
    out << "</svg>\n";
}

} // namespace reflexsplit
