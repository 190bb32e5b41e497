#pragma once

// Minimal SVG line and bar charts for run artifacts. CSV files hold the data; the
// plots are a convenience view of them.

#include <string>
#include <vector>

namespace qqm::svg {

struct Line {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

/// Bars on uniform bins starting at `lo`; drawn from zero, so negative heights hang down.
struct Bars {
    std::string label;
    double lo = 0.0;
    double width = 1.0;
    std::vector<double> heights;
};

struct Panel {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    std::vector<Bars> bars;
    std::vector<Line> lines;
    bool log_y = false; ///< non-positive values are skipped
};

/// Panels laid out row-major on a grid with `columns` columns.
std::string render(const std::vector<Panel>& panels, int columns = 1, const std::string& title = "");

} // namespace qqm::svg
