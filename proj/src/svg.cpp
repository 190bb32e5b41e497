#include "qqm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace qqm::svg {

namespace {

constexpr double kPanelW = 420.0;
constexpr double kPanelH = 300.0;
constexpr double kLeft = 62.0;
constexpr double kRight = 14.0;
constexpr double kTop = 28.0;
constexpr double kBottom = 44.0;
constexpr double kTitleH = 26.0;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr int kPaletteSize = 10;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    if (v != 0.0 && (std::abs(v) < 1e-3 || std::abs(v) >= 1e5)) {
        std::snprintf(buf, sizeof buf, "%.0e", v);
    } else {
        std::snprintf(buf, sizeof buf, "%.4g", v);
    }
    return buf;
}

std::string escape(const std::string& s) {
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

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    bool empty() const { return !(lo <= hi); }
    void finish() {
        if (empty()) {
            lo = 0.0;
            hi = 1.0;
        } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
            const double pad = std::max(1e-12, 0.5 * std::abs(hi));
            lo -= pad;
            hi += pad;
        }
    }
};

std::vector<double> nice_ticks(double lo, double hi) {
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        step = m * mag;
        if (span / step <= 6.0) {
            break;
        }
    }
    std::vector<double> t;
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) {
        t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    }
    return t;
}

class PanelRenderer {
public:
    PanelRenderer(const Panel& p, double ox, double oy) : p_(p), ox_(ox), oy_(oy) {}

    std::string draw() {
        ranges();
        std::string s;
        const double x0 = ox_ + kLeft, y0 = oy_ + kTop;
        const double w = kPanelW - kLeft - kRight, h = kPanelH - kTop - kBottom;
        s += "<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
             "\" fill=\"none\" stroke=\"#333\"/>\n";
        s += "<text x=\"" + num(ox_ + kPanelW / 2) + "\" y=\"" + num(oy_ + 18) +
             "\" text-anchor=\"middle\" font-size=\"13\">" + escape(p_.title) + "</text>\n";
        s += "<text x=\"" + num(x0 + w / 2) + "\" y=\"" + num(oy_ + kPanelH - 8) +
             "\" text-anchor=\"middle\" font-size=\"11\">" + escape(p_.xlabel) + "</text>\n";
        s += "<text transform=\"translate(" + num(ox_ + 13) + "," + num(y0 + h / 2) +
             ") rotate(-90)\" text-anchor=\"middle\" font-size=\"11\">" + escape(p_.ylabel) + "</text>\n";
        for (double t : nice_ticks(xr_.lo, xr_.hi)) {
            s += "<line x1=\"" + num(px(t)) + "\" y1=\"" + num(y0 + h) + "\" x2=\"" + num(px(t)) + "\" y2=\"" +
                 num(y0 + h + 4) + "\" stroke=\"#333\"/>\n";
            s += "<text x=\"" + num(px(t)) + "\" y=\"" + num(y0 + h + 16) +
                 "\" text-anchor=\"middle\" font-size=\"10\">" + tick_label(t) + "</text>\n";
        }
        for (double t : nice_ticks(yr_.lo, yr_.hi)) {
            const double v = p_.log_y ? std::pow(10.0, t) : t;
            s += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(py_raw(t)) + "\" x2=\"" + num(x0) + "\" y2=\"" +
                 num(py_raw(t)) + "\" stroke=\"#333\"/>\n";
            s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py_raw(t) + 3) +
                 "\" text-anchor=\"end\" font-size=\"10\">" + tick_label(v) + "</text>\n";
        }
        int color = 0;
        std::vector<std::pair<std::string, std::string>> legend;
        for (const auto& b : p_.bars) {
            const std::string c = kPalette[color++ % kPaletteSize];
            legend.emplace_back(b.label, c);
            for (std::size_t i = 0; i < b.heights.size(); ++i) {
                const double v = b.heights[i];
                if (!std::isfinite(v) || (p_.log_y && v <= 0.0)) {
                    continue;
                }
                const double xa = px(b.lo + b.width * static_cast<double>(i));
                const double xb = px(b.lo + b.width * static_cast<double>(i + 1));
                const double base = p_.log_y ? y0 + h : py(0.0);
                const double top = py(v);
                s += "<rect x=\"" + num(xa) + "\" y=\"" + num(std::min(base, top)) + "\" width=\"" +
                     num(std::max(0.0, xb - xa)) + "\" height=\"" + num(std::abs(base - top)) + "\" fill=\"" + c +
                     "\" fill-opacity=\"0.45\" stroke=\"" + c + "\" stroke-width=\"0.5\"/>\n";
            }
        }
        if (!p_.bars.empty() && !p_.log_y && yr_.lo < 0.0) {
            s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(py(0.0)) + "\" x2=\"" + num(x0 + w) + "\" y2=\"" +
                 num(py(0.0)) + "\" stroke=\"#999\"/>\n";
        }
        for (const auto& l : p_.lines) {
            const std::string c = kPalette[color++ % kPaletteSize];
            legend.emplace_back(l.label, c);
            std::string d;
            bool pen = false;
            for (std::size_t i = 0; i < std::min(l.x.size(), l.y.size()); ++i) {
                if (!std::isfinite(l.x[i]) || !std::isfinite(l.y[i]) || (p_.log_y && l.y[i] <= 0.0)) {
                    pen = false;
                    continue;
                }
                d += (pen ? "L" : "M") + num(px(l.x[i])) + " " + num(py(l.y[i])) + " ";
                pen = true;
            }
            s += "<path d=\"" + d + "\" fill=\"none\" stroke=\"" + c + "\" stroke-width=\"1.5\"" +
                 (l.dashed ? " stroke-dasharray=\"5,3\"" : "") + "/>\n";
        }
        double ly = y0 + 12;
        for (const auto& [label, c] : legend) {
            if (label.empty()) {
                continue;
            }
            s += "<rect x=\"" + num(x0 + w - 120) + "\" y=\"" + num(ly - 8) + "\" width=\"10\" height=\"8\" fill=\"" +
                 c + "\"/>\n";
            s += "<text x=\"" + num(x0 + w - 106) + "\" y=\"" + num(ly) + "\" font-size=\"10\">" + escape(label) +
                 "</text>\n";
            ly += 12;
        }
        return s;
    }

private:
    double ytrans(double v) const { return p_.log_y ? std::log10(v) : v; }

    void ranges() {
        for (const auto& b : p_.bars) {
            xr_.add(b.lo);
            xr_.add(b.lo + b.width * static_cast<double>(b.heights.size()));
            for (double v : b.heights) {
                if (!p_.log_y || v > 0.0) {
                    yr_.add(ytrans(v));
                }
            }
            if (!p_.log_y) {
                yr_.add(0.0);
            }
        }
        for (const auto& l : p_.lines) {
            for (std::size_t i = 0; i < std::min(l.x.size(), l.y.size()); ++i) {
                if (!std::isfinite(l.y[i]) || (p_.log_y && l.y[i] <= 0.0)) {
                    continue;
                }
                xr_.add(l.x[i]);
                yr_.add(ytrans(l.y[i]));
            }
        }
        xr_.finish();
        yr_.finish();
        const double pad = 0.05 * (yr_.hi - yr_.lo);
        yr_.hi += pad;
        if (!(p_.bars.size() && !p_.log_y && yr_.lo == 0.0)) {
            yr_.lo -= pad;
        }
    }

    double px(double x) const {
        const double w = kPanelW - kLeft - kRight;
        return ox_ + kLeft + (x - xr_.lo) / (xr_.hi - xr_.lo) * w;
    }
    double py_raw(double ty) const {
        const double h = kPanelH - kTop - kBottom;
        return oy_ + kTop + h - (ty - yr_.lo) / (yr_.hi - yr_.lo) * h;
    }
    double py(double y) const { return py_raw(ytrans(y)); }

    const Panel& p_;
    double ox_;
    double oy_;
    Range xr_;
    Range yr_;
};

} // namespace

std::string render(const std::vector<Panel>& panels, int columns, const std::string& title) {
    columns = std::max(1, std::min<int>(columns, static_cast<int>(std::max<std::size_t>(1, panels.size()))));
    const int rows = static_cast<int>((panels.size() + static_cast<std::size_t>(columns) - 1) / columns);
    const double top = title.empty() ? 0.0 : kTitleH;
    const double width = kPanelW * columns;
    const double height = top + kPanelH * std::max(rows, 1);
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                    num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) +
                    "\" font-family=\"sans-serif\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty()) {
        s += "<text x=\"" + num(width / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"15\">" +
             escape(title) + "</text>\n";
    }
    for (std::size_t i = 0; i < panels.size(); ++i) {
        const double ox = kPanelW * static_cast<double>(i % static_cast<std::size_t>(columns));
        const double oy = top + kPanelH * static_cast<double>(i / static_cast<std::size_t>(columns));
        s += PanelRenderer(panels[i], ox, oy).draw();
    }
    s += "</svg>\n";
    return s;
}

} // namespace qqm::svg
