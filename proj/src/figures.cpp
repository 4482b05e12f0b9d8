#include "seqlearn/figures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "seqlearn/common.hpp"

namespace seqlearn::figures {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 460;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 160;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 55;

const char* kPalette[] = {"#0077bb", "#cc3311", "#009988", "#ee7733", "#33bbee",
                          "#ee3377", "#bbbbbb", "#000000", "#997700", "#6600cc"};

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(6) << v;
    return ss.str();
}

std::string tick_label(double v, bool log_axis) {
    std::ostringstream ss;
    if (log_axis) {
        ss << std::setprecision(3) << std::pow(10.0, v);
    } else {
        ss << std::setprecision(4) << v;
    }
    return ss.str();
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::vector<Series>& series,
                    const PlotOptions& options) {
    // Collect transformed points.
    std::vector<Series> ts;
    double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
    bool first = true;
    for (const auto& s : series) {
        Series t;
        t.label = s.label;
        for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            double x = s.x[i], y = s.y[i];
            if (options.log_x) {
                if (x <= 0) continue;
                x = std::log10(x);
            }
            if (options.log_y) {
                if (y <= 0) continue;
                y = std::log10(y);
            }
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            t.x.push_back(x);
            t.y.push_back(y);
            if (first) {
                min_x = max_x = x;
                min_y = max_y = y;
                first = false;
            } else {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
        }
        ts.push_back(std::move(t));
    }
    if (max_x - min_x < 1e-12) {
        min_x -= 0.5;
        max_x += 0.5;
    }
    if (max_y - min_y < 1e-12) {
        min_y -= 0.5;
        max_y += 0.5;
    }

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double x) { return kMarginLeft + (x - min_x) / (max_x - min_x) * plot_w; };
    auto sy = [&](double y) {
        return kHeight - kMarginBottom - (y - min_y) / (max_y - min_y) * plot_h;
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << options.title << "</text>\n";

    // axes
    svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
        << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double tx = min_x + (max_x - min_x) * i / 4;
        const double ty = min_y + (max_y - min_y) * i / 4;
        svg << "<line x1=\"" << fmt(sx(tx)) << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
            << fmt(sx(tx)) << "\" y2=\"" << kHeight - kMarginBottom + 5
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << fmt(sx(tx)) << "\" y=\"" << kHeight - kMarginBottom + 20
            << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(tx, options.log_x)
            << "</text>\n";
        svg << "<line x1=\"" << kMarginLeft - 5 << "\" y1=\"" << fmt(sy(ty)) << "\" x2=\""
            << kMarginLeft << "\" y2=\"" << fmt(sy(ty)) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << kMarginLeft - 9 << "\" y=\"" << fmt(sy(ty) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(ty, options.log_y)
            << "</text>\n";
    }
    svg << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"13\">" << options.x_label
        << (options.log_x ? " (log scale)" : "") << "</text>\n";
    svg << "<text x=\"18\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
        << kMarginTop + plot_h / 2 << ")\">" << options.y_label
        << (options.log_y ? " (log scale)" : "") << "</text>\n";

    for (size_t s = 0; s < ts.size(); ++s) {
        const auto& t = ts[s];
        if (t.x.empty()) continue;
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (size_t i = 0; i < t.x.size(); ++i)
            svg << fmt(sx(t.x[i])) << ',' << fmt(sy(t.y[i])) << ' ';
        svg << "\"/>\n";
        for (size_t i = 0; i < t.x.size(); ++i)
            svg << "<circle cx=\"" << fmt(sx(t.x[i])) << "\" cy=\"" << fmt(sy(t.y[i]))
                << "\" r=\"2.2\" fill=\"" << color << "\"/>\n";
        const double ly = kMarginTop + 16 + 16 * static_cast<double>(s);
        svg << "<line x1=\"" << kWidth - kMarginRight + 10 << "\" y1=\"" << ly - 4 << "\" x2=\""
            << kWidth - kMarginRight + 34 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << kWidth - kMarginRight + 40 << "\" y=\"" << ly
            << "\" font-size=\"11\">" << t.label << "</text>\n";
    }
    svg << "</svg>\n";
    write_text_file(path, svg.str());
}

}  // namespace seqlearn::figures
