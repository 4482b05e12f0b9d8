#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace seqlearn::figures {

struct Series {
    std::string label;
    std::vector<double> x, y;
};

struct PlotOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = false;
};

// Minimal static line plot; nonpositive points are dropped on log axes.
void write_svg_plot(const std::filesystem::path& path, const std::vector<Series>& series,
                    const PlotOptions& options);

}  // namespace seqlearn::figures
