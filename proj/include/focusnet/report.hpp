#pragma once

#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "focusnet/metrics.hpp"

namespace focusnet {

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses the aggregate table written by write_aggregate_table.
std::vector<AggregateRow> read_aggregate_table(std::istream& in);

struct Bar {
    std::string label;
    double value = 0.0;
    double error = 0.0;   // half-length of the error whisker
    bool highlight = false;
};

/// Vertical bar chart as a standalone SVG document.
std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars);

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Line plot as a standalone SVG document.
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

/// One series per (stage, split) from a JSON-lines training log, x = epoch.
std::vector<Series> loss_series(std::istream& log);

/// Writes dsc.svg and hd95.svg (small organs highlighted) for `rows`, plus loss.svg when
/// `train_log` names an existing file. Throws ReportError before writing anything if
/// `rows` is empty. Returns the paths written.
std::vector<std::filesystem::path> write_plots(const std::vector<AggregateRow>& rows,
                                               const std::filesystem::path& out_dir,
                                               const std::filesystem::path& train_log = {});

}  // namespace focusnet
