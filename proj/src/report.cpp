#include "focusnet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace focusnet {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 90;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
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

// Round the axis top up to 1, 2 or 5 times a power of ten.
double nice_ceiling(double v) {
    if (!(v > 0)) return 1.0;
    const double p = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * p >= v) return m * p;
    return 10 * p;
}

void header(std::ostringstream& s, const std::string& title) {
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";
}

void y_axis(std::ostringstream& s, double top, const std::string& label) {
    const double h = kHeight - kTop - kBottom;
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + h
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = top * i / 5.0;
        const double y = kTop + h - h * i / 5.0;
        s << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << num(y) << "\" x2=\"" << kWidth - kRight << "\" y2=\""
          << num(y) << "\" stroke=\"#dddddd\"/>\n"
          << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v)
          << "</text>\n";
    }
    s << "<text transform=\"translate(16," << num(kTop + h / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(label) << "</text>\n";
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    return cols;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ReportError("cannot write " + p.string());
    out << text;
}

}  // namespace

std::vector<AggregateRow> read_aggregate_table(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) ||
        line != "organ,name,is_small,cases,dsc_n,dsc_skipped,dsc_mean,dsc_std,hd95_n,hd95_skipped,hd95_mean,hd95_std")
        throw ReportError("aggregate report: missing or unexpected header row");
    std::vector<AggregateRow> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 12) throw ReportError("aggregate report row " + std::to_string(row) + ": expected 12 columns");
        try {
            AggregateRow r;
            r.organ_id = std::stoi(c[0]);
            r.name = c[1];
            r.is_small = c[2] == "1";
            r.cases = std::stoi(c[3]);
            r.dsc_count = std::stoi(c[4]);
            r.dsc_skipped = std::stoi(c[5]);
            r.dsc_mean = std::stod(c[6]);
            r.dsc_std = std::stod(c[7]);
            r.hd95_count = std::stoi(c[8]);
            r.hd95_skipped = std::stoi(c[9]);
            r.hd95_mean = std::stod(c[10]);
            r.hd95_std = std::stod(c[11]);
            out.push_back(std::move(r));
        } catch (const std::logic_error& e) {
            throw ReportError("aggregate report row " + std::to_string(row) + ": " + e.what());
        }
    }
    return out;
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars) {
    double top = 0.0;
    for (const auto& b : bars) top = std::max(top, b.value + b.error);
    top = nice_ceiling(top);
    const double w = kWidth - kLeft - kRight, h = kHeight - kTop - kBottom;
    const double slot = bars.empty() ? w : w / static_cast<double>(bars.size());

    std::ostringstream s;
    header(s, title);
    y_axis(s, top, y_label);
    for (size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
        const double bh = h * std::clamp(b.value / top, 0.0, 1.0);
        s << "<rect x=\"" << num(x) << "\" y=\"" << num(kTop + h - bh) << "\" width=\"" << num(slot * 0.7)
          << "\" height=\"" << num(bh) << "\" fill=\"" << (b.highlight ? kPalette[1] : kPalette[0])
          << "\"><title>" << escape(b.label) << ": " << num(b.value) << "</title></rect>\n";
        if (b.error > 0) {
            const double cx = x + slot * 0.35;
            const double y0 = kTop + h - h * std::clamp((b.value - b.error) / top, 0.0, 1.0);
            const double y1 = kTop + h - h * std::clamp((b.value + b.error) / top, 0.0, 1.0);
            s << "<line x1=\"" << num(cx) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(cx) << "\" y2=\""
              << num(y1) << "\" stroke=\"black\"/>\n";
        }
        const double lx = x + slot * 0.35, ly = kTop + h + 14;
        s << "<text x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" text-anchor=\"end\" transform=\"rotate(-35 "
          << num(lx) << ' ' << num(ly) << ")\">" << escape(b.label) << "</text>\n";
    }
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + h << "\" x2=\"" << kWidth - kRight << "\" y2=\""
      << kTop + h << "\" stroke=\"black\"/>\n</svg>\n";
    return s.str();
}

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
    double xmax = 1.0, ymax = 0.0;
    for (const auto& sr : series) {
        for (double x : sr.x) xmax = std::max(xmax, x);
        for (double y : sr.y)
            if (std::isfinite(y)) ymax = std::max(ymax, y);
    }
    ymax = nice_ceiling(ymax);
    const double w = kWidth - kLeft - kRight, h = kHeight - kTop - kBottom;

    std::ostringstream s;
    header(s, title);
    y_axis(s, ymax, y_label);
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + h << "\" x2=\"" << kWidth - kRight << "\" y2=\""
      << kTop + h << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << num(kLeft + w / 2) << "\" y=\"" << num(kTop + h + 32)
      << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n"
      << "<text x=\"" << kLeft << "\" y=\"" << num(kTop + h + 16) << "\" text-anchor=\"middle\">0</text>\n"
      << "<text x=\"" << kWidth - kRight << "\" y=\"" << num(kTop + h + 16) << "\" text-anchor=\"middle\">"
      << num(xmax) << "</text>\n";
    for (size_t i = 0; i < series.size(); ++i) {
        const auto& sr = series[i];
        const char* colour = kPalette[i % std::size(kPalette)];
        s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        for (size_t k = 0; k < sr.x.size() && k < sr.y.size(); ++k) {
            if (!std::isfinite(sr.y[k])) continue;
            s << num(kLeft + w * sr.x[k] / xmax) << ',' << num(kTop + h - h * std::clamp(sr.y[k] / ymax, 0.0, 1.0))
              << ' ';
        }
        s << "\"/>\n";
        const double ly = kHeight - kBottom + 50 + 14.0 * static_cast<double>(i % 3);
        const double lx = kLeft + 220.0 * static_cast<double>(i / 3);
        s << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
          << colour << "\"/><text x=\"" << num(lx + 14) << "\" y=\"" << num(ly) << "\">" << escape(sr.name)
          << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::vector<Series> loss_series(std::istream& log) {
    std::map<std::string, Series> by_name;
    std::vector<std::string> order;
    std::string line;
    int row = 0;
    while (std::getline(log, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const int stage = j.at("stage").get<int>();
            const double epoch = j.at("epoch").get<double>();
            for (const char* split : {"train", "validation"}) {
                if (!j.contains(split) || !j[split].contains("total")) continue;
                const std::string name = "stage" + std::to_string(stage) + " " + split;
                if (!by_name.contains(name)) {
                    order.push_back(name);
                    by_name[name].name = name;
                }
                by_name[name].x.push_back(epoch);
                by_name[name].y.push_back(j[split]["total"].get<double>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ReportError("training log line " + std::to_string(row) + ": " + e.what());
        }
    }
    std::vector<Series> out;
    for (const auto& n : order) out.push_back(by_name[n]);
    return out;
}

std::vector<fs::path> write_plots(const std::vector<AggregateRow>& rows, const fs::path& out_dir,
                                  const fs::path& train_log) {
    if (rows.empty()) throw ReportError("report has no organ rows; nothing to plot");
    std::vector<Bar> dsc, hd;
    for (const auto& r : rows) {
        dsc.push_back({r.name, r.dsc_count ? r.dsc_mean * 100.0 : 0.0, r.dsc_count ? r.dsc_std * 100.0 : 0.0,
                       r.is_small});
        hd.push_back({r.name, r.hd95_count ? r.hd95_mean : 0.0, r.hd95_count ? r.hd95_std : 0.0, r.is_small});
    }
    std::vector<Series> curves;
    if (!train_log.empty() && fs::exists(train_log)) {
        std::ifstream in(train_log);
        curves = loss_series(in);
    }

    fs::create_directories(out_dir);
    std::vector<fs::path> written{out_dir / "dsc.svg", out_dir / "hd95.svg"};
    write_file(written[0], bar_chart_svg("DSC per organ (small organs in red)", "DSC (%)", dsc));
    write_file(written[1], bar_chart_svg("95% Hausdorff distance per organ (small organs in red)", "95HD (mm)", hd));
    if (!curves.empty()) {
        written.push_back(out_dir / "loss.svg");
        write_file(written.back(), line_plot_svg("Training loss", "epoch", "loss", curves));
    }
    return written;
}

}  // namespace focusnet
