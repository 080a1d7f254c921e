#pragma once
// Self-contained SVG line charts plus the smoothed CSV they are drawn from.
// The CSV is the agreement surface: every plotted point is exactly one CSV
// row, serialized with shortest round-trip formatting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "iclnav/errors.hpp"
#include "iclnav/metrics.hpp"

namespace iclnav {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Trailing mean over `window` samples; output index i corresponds to input
/// index window-1+i, so the curve starts once a full window exists.
/// window = 1 is a passthrough copy.
inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
    if (window < 1) throw ValidationError("smoothing window must be >= 1");
    if (window == 1) return v;
    std::vector<double> out;
    if (v.size() < static_cast<size_t>(window)) return out;
    out.reserve(v.size() - window + 1);
    double sum = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        sum += v[i];
        if (i >= static_cast<size_t>(window)) sum -= v[i - window];
        if (i + 1 >= static_cast<size_t>(window)) out.push_back(sum / window);
    }
    return out;
}

inline Series smooth_series(const Series& s, int window) {
    Series out;
    out.label = s.label;
    out.y = moving_average(s.y, window);
    if (window == 1) {
        out.x = s.x;
    } else if (!out.y.empty()) {
        out.x.assign(s.x.begin() + (window - 1), s.x.end());
    }
    return out;
}

namespace detail_plot {

/// Shortest decimal that round-trips to the same double.
inline std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out.push_back(c);
    }
    out += "\"";
    return out;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> colors = {
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
        "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
    return colors;
}

}  // namespace detail_plot

/// series,x,y rows for every point of every series.
inline void write_series_csv(std::ostream& out, const std::vector<Series>& series) {
    out << "series,x,y\n";
    for (const Series& s : series)
        for (size_t i = 0; i < s.x.size(); ++i)
            out << detail_plot::csv_escape(s.label) << ',' << detail_plot::fmt(s.x[i]) << ','
                << detail_plot::fmt(s.y[i]) << '\n';
}

/// Fixed-size chart with axes, ticks, a legend, and optional dashed vertical
/// markers (stage boundaries). Series with no points still get a legend
/// entry so their absence is visible.
inline void write_line_chart_svg(std::ostream& out, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series,
                                 const std::vector<double>& vlines = {}) {
    const double width = 960, height = 540;
    const double left = 70, right = width - 200, top = 50, bottom = height - 60;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const Series& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax - xmin < 1e-12) {
        xmin -= 1;
        xmax += 1;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 1;
        ymax += 1;
    } else {
        double pad = 0.05 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;
    }
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
    auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };
    char coord[64];
    auto num = [&](double v) {
        snprintf(coord, sizeof(coord), "%.2f", v);
        return std::string(coord);
    };
    auto tick = [&](double v) {
        snprintf(coord, sizeof(coord), "%.4g", v);
        return std::string(coord);
    };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << (left + (right - left) / 2) << "\" y=\"28\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << detail_plot::xml_escape(title)
        << "</text>\n";

    for (int i = 0; i <= 5; ++i) {
        double xv = xmin + (xmax - xmin) * i / 5.0;
        double yv = ymin + (ymax - ymin) * i / 5.0;
        out << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << top << "\" x2=\"" << num(px(xv))
            << "\" y2=\"" << bottom << "\" stroke=\"#eeeeee\"/>\n";
        out << "<line x1=\"" << left << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << right
            << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#eeeeee\"/>\n";
        out << "<text x=\"" << num(px(xv)) << "\" y=\"" << (bottom + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << tick(xv) << "</text>\n";
        out << "<text x=\"" << (left - 8) << "\" y=\"" << num(py(yv) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick(yv)
            << "</text>\n";
    }
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << (right - left)
        << "\" height=\"" << (bottom - top) << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    out << "<text x=\"" << (left + (right - left) / 2) << "\" y=\"" << (height - 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
        << detail_plot::xml_escape(xlabel) << "</text>\n";
    out << "<text x=\"20\" y=\"" << (top + (bottom - top) / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 20 " << (top + (bottom - top) / 2) << ")\">"
        << detail_plot::xml_escape(ylabel) << "</text>\n";

    for (double v : vlines) {
        if (v < xmin || v > xmax) continue;
        out << "<line x1=\"" << num(px(v)) << "\" y1=\"" << top << "\" x2=\"" << num(px(v))
            << "\" y2=\"" << bottom << "\" stroke=\"#999999\" stroke-dasharray=\"5,4\"/>\n";
    }

    const auto& colors = detail_plot::palette();
    for (size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        const std::string& color = colors[si % colors.size()];
        if (!s.x.empty()) {
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (size_t i = 0; i < s.x.size(); ++i)
                out << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
            out << "\"/>\n";
        }
        double ly = top + 16 + 18 * static_cast<double>(si);
        out << "<line x1=\"" << (right + 12) << "\" y1=\"" << ly << "\" x2=\"" << (right + 36)
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << (right + 42) << "\" y=\"" << (ly + 4)
            << "\" font-family=\"sans-serif\" font-size=\"12\">"
            << detail_plot::xml_escape(s.label) << "</text>\n";
    }
    out << "</svg>\n";
}

struct PlotRequest {
    std::vector<std::string> metrics_files;
    std::string out_dir;
    int window = 100;
    bool use_eval = false;   // plot greedy evaluation episodes instead of training
    bool by_object = false;  // one series per target object instead of per run
};

struct PlotOutputs {
    std::vector<Series> success;  // smoothed, as written
    std::vector<Series> episode_return;
    std::string success_svg;
    std::string return_svg;
    std::string csv_path;
};

/// Reads metrics files, smooths success and return curves, and writes
/// success.svg, return.svg and smoothed.csv into out_dir.
inline PlotOutputs run_plot(const PlotRequest& req) {
    if (req.metrics_files.empty()) throw ConfigError("plot: no metrics files given");
    if (req.window < 1) throw ConfigError("plot: smoothing window must be >= 1");

    struct Raw {
        Series success;
        Series ret;
    };
    std::map<std::string, Raw> grouped;  // ordered for stable series order
    std::vector<double> stage_marks;

    for (const std::string& file : req.metrics_files) {
        std::vector<EpisodeRecord> records = read_metrics_file(file);
        if (records.empty()) throw EmptyInput("plot: " + file + " holds no records");
        // run directories all call their stream metrics.jsonl, so the
        // directory is the identity there; ad-hoc files keep their own name
        std::filesystem::path fp(file);
        std::string stem = fp.filename() == "metrics.jsonl"
                               ? fp.parent_path().filename().string()
                               : fp.stem().string();
        if (stem.empty()) stem = fp.filename().string();
        int last_stage = 0;
        int used = 0;
        for (const EpisodeRecord& r : records) {
            if (!r.eval && r.stage != last_stage) {
                if (last_stage != 0 && req.metrics_files.size() == 1)
                    stage_marks.push_back(static_cast<double>(r.episode));
                last_stage = r.stage;
            }
            if (r.eval != req.use_eval) continue;
            ++used;
            std::string label = req.by_object ? r.object : stem;
            Raw& raw = grouped[label];
            raw.success.label = label;
            raw.ret.label = label;
            double x = static_cast<double>(r.episode);
            raw.success.x.push_back(x);
            raw.success.y.push_back(r.success ? 1.0 : 0.0);
            raw.ret.x.push_back(x);
            raw.ret.y.push_back(r.episode_return);
        }
        if (used == 0)
            throw EmptyInput("plot: " + file + " holds no " +
                             (req.use_eval ? "evaluation" : "training") + " records");
    }

    PlotOutputs out;
    for (auto& [label, raw] : grouped) {
        out.success.push_back(smooth_series(raw.success, req.window));
        out.episode_return.push_back(smooth_series(raw.ret, req.window));
    }

    std::filesystem::create_directories(req.out_dir);
    std::filesystem::path dir(req.out_dir);
    out.success_svg = (dir / "success.svg").string();
    out.return_svg = (dir / "return.svg").string();
    out.csv_path = (dir / "smoothed.csv").string();

    std::string source = req.use_eval ? "evaluation" : "training";
    {
        std::ofstream f(out.success_svg);
        write_line_chart_svg(f, "Success rate (" + source + ", window " +
                                    std::to_string(req.window) + ")",
                             "episode", "success rate", out.success, stage_marks);
    }
    {
        std::ofstream f(out.return_svg);
        write_line_chart_svg(f, "Episode return (" + source + ", window " +
                                    std::to_string(req.window) + ")",
                             "episode", "return", out.episode_return, stage_marks);
    }
    {
        std::ofstream f(out.csv_path);
        std::vector<Series> all;
        for (const Series& s : out.success) {
            Series named = s;
            named.label = "success/" + s.label;
            all.push_back(std::move(named));
        }
        for (const Series& s : out.episode_return) {
            Series named = s;
            named.label = "return/" + s.label;
            all.push_back(std::move(named));
        }
        write_series_csv(f, all);
    }
    return out;
}

}  // namespace iclnav
