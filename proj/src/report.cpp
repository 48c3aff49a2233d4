#include "corwa/report.hpp"

#include "corwa/errors.hpp"
#include "corwa/experiment.hpp"
#include "corwa/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

namespace corwa {

namespace {

constexpr double kW = 640, kH = 480, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string esc(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

struct Frame {
    double x0, x1, y0, y1;
    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
    double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

Frame frame_for(double x0, double x1, double y0, double y1) {
    auto widen = [](double& a, double& b) {
        if (!(std::isfinite(a) && std::isfinite(b))) {
            a = 0.0;
            b = 1.0;
        }
        if (b - a < 1e-12) {
            const double pad = std::max(1e-6, std::abs(a) * 0.05);
            a -= pad;
            b += pad;
        }
    };
    widen(x0, x1);
    widen(y0, y1);
    return {x0, x1, y0, y1};
}

void axes(std::ostringstream& o, const Frame& f, const std::string& title, const std::string& xl,
          const std::string& yl) {
    o << "<rect x='" << kLeft << "' y='" << kTop << "' width='" << kW - kLeft - kRight << "' height='"
      << kH - kTop - kBottom << "' fill='none' stroke='black'/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double x = f.x0 + (f.x1 - f.x0) * k / 4.0, y = f.y0 + (f.y1 - f.y0) * k / 4.0;
        o << "<text x='" << f.px(x) << "' y='" << kH - kBottom + 16 << "' font-size='11' text-anchor='middle'>"
          << fmt(x) << "</text>\n";
        o << "<text x='" << kLeft - 6 << "' y='" << f.py(y) + 4 << "' font-size='11' text-anchor='end'>" << fmt(y)
          << "</text>\n";
    }
    o << "<text x='" << (kLeft + kW - kRight) / 2 << "' y='" << kTop - 14
      << "' font-size='14' text-anchor='middle'>" << esc(title) << "</text>\n";
    o << "<text x='" << (kLeft + kW - kRight) / 2 << "' y='" << kH - 18 << "' font-size='12' text-anchor='middle'>"
      << esc(xl) << "</text>\n";
    o << "<text x='16' y='" << (kTop + kH - kBottom) / 2 << "' font-size='12' text-anchor='middle' transform='rotate(-90 16 "
      << (kTop + kH - kBottom) / 2 << ")'>" << esc(yl) << "</text>\n";
}

std::string open_svg() {
    std::ostringstream o;
    o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH << "' viewBox='0 0 " << kW
      << ' ' << kH << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    return o.str();
}

std::string color(double t) {
    static const std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                             {94, 201, 98}, {253, 231, 37}}};
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
    const int k = std::min(3, static_cast<int>(t));
    const double a = t - k;
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(stops[k][0] + a * (stops[k + 1][0] - stops[k][0])),
                  static_cast<int>(stops[k][1] + a * (stops[k + 1][1] - stops[k][1])),
                  static_cast<int>(stops[k][2] + a * (stops[k + 1][2] - stops[k][2])));
    return buf;
}

Vec position(const Mat& x, const SystemTopology& topo, int i) {
    Vec p(topo.position_slice.size());
    for (std::size_t k = 0; k < topo.position_slice.size(); ++k) p[k] = x(i, topo.position_slice[k]);
    return p;
}

std::vector<std::vector<double>> parse_csv_numbers(const std::string& text, std::vector<std::string>& header) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    header.clear();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (header.empty()) {
            header = cells;
            continue;
        }
        std::vector<double> r;
        for (const auto& c : cells) {
            char* end = nullptr;
            const double v = std::strtod(c.c_str(), &end);
            r.push_back(c.empty() || *end != '\0' ? std::numeric_limits<double>::quiet_NaN() : v);
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

ContourGrid certificate_grid(const CoRwaCertificate& cert, const Scenario& sc, int agent, int axis_x, int axis_y,
                             int resolution, bool barrier) {
    if (agent < 0 || agent >= sc.q() || !cert.is_active(agent))
        throw ConfigError("report: agent " + std::to_string(agent) + " carries no certificate");
    if (axis_x < 0 || axis_y < 0 || axis_x >= sc.n() || axis_y >= sc.n())
        throw ConfigError("report: contour axes outside the state");
    const Interval& dom = sc.model.state_domain[agent];
    ContourGrid g;
    g.title = std::string(barrier ? "h_" : "V_") + std::to_string(agent);
    for (int k = 0; k < resolution; ++k) {
        const double a = (k + 0.5) / resolution;
        g.xs.push_back(dom.lower[axis_x] + a * (dom.upper[axis_x] - dom.lower[axis_x]));
        g.ys.push_back(dom.lower[axis_y] + a * (dom.upper[axis_y] - dom.lower[axis_y]));
    }
    JointState js{Mat(sc.q(), sc.n()), 0.0};
    for (int i = 0; i < sc.q(); ++i) js.x.row(i) = sc.equilibrium[i].transpose();
    g.values = Mat(resolution, resolution);
    for (int r = 0; r < resolution; ++r)
        for (int c = 0; c < resolution; ++c) {
            js.x(agent, axis_x) = g.xs[c];
            js.x(agent, axis_y) = g.ys[r];
            g.values(r, c) = barrier ? cert.h[agent].value(extended_state(js, sc.topo, agent).flat())
                                     : cert.V[agent].value(js.x.row(agent).transpose());
        }
    return g;
}

std::string heatmap_svg(const ContourGrid& g, const std::string& xlabel, const std::string& ylabel) {
    const int nx = static_cast<int>(g.xs.size()), ny = static_cast<int>(g.ys.size());
    const double dx = nx > 1 ? g.xs[1] - g.xs[0] : 1.0, dy = ny > 1 ? g.ys[1] - g.ys[0] : 1.0;
    const Frame f = frame_for(g.xs.front() - dx / 2, g.xs.back() + dx / 2, g.ys.front() - dy / 2, g.ys.back() + dy / 2);
    const double lo = g.values.minCoeff(), hi = g.values.maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;
    std::ostringstream o;
    o << open_svg();
    const double cw = (kW - kLeft - kRight) / nx + 0.05, ch = (kH - kTop - kBottom) / ny + 0.05;
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c)
            o << "<rect x='" << fmt(f.px(g.xs[c] - dx / 2)) << "' y='" << fmt(f.py(g.ys[r] + dy / 2)) << "' width='"
              << fmt(cw) << "' height='" << fmt(ch) << "' fill='" << color((g.values(r, c) - lo) / span) << "'/>\n";
    // zero level set: cells whose sign differs from a right or upper neighbour
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c) {
            const bool s = g.values(r, c) >= 0.0;
            if ((c + 1 < nx && (g.values(r, c + 1) >= 0.0) != s) || (r + 1 < ny && (g.values(r + 1, c) >= 0.0) != s))
                o << "<rect x='" << fmt(f.px(g.xs[c]) - 1) << "' y='" << fmt(f.py(g.ys[r]) - 1)
                  << "' width='2' height='2' fill='white'/>\n";
        }
    axes(o, f, g.title, xlabel, ylabel);
    for (int k = 0; k <= 10; ++k) {
        const double y = kTop + (kH - kTop - kBottom) * (1.0 - k / 10.0) - (kH - kTop - kBottom) / 10.0;
        o << "<rect x='" << kW - kRight + 20 << "' y='" << y << "' width='20' height='" << (kH - kTop - kBottom) / 10.0
          << "' fill='" << color(k / 10.0) << "'/>\n";
    }
    o << "<text x='" << kW - kRight + 46 << "' y='" << kTop + 10 << "' font-size='11'>" << fmt(hi) << "</text>\n";
    o << "<text x='" << kW - kRight + 46 << "' y='" << kH - kBottom << "' font-size='11'>" << fmt(lo) << "</text>\n";
    o << "</svg>\n";
    return o.str();
}

std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                          const std::string& ylabel) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
            if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
            x0 = std::min(x0, s.x[k]);
            x1 = std::max(x1, s.x[k]);
            y0 = std::min(y0, s.y[k]);
            y1 = std::max(y1, s.y[k]);
        }
    const Frame f = frame_for(x0, x1, y0, y1);
    std::ostringstream o;
    o << open_svg();
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* col = kPalette[s % 8];
        o << "<polyline fill='none' stroke='" << col << "' stroke-width='1.5' points='";
        for (std::size_t k = 0; k < series[s].x.size() && k < series[s].y.size(); ++k)
            if (std::isfinite(series[s].x[k]) && std::isfinite(series[s].y[k]))
                o << fmt(f.px(series[s].x[k])) << ',' << fmt(f.py(series[s].y[k])) << ' ';
        o << "'/>\n";
        o << "<text x='" << kW - kRight + 10 << "' y='" << kTop + 14 + 16 * s << "' font-size='11' fill='" << col
          << "'>" << esc(series[s].name) << "</text>\n";
    }
    axes(o, f, title, xlabel, ylabel);
    o << "</svg>\n";
    return o.str();
}

std::string trajectory_svg(const std::vector<Series>& paths, const MetricGeometry& g, const std::string& title) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    auto grow = [&](double x, double y) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    };
    for (const auto& p : paths)
        for (std::size_t k = 0; k < p.x.size(); ++k) grow(p.x[k], p.y[k]);
    for (std::size_t k = 0; k < g.obstacle_centers.size(); ++k) {
        grow(g.obstacle_centers[k][0] - g.obstacle_radii[k], g.obstacle_centers[k][1] - g.obstacle_radii[k]);
        grow(g.obstacle_centers[k][0] + g.obstacle_radii[k], g.obstacle_centers[k][1] + g.obstacle_radii[k]);
    }
    // equal scaling on both axes
    const double sx = (x1 - x0) / (kW - kLeft - kRight), sy = (y1 - y0) / (kH - kTop - kBottom);
    if (sx > sy) {
        const double c = (y0 + y1) / 2, h = sx * (kH - kTop - kBottom) / 2;
        y0 = c - h;
        y1 = c + h;
    } else {
        const double c = (x0 + x1) / 2, w = sy * (kW - kLeft - kRight) / 2;
        x0 = c - w;
        x1 = c + w;
    }
    const Frame f = frame_for(x0, x1, y0, y1);
    std::ostringstream o;
    o << open_svg();
    for (std::size_t k = 0; k < g.obstacle_centers.size(); ++k)
        o << "<circle cx='" << fmt(f.px(g.obstacle_centers[k][0])) << "' cy='" << fmt(f.py(g.obstacle_centers[k][1]))
          << "' r='" << fmt(f.px(g.obstacle_radii[k]) - f.px(0.0)) << "' fill='#bbbbbb'/>\n";
    for (std::size_t s = 0; s < paths.size(); ++s) {
        const char* col = kPalette[s % 8];
        o << "<polyline fill='none' stroke='" << col << "' stroke-width='1.5' points='";
        for (std::size_t k = 0; k < paths[s].x.size(); ++k)
            o << fmt(f.px(paths[s].x[k])) << ',' << fmt(f.py(paths[s].y[k])) << ' ';
        o << "'/>\n";
        o << "<text x='" << kW - kRight + 10 << "' y='" << kTop + 14 + 16 * s << "' font-size='11' fill='" << col
          << "'>" << esc(paths[s].name) << "</text>\n";
    }
    axes(o, f, title, "x (m)", "y (m)");
    o << "</svg>\n";
    return o.str();
}

std::vector<DistanceSample> distance_series(const Scenario& sc, const std::vector<JointState>& states,
                                            const MetricGeometry& g) {
    std::vector<DistanceSample> out;
    for (const auto& js : states) {
        DistanceSample d;
        d.time = js.time;
        d.agent = INFINITY;
        d.obstacle = INFINITY;
        const Mat& x = js.x;
        if (g.spacing_states) {
            for (int i = 1; i < sc.q(); ++i) d.agent = std::min(d.agent, std::max(0.0, x(i, 0)));
        } else {
            for (int i = 0; i < sc.q(); ++i) {
                for (int j = i + 1; j < sc.q(); ++j)
                    d.agent = std::min(d.agent, std::max(0.0, agent_distance(x, sc.topo, i, j) - 2 * g.agent_radius));
                for (std::size_t k = 0; k < g.obstacle_centers.size(); ++k)
                    d.obstacle = std::min(d.obstacle, std::max(0.0, (position(x, sc.topo, i) - g.obstacle_centers[k]).norm() -
                                                                        g.obstacle_radii[k] - g.agent_radius));
            }
        }
        out.push_back(d);
    }
    return out;
}

std::vector<JointState> parse_trajectory_csv(const std::string& text, int q, int n) {
    std::vector<std::string> header;
    const auto rows = parse_csv_numbers(text, header);
    if (header.size() < static_cast<std::size_t>(3 + n) || header[0] != "step")
        throw Error("trajectory csv: unexpected header");
    std::vector<JointState> out;
    for (const auto& r : rows) {
        const int step = static_cast<int>(r[0]), agent = static_cast<int>(r[2]);
        if (agent < 0 || agent >= q) throw Error("trajectory csv: agent id out of range");
        if (step == static_cast<int>(out.size())) out.push_back({Mat::Zero(q, n), r[1]});
        if (step != static_cast<int>(out.size()) - 1) throw Error("trajectory csv: steps out of order");
        for (int k = 0; k < n; ++k) out.back().x(agent, k) = r[3 + k];
    }
    return out;
}

std::vector<std::string> required_artifacts() {
    return {"config.json", "certificate.json", "metrics.csv", "trajectory_000.csv"};
}

std::vector<std::string> render_report(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> missing;
    for (const auto& f : required_artifacts())
        if (!fs::exists(fs::path(dir) / f)) missing.push_back(f);
    if (!missing.empty()) {
        std::string msg = "report: " + dir + " lacks";
        for (const auto& m : missing) msg += " " + m;
        throw Error(msg);
    }
    auto path = [&](const std::string& f) { return (fs::path(dir) / f).string(); };
    const ExperimentConfig cfg = ExperimentConfig::load(path("config.json"));
    const Scenario sc = cfg.build();
    const MetricGeometry geo = cfg.geometry();
    const CoRwaCertificate cert = CoRwaCertificate::from_json(nlohmann::json::parse(read_file(path("certificate.json"))));
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& body) {
        write_atomic(path(name), body);
        written.push_back(name);
    };

    const auto states = parse_trajectory_csv(read_file(path("trajectory_000.csv")), sc.q(), sc.n());
    if (geo.spacing_states) {
        std::vector<Series> gaps;
        for (int i = 1; i < sc.q(); ++i) {
            Series s{"gap " + std::to_string(i), {}, {}};
            for (const auto& js : states) {
                s.x.push_back(js.time);
                s.y.push_back(js.x(i, 0));
            }
            gaps.push_back(s);
        }
        emit("trajectory.svg", line_plot_svg(gaps, "spacing to predecessor", "t (s)", "gap (m)"));
    } else if (sc.topo.position_slice.size() >= 2) {
        std::vector<Series> paths;
        for (int i = 0; i < sc.q(); ++i) {
            Series s{"agent " + std::to_string(i), {}, {}};
            for (const auto& js : states) {
                const Vec p = position(js.x, sc.topo, i);
                s.x.push_back(p[0]);
                s.y.push_back(p[1]);
            }
            paths.push_back(s);
        }
        emit("trajectory.svg", trajectory_svg(paths, geo, "trajectories"));
    } else {
        std::vector<Series> lines;
        for (int i = 0; i < sc.q(); ++i) {
            Series s{"agent " + std::to_string(i), {}, {}};
            for (const auto& js : states) {
                s.x.push_back(js.time);
                s.y.push_back(js.x(i, sc.topo.position_slice[0]));
            }
            lines.push_back(s);
        }
        emit("trajectory.svg", line_plot_svg(lines, "positions", "t (s)", "position"));
    }

    Series da{"inter-agent", {}, {}}, dob{"obstacle", {}, {}};
    for (const auto& d : distance_series(sc, states, geo)) {
        da.x.push_back(d.time);
        da.y.push_back(d.agent);
        dob.x.push_back(d.time);
        dob.y.push_back(d.obstacle);
    }
    std::vector<Series> dist{da};
    if (!geo.obstacle_centers.empty()) dist.push_back(dob);
    emit("distances.svg", line_plot_svg(dist, "minimum clearance", "t (s)", "distance (m)"));

    const int ax = cfg.report.axes[0], ay = cfg.report.axes[1];
    const std::string xl = "x" + std::to_string(ax), yl = "x" + std::to_string(ay);
    emit("contour_V.svg", heatmap_svg(certificate_grid(cert, sc, cfg.report.agent, ax, ay, cfg.report.grid, false), xl, yl));
    emit("contour_h.svg", heatmap_svg(certificate_grid(cert, sc, cfg.report.agent, ax, ay, cfg.report.grid, true), xl, yl));

    // metric table: mean, min, max over rollouts
    std::vector<std::string> header;
    const auto rows = parse_csv_numbers(read_file(path("metrics.csv")), header);
    const auto cols = MetricsReport::columns();
    std::ostringstream table, svg;
    table << "statistic";
    for (const auto& c : cols) table << ',' << c;
    table << '\n';
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='120'>\n<rect width='100%' height='100%' fill='white'/>\n";
    const char* stats[] = {"mean", "min", "max"};
    for (int k = 0; k < static_cast<int>(cols.size()); ++k)
        svg << "<text x='" << 90 + 130 * k << "' y='24' font-size='12' font-weight='bold'>" << cols[k] << "</text>\n";
    for (int s = 0; s < 3; ++s) {
        table << stats[s];
        svg << "<text x='10' y='" << 50 + 22 * s << "' font-size='12'>" << stats[s] << "</text>\n";
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto it = std::find(header.begin(), header.end(), cols[k]);
            if (it == header.end()) throw Error("report: metrics.csv lacks column " + cols[k]);
            const std::size_t c = static_cast<std::size_t>(it - header.begin());
            double acc = s == 0 ? 0.0 : (s == 1 ? INFINITY : -INFINITY);
            int used = 0;
            for (const auto& r : rows) {
                if (c >= r.size() || !std::isfinite(r[c])) continue;
                acc = s == 0 ? acc + r[c] : (s == 1 ? std::min(acc, r[c]) : std::max(acc, r[c]));
                ++used;
            }
            if (s == 0) acc = used ? acc / used : NAN;
            if (!used) acc = NAN;
            table << ',' << (std::isfinite(acc) ? fmt(acc) : "");
            svg << "<text x='" << 90 + 130 * k << "' y='" << 50 + 22 * s << "' font-size='12'>"
                << (std::isfinite(acc) ? fmt(acc) : "-") << "</text>\n";
        }
        table << '\n';
    }
    svg << "</svg>\n";
    emit("metrics_table.csv", table.str());
    emit("metrics_table.svg", svg.str());

    if (fs::exists(path("cegis_iterations.csv"))) {
        const auto it = parse_csv_numbers(read_file(path("cegis_iterations.csv")), header);
        std::map<std::string, std::size_t> col;
        for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
        if (col.count("iteration") && col.count("verified") && col.count("queries")) {
            Series v{"verified", {}, {}}, q{"queries", {}, {}};
            for (const auto& r : it) {
                v.x.push_back(r[col["iteration"]]);
                v.y.push_back(r[col["verified"]]);
                q.x.push_back(r[col["iteration"]]);
                q.y.push_back(r[col["queries"]]);
            }
            emit("cegis_progress.svg", line_plot_svg({v, q}, "verification per pass", "pass", "queries"));
        }
    }
    return written;
}

}  // namespace corwa
