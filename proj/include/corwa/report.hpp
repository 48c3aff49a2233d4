#pragma once

#include "corwa/certificate.hpp"
#include "corwa/simulate.hpp"

#include <string>
#include <vector>

namespace corwa {

/// Certificate values on a regular grid over two columns of one agent's
/// state; every other coordinate sits at the equilibrium.
struct ContourGrid {
    std::vector<double> xs, ys;
    Mat values;  // ys.size() x xs.size()
    std::string title;
};

ContourGrid certificate_grid(const CoRwaCertificate& cert, const Scenario& sc, int agent, int axis_x, int axis_y,
                             int resolution, bool barrier);

struct Series {
    std::string name;
    std::vector<double> x, y;
};

std::string heatmap_svg(const ContourGrid& grid, const std::string& xlabel, const std::string& ylabel);
std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                          const std::string& ylabel);
/// Planar paths plus obstacle discs.
std::string trajectory_svg(const std::vector<Series>& paths, const MetricGeometry& g, const std::string& title);

struct DistanceSample {
    double time = 0.0;
    double agent = 0.0;     // smallest inter-agent clearance
    double obstacle = 0.0;  // smallest obstacle clearance, infinite without obstacles
};
std::vector<DistanceSample> distance_series(const Scenario& sc, const std::vector<JointState>& states,
                                            const MetricGeometry& g);

/// Inverse of SimulationResult::trajectory_csv (states only).
std::vector<JointState> parse_trajectory_csv(const std::string& text, int q, int n);

/// Files render_report needs in a run directory.
std::vector<std::string> required_artifacts();

/// Writes plots and tables next to the artifacts and returns their names.
/// Throws Error listing every missing artifact.
std::vector<std::string> render_report(const std::string& dir);

}  // namespace corwa
