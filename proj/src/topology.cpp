#include "corwa/topology.hpp"

#include "corwa/errors.hpp"

#include <algorithm>
#include <numeric>

namespace corwa {

SystemTopology SystemTopology::all_to_all(int q, int state_dim, int m, double r,
                                          std::vector<int> position_slice) {
    SystemTopology t;
    t.q = q;
    t.state_dim = state_dim;
    t.max_neighbors.assign(q, m);
    t.radius.assign(q, r);
    t.communicable.resize(q);
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j)
            if (j != i) t.communicable[i].push_back(j);
    t.position_slice = std::move(position_slice);
    t.validate();
    return t;
}

void SystemTopology::validate() const {
    if (q < 1) throw ConfigError("topology: q must be positive");
    if (state_dim < 1) throw ConfigError("topology: state dimension must be positive");
    if (static_cast<int>(max_neighbors.size()) != q || static_cast<int>(radius.size()) != q ||
        static_cast<int>(communicable.size()) != q)
        throw ConfigError("topology: per-agent arrays must have q entries");
    for (int i = 0; i < q; ++i) {
        if (max_neighbors[i] < 1) throw ConfigError("topology: M_i must be at least 1");
        if (!(radius[i] > 0.0)) throw ConfigError("topology: sensing radius must be positive");
        for (int j : communicable[i])
            if (j < 0 || j >= q) throw ConfigError("topology: communicable id out of range");
    }
    if (position_slice.empty()) throw ConfigError("topology: empty position slice");
    for (int c : position_slice)
        if (c < 0 || c >= state_dim) throw ConfigError("topology: position slice index out of range");
}

nlohmann::json SystemTopology::to_json() const {
    return {{"q", q},
            {"M", max_neighbors},
            {"radius", radius},
            {"communicable", communicable},
            {"position_slice", position_slice}};
}

namespace {

template <typename T>
std::vector<T> per_agent(const nlohmann::json& v, int q, const char* name) {
    if (v.is_array()) {
        auto out = v.get<std::vector<T>>();
        if (static_cast<int>(out.size()) != q)
            throw ConfigError(std::string("topology: '") + name + "' needs q entries");
        return out;
    }
    return std::vector<T>(q, v.get<T>());
}

}  // namespace

SystemTopology SystemTopology::from_json(const nlohmann::json& j, int state_dim) {
    for (const auto& [key, _] : j.items())
        if (key != "q" && key != "M" && key != "radius" && key != "communicable" && key != "position_slice")
            throw ConfigError("topology: unknown key '" + key + "'");
    SystemTopology t;
    t.q = j.at("q").get<int>();
    t.state_dim = state_dim;
    t.max_neighbors = per_agent<int>(j.at("M"), t.q, "M");
    t.radius = per_agent<double>(j.at("radius"), t.q, "radius");
    const auto& c = j.at("communicable");
    if (c.is_string()) {
        if (c.get<std::string>() != "all") throw ConfigError("topology: communicable must be \"all\" or a list");
        t.communicable.resize(t.q);
        for (int i = 0; i < t.q; ++i)
            for (int k = 0; k < t.q; ++k)
                if (k != i) t.communicable[i].push_back(k);
    } else {
        t.communicable = c.get<std::vector<std::vector<int>>>();
    }
    t.position_slice = j.at("position_slice").get<std::vector<int>>();
    t.validate();
    return t;
}

Vec ExtendedState::flat() const { return flatten(rows); }

Vec flatten(const Mat& m) {
    Vec v(m.size());
    int k = 0;
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) v[k++] = m(r, c);
    return v;
}

Mat unflatten(const Vec& v, int rows, int cols) {
    if (v.size() != rows * cols) throw DimensionError("unflatten: size mismatch");
    Mat m(rows, cols);
    int k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = v[k++];
    return m;
}

double agent_distance(const Mat& x, const SystemTopology& topo, int i, int j) {
    double s = 0.0;
    for (int c : topo.position_slice) {
        const double d = x(i, c) - x(j, c);
        s += d * d;
    }
    return std::sqrt(s);
}

namespace {

void check_joint(const Mat& x, const SystemTopology& topo, int i) {
    if (i < 0 || i >= topo.q) throw std::invalid_argument("agent id " + std::to_string(i) + " out of range");
    if (x.rows() != topo.q || x.cols() != topo.state_dim)
        throw DimensionError("joint state shape does not match topology");
}

}  // namespace

std::vector<int> neighbor_set(const JointState& joint, const SystemTopology& topo, int i) {
    check_joint(joint.x, topo, i);
    std::vector<std::pair<double, int>> cand;
    for (int j : topo.communicable[i]) {
        if (j == i) continue;
        const double d = agent_distance(joint.x, topo, i, j);
        if (d <= topo.radius[i]) cand.emplace_back(d, j);
    }
    std::sort(cand.begin(), cand.end());
    const int keep = std::min<int>(topo.max_neighbors[i] - 1, static_cast<int>(cand.size()));
    std::vector<int> out;
    for (int k = 0; k < keep; ++k) out.push_back(cand[k].second);
    return out;
}

InteractionMask interaction_mask(const JointState& joint, const SystemTopology& topo, int i) {
    InteractionMask m;
    m.neighbor_ids = neighbor_set(joint, topo, i);
    m.a.assign(topo.q, 0);
    m.a[i] = 1;
    for (int j : m.neighbor_ids) m.a[j] = 1;
    return m;
}

ExtendedState extended_state(const Mat& x, const SystemTopology& topo, int i, const std::vector<int>& neighbors) {
    check_joint(x, topo, i);
    if (static_cast<int>(neighbors.size()) > topo.max_neighbors[i] - 1)
        throw DimensionError("extended_state: too many neighbors");
    ExtendedState e;
    e.rows = Mat::Zero(topo.max_neighbors[i], topo.state_dim);
    e.rows.row(0) = x.row(i);
    for (std::size_t k = 0; k < neighbors.size(); ++k) e.rows.row(k + 1) = x.row(neighbors[k]);
    e.valid_rows = 1 + static_cast<int>(neighbors.size());
    return e;
}

ExtendedState extended_state(const JointState& joint, const SystemTopology& topo, int i) {
    return extended_state(joint.x, topo, i, neighbor_set(joint, topo, i));
}

}  // namespace corwa
