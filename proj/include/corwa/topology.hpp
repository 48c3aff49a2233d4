#pragma once

#include "corwa/interval.hpp"

#include <json.hpp>

#include <vector>

namespace corwa {

struct SystemTopology {
    int q = 1;
    int state_dim = 1;
    std::vector<int> max_neighbors;             // M_i, self included
    std::vector<double> radius;                 // sensing radius R_i
    std::vector<std::vector<int>> communicable;  // candidate neighbor ids per agent
    std::vector<int> position_slice;            // state columns used for distances

    /// Every agent may talk to every other agent.
    static SystemTopology all_to_all(int q, int state_dim, int m, double r, std::vector<int> position_slice);

    void validate() const;
    int M(int i) const { return max_neighbors[i]; }
    /// Flattened extended-state width M_i * n.
    int extended_dim(int i) const { return max_neighbors[i] * state_dim; }

    nlohmann::json to_json() const;
    static SystemTopology from_json(const nlohmann::json& j, int state_dim);
};

struct JointState {
    Mat x;  // q x n
    double time = 0.0;
};

struct InteractionMask {
    std::vector<int> a;             // length q, a[i] = 1
    std::vector<int> neighbor_ids;  // selected neighbors, nearest first, self excluded
};

struct ExtendedState {
    Mat rows;  // M_i x n
    int valid_rows = 1;
    /// Row-major flattening used as network input.
    Vec flat() const;
};

double agent_distance(const Mat& x, const SystemTopology& topo, int i, int j);

std::vector<int> neighbor_set(const JointState& joint, const SystemTopology& topo, int i);
InteractionMask interaction_mask(const JointState& joint, const SystemTopology& topo, int i);
ExtendedState extended_state(const JointState& joint, const SystemTopology& topo, int i);
/// Extended state from an explicit neighbor list (frozen masks).
ExtendedState extended_state(const Mat& x, const SystemTopology& topo, int i, const std::vector<int>& neighbors);

/// Row-major flattening of a matrix / inverse.
Vec flatten(const Mat& m);
Mat unflatten(const Vec& v, int rows, int cols);

}  // namespace corwa
