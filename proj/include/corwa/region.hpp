#pragma once

#include "corwa/interval.hpp"

#include <json.hpp>

#include <memory>
#include <vector>

namespace corwa {

enum class Containment { inside, outside, partial };

/// Closed set over an agent's extended state. Primitive shapes look at the
/// own state (row 0); pairwise_distance looks at every valid neighbor row.
/// Extended states are passed flattened row-major with row width n.
class Region {
public:
    enum class Kind { everything, empty, box, disc, halfspace, pairwise_distance, unite, complement };

    Region() = default;
    static Region everything();
    static Region empty();
    static Region box(Vec lower, Vec upper);
    static Region disc(Vec center, double radius, std::vector<int> slice);
    /// { x : normal . x <= offset }
    static Region halfspace(Vec normal, double offset);
    /// Some valid neighbor within `threshold` of the own position.
    static Region pairwise_distance(double threshold, std::vector<int> slice);
    static Region unite(std::vector<Region> parts);
    static Region complement(Region of);

    Kind kind() const { return kind_; }
    bool is_empty() const { return kind_ == Kind::empty; }

    bool contains(const Vec& xbar, int n, int valid_rows) const;
    /// Own state only (no neighbor rows).
    bool contains_state(const Vec& x) const { return contains(x, static_cast<int>(x.size()), 1); }
    Containment classify(const Interval& xbar, int n, int valid_rows) const;

    /// Own-state bounding box of the region intersected with `domain`.
    Interval bounding_box(const Interval& domain) const;
    /// True if the region constrains neighbor rows.
    bool uses_neighbors() const;

    nlohmann::json to_json() const;
    static Region from_json(const nlohmann::json& j, int n, const std::vector<int>& slice);

private:
    Kind kind_ = Kind::empty;
    Vec a_, b_;  // box bounds / disc center / halfspace normal
    double scalar_ = 0.0;
    std::vector<int> slice_;
    std::vector<std::shared_ptr<const Region>> parts_;
};

/// Interval of the Euclidean distance between two boxes' projections on `slice`.
Range distance_range(const Interval& a, const Interval& b, const std::vector<int>& slice);

}  // namespace corwa
