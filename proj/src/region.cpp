#include "corwa/region.hpp"

#include "corwa/errors.hpp"

namespace corwa {

Region Region::everything() {
    Region r;
    r.kind_ = Kind::everything;
    return r;
}

Region Region::empty() { return Region(); }

Region Region::box(Vec lower, Vec upper) {
    if (lower.size() != upper.size()) throw DimensionError("region box: bound sizes differ");
    Region r;
    r.kind_ = Kind::box;
    r.a_ = std::move(lower);
    r.b_ = std::move(upper);
    return r;
}

Region Region::disc(Vec center, double radius, std::vector<int> slice) {
    if (static_cast<int>(center.size()) != static_cast<int>(slice.size()))
        throw DimensionError("region disc: center does not match position slice");
    if (!(radius >= 0.0)) throw ConfigError("region disc: negative radius");
    Region r;
    r.kind_ = Kind::disc;
    r.a_ = std::move(center);
    r.scalar_ = radius;
    r.slice_ = std::move(slice);
    return r;
}

Region Region::halfspace(Vec normal, double offset) {
    Region r;
    r.kind_ = Kind::halfspace;
    r.a_ = std::move(normal);
    r.scalar_ = offset;
    return r;
}

Region Region::pairwise_distance(double threshold, std::vector<int> slice) {
    Region r;
    r.kind_ = Kind::pairwise_distance;
    r.scalar_ = threshold;
    r.slice_ = std::move(slice);
    return r;
}

Region Region::unite(std::vector<Region> parts) {
    std::vector<std::shared_ptr<const Region>> kept;
    for (auto& p : parts) {
        if (p.kind_ == Kind::empty) continue;
        if (p.kind_ == Kind::everything) return everything();
        kept.push_back(std::make_shared<const Region>(std::move(p)));
    }
    if (kept.empty()) return empty();
    if (kept.size() == 1) return *kept.front();
    Region r;
    r.kind_ = Kind::unite;
    r.parts_ = std::move(kept);
    return r;
}

Region Region::complement(Region of) {
    if (of.kind_ == Kind::empty) return everything();
    if (of.kind_ == Kind::everything) return empty();
    Region r;
    r.kind_ = Kind::complement;
    r.parts_.push_back(std::make_shared<const Region>(std::move(of)));
    return r;
}

Range distance_range(const Interval& a, const Interval& b, const std::vector<int>& slice) {
    Range sq{0.0, 0.0};
    for (int c : slice) sq += square(a[c] - b[c]);
    return {std::sqrt(std::max(sq.lo, 0.0)), std::sqrt(sq.hi)};
}

bool Region::contains(const Vec& xbar, int n, int valid_rows) const {
    switch (kind_) {
        case Kind::everything: return true;
        case Kind::empty: return false;
        case Kind::box:
            for (int c = 0; c < a_.size(); ++c)
                if (xbar[c] < a_[c] || xbar[c] > b_[c]) return false;
            return true;
        case Kind::disc: {
            double s = 0.0;
            for (std::size_t k = 0; k < slice_.size(); ++k) {
                const double d = xbar[slice_[k]] - a_[k];
                s += d * d;
            }
            return std::sqrt(s) <= scalar_;
        }
        case Kind::halfspace: return a_.dot(xbar.head(a_.size())) <= scalar_;
        case Kind::pairwise_distance:
            for (int k = 1; k < valid_rows; ++k) {
                double s = 0.0;
                for (int c : slice_) {
                    const double d = xbar[c] - xbar[k * n + c];
                    s += d * d;
                }
                if (std::sqrt(s) <= scalar_) return true;
            }
            return false;
        case Kind::unite:
            for (const auto& p : parts_)
                if (p->contains(xbar, n, valid_rows)) return true;
            return false;
        case Kind::complement: return !parts_.front()->contains(xbar, n, valid_rows);
    }
    return false;
}

Containment Region::classify(const Interval& xbar, int n, int valid_rows) const {
    switch (kind_) {
        case Kind::everything: return Containment::inside;
        case Kind::empty: return Containment::outside;
        case Kind::box: {
            bool inside = true;
            for (int c = 0; c < a_.size(); ++c) {
                if (xbar.upper[c] < a_[c] || xbar.lower[c] > b_[c]) return Containment::outside;
                if (xbar.lower[c] < a_[c] || xbar.upper[c] > b_[c]) inside = false;
            }
            return inside ? Containment::inside : Containment::partial;
        }
        case Kind::disc: {
            Range sq{0.0, 0.0};
            for (std::size_t k = 0; k < slice_.size(); ++k) sq += square(xbar[slice_[k]] - a_[k]);
            const double r2 = scalar_ * scalar_;
            if (sq.hi <= r2) return Containment::inside;
            if (sq.lo > r2) return Containment::outside;
            return Containment::partial;
        }
        case Kind::halfspace: {
            Range s{0.0, 0.0};
            for (int c = 0; c < a_.size(); ++c) s += a_[c] * xbar[c];
            if (s.hi <= scalar_) return Containment::inside;
            if (s.lo > scalar_) return Containment::outside;
            return Containment::partial;
        }
        case Kind::pairwise_distance: {
            const Interval own = xbar.segment(0, n);
            bool any_partial = false;
            for (int k = 1; k < valid_rows; ++k) {
                const Range d = distance_range(own, xbar.segment(k * n, n), slice_);
                if (d.hi <= scalar_) return Containment::inside;
                if (d.lo <= scalar_) any_partial = true;
            }
            return any_partial ? Containment::partial : Containment::outside;
        }
        case Kind::unite: {
            bool all_outside = true;
            for (const auto& p : parts_) {
                const auto c = p->classify(xbar, n, valid_rows);
                if (c == Containment::inside) return Containment::inside;
                if (c == Containment::partial) all_outside = false;
            }
            return all_outside ? Containment::outside : Containment::partial;
        }
        case Kind::complement: {
            const auto c = parts_.front()->classify(xbar, n, valid_rows);
            if (c == Containment::inside) return Containment::outside;
            if (c == Containment::outside) return Containment::inside;
            return Containment::partial;
        }
    }
    return Containment::partial;
}

Interval Region::bounding_box(const Interval& domain) const {
    Interval out = domain;
    switch (kind_) {
        case Kind::box:
            out.lower = domain.lower.cwiseMax(a_);
            out.upper = domain.upper.cwiseMin(b_);
            break;
        case Kind::disc:
            for (std::size_t k = 0; k < slice_.size(); ++k) {
                const int c = slice_[k];
                out.lower[c] = std::max(domain.lower[c], a_[k] - scalar_);
                out.upper[c] = std::min(domain.upper[c], a_[k] + scalar_);
            }
            break;
        case Kind::unite: {
            bool first = true;
            for (const auto& p : parts_) {
                const Interval b = p->bounding_box(domain);
                if (!b.valid()) continue;
                out = first ? b : out.hull(b);
                first = false;
            }
            break;
        }
        default: break;
    }
    return out;
}

bool Region::uses_neighbors() const {
    if (kind_ == Kind::pairwise_distance) return true;
    for (const auto& p : parts_)
        if (p->uses_neighbors()) return true;
    return false;
}

namespace {

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec to_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void require_keys(const nlohmann::json& j, std::initializer_list<const char*> keys) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : keys) ok = ok || key == k;
        if (!ok) throw ConfigError("region: unknown key '" + key + "'");
    }
}

}  // namespace

nlohmann::json Region::to_json() const {
    switch (kind_) {
        case Kind::everything: return {{"type", "everything"}};
        case Kind::empty: return {{"type", "empty"}};
        case Kind::box: return {{"type", "box"}, {"lower", to_std(a_)}, {"upper", to_std(b_)}};
        case Kind::disc: return {{"type", "disc"}, {"center", to_std(a_)}, {"radius", scalar_}};
        case Kind::halfspace: return {{"type", "halfspace"}, {"normal", to_std(a_)}, {"offset", scalar_}};
        case Kind::pairwise_distance: return {{"type", "pairwise_distance"}, {"threshold", scalar_}};
        case Kind::unite: {
            nlohmann::json parts = nlohmann::json::array();
            for (const auto& p : parts_) parts.push_back(p->to_json());
            return {{"type", "union"}, {"parts", parts}};
        }
        case Kind::complement: return {{"type", "complement"}, {"of", parts_.front()->to_json()}};
    }
    return {{"type", "empty"}};
}

Region Region::from_json(const nlohmann::json& j, int n, const std::vector<int>& slice) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "everything" || type == "empty") {
        require_keys(j, {"type"});
        return type == "everything" ? everything() : empty();
    }
    if (type == "box") {
        require_keys(j, {"type", "lower", "upper"});
        Vec lo = to_vec(j.at("lower")), hi = to_vec(j.at("upper"));
        if (lo.size() != n || hi.size() != n) throw ConfigError("region box: bounds must have state dimension");
        return box(std::move(lo), std::move(hi));
    }
    if (type == "disc") {
        require_keys(j, {"type", "center", "radius"});
        return disc(to_vec(j.at("center")), j.at("radius").get<double>(), slice);
    }
    if (type == "halfspace") {
        require_keys(j, {"type", "normal", "offset"});
        Vec a = to_vec(j.at("normal"));
        if (a.size() != n) throw ConfigError("region halfspace: normal must have state dimension");
        return halfspace(std::move(a), j.at("offset").get<double>());
    }
    if (type == "pairwise_distance") {
        require_keys(j, {"type", "threshold"});
        return pairwise_distance(j.at("threshold").get<double>(), slice);
    }
    if (type == "union") {
        require_keys(j, {"type", "parts"});
        std::vector<Region> parts;
        for (const auto& p : j.at("parts")) parts.push_back(from_json(p, n, slice));
        return unite(std::move(parts));
    }
    if (type == "complement") {
        require_keys(j, {"type", "of"});
        return complement(from_json(j.at("of"), n, slice));
    }
    throw ConfigError("region: unknown type '" + type + "'");
}

}  // namespace corwa
