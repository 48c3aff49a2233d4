#include "corwa/training.hpp"

#include "corwa/errors.hpp"
#include "corwa/optim.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numbers>
#include <numeric>

namespace corwa {

std::string to_string(RegionTag t) {
    switch (t) {
        case RegionTag::interior: return "interior";
        case RegionTag::unsafe: return "unsafe";
        case RegionTag::goal: return "goal";
        case RegionTag::initial: return "initial";
    }
    return "interior";
}

// ------------------------------------------------------------ config

void TrainingConfig::validate() const {
    slacks.validate();
    if (!(learning_rate >= 0.0)) throw ConfigError("training: learning rate must be nonnegative");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("training: decay must lie in (0, 1]");
    if (decay_every < 1 || epochs < 0 || batch_size < 1 || dataset_size < 1)
        throw ConfigError("training: counts must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("training: split must lie in (0, 1)");
    if (!(dt >= 0.0)) throw ConfigError("training: dt must be nonnegative");
    if (unsafe_fraction < 0.0 || boundary_fraction < 0.0 || unsafe_fraction + boundary_fraction > 1.0)
        throw ConfigError("training: stratification fractions must sum to at most 1");
    if (!(counterexample_weight >= 1.0)) throw ConfigError("training: counterexample weight must be >= 1");
    if (pretrain_epochs < 0) throw ConfigError("training: pretrain epochs must be nonnegative");
}

nlohmann::json TrainingConfig::to_json() const {
    return {{"slacks", slacks.to_json()},
            {"learning_rate", learning_rate},
            {"decay", decay},
            {"decay_every", decay_every},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"dataset_size", dataset_size},
            {"train_fraction", train_fraction},
            {"seed", seed},
            {"adam", adam},
            {"dt", dt},
            {"unsafe_fraction", unsafe_fraction},
            {"boundary_fraction", boundary_fraction},
            {"boundary_noise", boundary_noise},
            {"counterexample_weight", counterexample_weight},
            {"v_hidden", v_hidden},
            {"h_hidden", h_hidden},
            {"pi_hidden", pi_hidden},
            {"pi_activation", to_string(pi_activation)},
            {"pretrain_epochs", pretrain_epochs},
            {"pretrain_learning_rate", pretrain_learning_rate}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    const nlohmann::json defaults = c.to_json();
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) throw ConfigError("training: unknown key '" + key + "'");
    if (j.contains("slacks")) c.slacks = Slacks::from_json(j.at("slacks"));
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("learning_rate", c.learning_rate);
    get("decay", c.decay);
    get("decay_every", c.decay_every);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("dataset_size", c.dataset_size);
    get("train_fraction", c.train_fraction);
    get("seed", c.seed);
    get("adam", c.adam);
    get("dt", c.dt);
    get("unsafe_fraction", c.unsafe_fraction);
    get("boundary_fraction", c.boundary_fraction);
    get("boundary_noise", c.boundary_noise);
    get("counterexample_weight", c.counterexample_weight);
    get("v_hidden", c.v_hidden);
    get("h_hidden", c.h_hidden);
    get("pi_hidden", c.pi_hidden);
    if (j.contains("pi_activation")) c.pi_activation = activation_from_string(j.at("pi_activation").get<std::string>());
    get("pretrain_epochs", c.pretrain_epochs);
    get("pretrain_learning_rate", c.pretrain_learning_rate);
    c.validate();
    return c;
}

// ------------------------------------------------------------ coupling parameterization

namespace {

double inv_softplus(double y) {
    y = std::max(y, 1e-12);
    return y > 30.0 ? y : y + std::log(-std::expm1(-y));
}

/// d softplus(r) / dr at the r with softplus(r) = y.
double softplus_slope(double y) { return -std::expm1(-std::max(y, 0.0)); }

bool communicates(const SystemTopology& topo, int i, int j) {
    const auto& c = topo.communicable[i];
    return std::find(c.begin(), c.end(), j) != c.end();
}

double lambda_raw(const Mat& m, int i, int j) { return i == j ? inv_softplus(-m(i, i)) : inv_softplus(m(i, j)); }
double upsilon_raw(const Mat& m, int i, int j) { return i == j ? m(i, i) : inv_softplus(m(i, j)); }

}  // namespace

ParameterMap::ParameterMap(const CoRwaCertificate& cert, const Scenario& sc) {
    const int q = cert.q();
    v_off_.assign(q, -1);
    h_off_.assign(q, -1);
    pi_off_.assign(q, -1);
    lam_free_ = Mat::Zero(q, q);
    ups_free_ = Mat::Zero(q, q);
    int off = 0;
    for (int i = 0; i < q; ++i) {
        if (!cert.is_active(i)) continue;
        v_off_[i] = off;
        off += cert.V[i].num_parameters();
        h_off_[i] = off;
        off += cert.h[i].num_parameters();
        pi_off_[i] = off;
        off += cert.pi[i].num_parameters();
        lam_free_(i, i) = ups_free_(i, i) = 1.0;
        for (int j = 0; j < q; ++j)
            if (j != i && cert.is_active(j) && communicates(sc.topo, i, j)) lam_free_(i, j) = ups_free_(i, j) = 1.0;
    }
    lam_off_ = off;
    ups_off_ = off + q * q;
    total_ = off + 2 * q * q;
}

Vec ParameterMap::get(const CoRwaCertificate& cert) const {
    const int q = cert.q();
    Vec p = Vec::Zero(total_);
    for (int i = 0; i < q; ++i) {
        if (v_off_[i] < 0) continue;
        p.segment(v_off_[i], cert.V[i].num_parameters()) = cert.V[i].net.parameters();
        p.segment(h_off_[i], cert.h[i].num_parameters()) = cert.h[i].net.parameters();
        p.segment(pi_off_[i], cert.pi[i].num_parameters()) = cert.pi[i].net.parameters();
    }
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            if (lam_free_(i, j) != 0.0) p[lam_off_ + i * q + j] = lambda_raw(cert.Lambda, i, j);
            if (ups_free_(i, j) != 0.0) p[ups_off_ + i * q + j] = upsilon_raw(cert.Upsilon, i, j);
        }
    return p;
}

void ParameterMap::set(CoRwaCertificate& cert, const Vec& p) const {
    if (p.size() != total_) throw DimensionError("parameter vector has wrong size");
    const int q = cert.q();
    for (int i = 0; i < q; ++i) {
        if (v_off_[i] < 0) continue;
        cert.V[i].net.set_parameters(p.segment(v_off_[i], cert.V[i].num_parameters()));
        cert.h[i].net.set_parameters(p.segment(h_off_[i], cert.h[i].num_parameters()));
        cert.pi[i].net.set_parameters(p.segment(pi_off_[i], cert.pi[i].num_parameters()));
    }
    // an unchanged raw value keeps the stored entry bit for bit
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            if (lam_free_(i, j) != 0.0) {
                const double r = p[lam_off_ + i * q + j];
                if (r != lambda_raw(cert.Lambda, i, j)) cert.Lambda(i, j) = i == j ? -softplus(r) : softplus(r);
            }
            if (ups_free_(i, j) != 0.0) {
                const double r = p[ups_off_ + i * q + j];
                if (r != upsilon_raw(cert.Upsilon, i, j)) cert.Upsilon(i, j) = i == j ? r : softplus(r);
            }
        }
}

bool project_coupling(CoRwaCertificate& cert, const Scenario& /*sc*/) {
    const int q = cert.q();
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            if (i == j) continue;
            cert.Lambda(i, j) = std::max(cert.Lambda(i, j), 0.0);
            cert.Upsilon(i, j) = std::max(cert.Upsilon(i, j), 0.0);
        }
    bool hurwitz = false;
    try {
        hurwitz = check_hurwitz(cert.Lambda);
    } catch (const DiagnosticsError&) {
        hurwitz = false;
    }
    if (hurwitz) return false;
    // strict row dominance of a Metzler matrix gives Hurwitz
    for (int i = 0; i < q; ++i) {
        double off = 0.0;
        for (int j = 0; j < q; ++j)
            if (j != i) off += cert.Lambda(i, j);
        cert.Lambda(i, i) = std::min(cert.Lambda(i, i), -(off + 0.01));
    }
    return true;
}

// ------------------------------------------------------------ loss

namespace {

struct AgentPass {
    ExtendedState e;
    ControllerNet::Trace pt;
    Vec u;
    Mat g;
    ScalarCertificate::Trace vt, vnt, ht, hnt;
    double v = 0.0, vn = 0.0, h = 0.0, hn = 0.0;
};

struct Accumulator {
    std::vector<Vec> gv, gh, gp;
    Mat dlam, dups;
};

/// Adds one sample's weighted loss (divided by `norm`) and, if acc is set, its gradient.
void sample_loss(const CoRwaCertificate& cert, const Scenario& sc, const Sample& s, const TrainingConfig& cfg,
                 double dt, double norm, LossTerms& out, Accumulator* acc) {
    const int q = sc.q(), n = sc.n();
    const auto& topo = sc.topo;
    const Slacks& sl = cfg.slacks;
    const JointState joint{s.x, 0.0};
    std::vector<std::vector<int>> nbs(q);
    std::vector<AgentPass> a(q);
    Mat next = s.x;
    for (int j = 0; j < q; ++j) {
        nbs[j] = neighbor_set(joint, topo, j);
        a[j].e = extended_state(s.x, topo, j, nbs[j]);
        const Vec flat = a[j].e.flat();
        const auto& dyn = *sc.model.agents[j];
        if (cert.is_active(j)) {
            a[j].u = cert.pi[j].forward(flat, a[j].pt);
        } else {
            const Vec exo = j < static_cast<int>(s.exo.size()) && s.exo[j].size() > 0 ? s.exo[j]
                                                                                        : sc.exogenous_at(0.0, j);
            a[j].u = clip_to(sc.model.control_bounds[j], exo);
        }
        a[j].g = dyn.input_matrix(a[j].e.rows, a[j].e.valid_rows);
        const Vec d = dyn.drift(a[j].e.rows, a[j].e.valid_rows) + a[j].g * a[j].u;
        if (!d.allFinite()) throw IntegrationError(j, "non-finite derivative in loss");
        next.row(j) += dt * d.transpose();
    }
    for (int j = 0; j < q; ++j) {
        if (!cert.is_active(j)) continue;
        a[j].v = cert.V[j].value(s.x.row(j).transpose(), a[j].vt);
        a[j].vn = cert.V[j].value(next.row(j).transpose(), a[j].vnt);
        a[j].h = cert.h[j].value(a[j].e.flat(), a[j].ht);
        a[j].hn = cert.h[j].value(extended_state(next, topo, j, nbs[j]).flat(), a[j].hnt);
        // a NaN would silently fail every hinge comparison below
        if (!std::isfinite(a[j].v + a[j].vn + a[j].h + a[j].hn) || !a[j].u.allFinite()) {
            out.clf = out.cbf = std::numeric_limits<double>::quiet_NaN();
            return;
        }
    }

    const double c = s.weight / norm;
    std::vector<double> aV(q, 0.0), aVn(q, 0.0), ah(q, 0.0), ahn(q, 0.0);
    std::vector<Vec> au(q);
    for (int j = 0; j < q; ++j) au[j] = Vec::Zero(a[j].u.size());

    for (int i = 0; i < q; ++i) {
        if (!cert.is_active(i)) continue;
        const RegionTag tag = s.tags.at(i);
        if (sc.nominal) {
            const Vec nom = clip_to(sc.model.control_bounds[i], sc.nominal(joint, i));
            const Vec diff = a[i].u - nom;
            out.ctrl += c * diff.squaredNorm();
            au[i] += (sl.sigma[0] * c * 2.0) * diff;
        }
        if (tag != RegionTag::goal) {
            double r = (a[i].vn - a[i].v) / dt - cert.Lambda(i, i) * a[i].v;
            for (int j : nbs[i])
                if (cert.is_active(j)) r -= cert.Lambda(i, j) * a[j].v;
            const double eV = i < static_cast<int>(cert.eV.size()) ? cert.eV[i] : 0.0;
            if (r + sl.eps[0] + eV > 0.0) {
                out.clf += c * (r + sl.eps[0] + eV);
                const double k = sl.sigma[1] * c;
                aVn[i] += k / dt;
                aV[i] += k * (-1.0 / dt - cert.Lambda(i, i));
                if (acc) acc->dlam(i, i) -= k * a[i].v;
                for (int j : nbs[i]) {
                    if (!cert.is_active(j)) continue;
                    aV[j] -= k * cert.Lambda(i, j);
                    if (acc) acc->dlam(i, j) -= k * a[j].v;
                }
            }
        }
        const double k = sl.sigma[2] * c;
        double rb = (a[i].hn - a[i].h) / dt - cert.Upsilon(i, i) * a[i].h;
        for (int j : nbs[i])
            if (cert.is_active(j)) rb -= cert.Upsilon(i, j) * a[j].h;
        const double eh = i < static_cast<int>(cert.eh.size()) ? cert.eh[i] : 0.0;
        if (-rb + sl.eps[2] + eh > 0.0) {
            out.cbf += c * (-rb + sl.eps[2] + eh);
            ahn[i] -= k / dt;
            ah[i] += k * (1.0 / dt + cert.Upsilon(i, i));
            if (acc) acc->dups(i, i) += k * a[i].h;
            for (int j : nbs[i]) {
                if (!cert.is_active(j)) continue;
                ah[j] += k * cert.Upsilon(i, j);
                if (acc) acc->dups(i, j) += k * a[j].h;
            }
        }
        if (tag == RegionTag::unsafe) {
            const double v = a[i].h + sl.eps0 + sl.eps[3];
            if (v > 0.0) {
                out.cbf += c * v;
                ah[i] += k;
            }
        } else if (tag == RegionTag::initial || tag == RegionTag::goal) {
            const double v = -a[i].h + sl.eps0 + sl.eps[4];
            if (v > 0.0) {
                out.cbf += c * v;
                ah[i] -= k;
            }
        }
    }
    if (!acc) return;

    for (int j = 0; j < q; ++j) {
        if (!cert.is_active(j)) continue;
        if (aV[j] != 0.0) cert.V[j].backward(a[j].vt, aV[j], &acc->gv[j]);
        if (aVn[j] != 0.0) {
            const Vec gx = cert.V[j].backward(a[j].vnt, aVn[j], &acc->gv[j]);
            au[j] += dt * (a[j].g.transpose() * gx);
        }
        if (ah[j] != 0.0) cert.h[j].backward(a[j].ht, ah[j], &acc->gh[j]);
        if (ahn[j] != 0.0) {
            const Vec gx = cert.h[j].backward(a[j].hnt, ahn[j], &acc->gh[j]);
            for (int k = 0; k < a[j].e.valid_rows; ++k) {
                const int id = k == 0 ? j : nbs[j][k - 1];
                if (cert.is_active(id)) au[id] += dt * (a[id].g.transpose() * gx.segment(k * n, n));
            }
        }
    }
    for (int j = 0; j < q; ++j)
        if (cert.is_active(j) && au[j].squaredNorm() > 0.0) cert.pi[j].backward(a[j].pt, au[j], &acc->gp[j]);
}

double step_of(const Scenario& sc, const TrainingConfig& cfg) { return cfg.dt > 0.0 ? cfg.dt : sc.dt; }

}  // namespace

LossTerms loss_terms(const CoRwaCertificate& cert, const Scenario& sc, const std::vector<const Sample*>& batch,
                     const TrainingConfig& cfg, Vec* grad, const ParameterMap* map) {
    if (batch.empty()) throw std::invalid_argument("loss_terms: empty batch");
    if (grad && !map) throw std::invalid_argument("loss_terms: gradient needs a parameter map");
    const int q = cert.q();
    double norm = 0.0;
    for (const Sample* s : batch) {
        if (static_cast<int>(s->tags.size()) != q) throw ConfigError("loss_terms: sample lacks region tags");
        norm += s->weight;
    }
    const double dt = step_of(sc, cfg);
    LossTerms out;
    Accumulator acc;
    if (grad) {
        acc.gv.resize(q);
        acc.gh.resize(q);
        acc.gp.resize(q);
        for (int i = 0; i < q; ++i) {
            if (!cert.is_active(i)) continue;
            acc.gv[i] = Vec::Zero(cert.V[i].num_parameters());
            acc.gh[i] = Vec::Zero(cert.h[i].num_parameters());
            acc.gp[i] = Vec::Zero(cert.pi[i].num_parameters());
        }
        acc.dlam = Mat::Zero(q, q);
        acc.dups = Mat::Zero(q, q);
    }
    for (const Sample* s : batch) sample_loss(cert, sc, *s, cfg, dt, norm, out, grad ? &acc : nullptr);
    const auto& sig = cfg.slacks.sigma;
    out.total = sig[0] * out.ctrl + sig[1] * out.clf + sig[2] * out.cbf;
    if (!grad) return out;

    *grad = Vec::Zero(map->size());
    for (int i = 0; i < q; ++i) {
        if (!cert.is_active(i)) continue;
        grad->segment(map->v_offset(i), acc.gv[i].size()) = acc.gv[i];
        grad->segment(map->h_offset(i), acc.gh[i].size()) = acc.gh[i];
        grad->segment(map->pi_offset(i), acc.gp[i].size()) = acc.gp[i];
    }
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            if (map->lambda_free()(i, j) != 0.0) {
                const double y = i == j ? -cert.Lambda(i, i) : cert.Lambda(i, j);
                const double slope = (i == j ? -1.0 : 1.0) * softplus_slope(y);
                (*grad)[map->lambda_offset() + i * q + j] = acc.dlam(i, j) * slope;
            }
            if (map->upsilon_free()(i, j) != 0.0) {
                const double slope = i == j ? 1.0 : softplus_slope(cert.Upsilon(i, j));
                (*grad)[map->upsilon_offset() + i * q + j] = acc.dups(i, j) * slope;
            }
        }
    return out;
}

LossTerms loss_terms(const CoRwaCertificate& cert, const Scenario& sc, const std::vector<Sample>& batch,
                     const TrainingConfig& cfg) {
    std::vector<const Sample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    return loss_terms(cert, sc, ptrs, cfg);
}

// ------------------------------------------------------------ training

TrainingResult train_round(CoRwaCertificate& cert, const Scenario& sc, const Dataset& data,
                           const TrainingConfig& cfg) {
    cfg.validate();
    if (data.train.empty()) throw std::invalid_argument("train_round: empty training set");
    TrainingResult res;
    const ParameterMap map(cert, sc);
    Vec params = map.get(cert);
    Optimizer opt(map.size(), cfg.adam);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate * std::pow(cfg.decay, epoch / cfg.decay_every);
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch;
        double seen = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Sample*> batch;
            for (std::size_t k = start; k < end; ++k) batch.push_back(&data.train[order[k]]);
            Vec grad;
            const LossTerms l = loss_terms(cert, sc, batch, cfg, &grad, &map);
            if (!std::isfinite(l.total) || !grad.allFinite())
                throw DivergenceError(epoch, l.total, "training loss is not finite");
            const double w = static_cast<double>(batch.size());
            rec.train.ctrl += w * l.ctrl;
            rec.train.clf += w * l.clf;
            rec.train.cbf += w * l.cbf;
            rec.train.total += w * l.total;
            seen += w;
            if (lr > 0.0) {
                opt.step(params, grad, lr);
                map.set(cert, params);
            }
        }
        rec.train.ctrl /= seen;
        rec.train.clf /= seen;
        rec.train.cbf /= seen;
        rec.train.total /= seen;
        if (project_coupling(cert, sc)) {
            ++res.projections;
            params = map.get(cert);
        }
        if (!data.validation.empty()) {
            rec.val_total = loss_terms(cert, sc, data.validation, cfg).total;
            if (!std::isfinite(rec.val_total)) throw DivergenceError(epoch, rec.val_total, "validation loss is not finite");
        }
        res.curve.push_back(rec);
    }
    return res;
}

// ------------------------------------------------------------ sampling

std::vector<RegionTag> region_tags(const Scenario& sc, const Mat& x) {
    const JointState joint{x, 0.0};
    std::vector<RegionTag> tags(sc.q(), RegionTag::interior);
    for (int i = 0; i < sc.q(); ++i) {
        const ExtendedState e = extended_state(joint, sc.topo, i);
        const Vec flat = e.flat();
        const auto& s = sc.sets[i];
        if (s.unsafe.contains(flat, sc.n(), e.valid_rows)) tags[i] = RegionTag::unsafe;
        else if (s.initial.contains(flat, sc.n(), e.valid_rows)) tags[i] = RegionTag::initial;
        else if (s.goal.contains(flat, sc.n(), e.valid_rows)) tags[i] = RegionTag::goal;
    }
    return tags;
}

double unsafe_fraction(const Dataset& data, const Scenario& sc) {
    double total = 0.0, unsafe = 0.0;
    for (const auto* part : {&data.train, &data.validation})
        for (const auto& s : *part)
            for (int i = 0; i < sc.q(); ++i) {
                if (sc.is_exogenous(i)) continue;
                total += 1.0;
                if (s.tags[i] == RegionTag::unsafe) unsafe += 1.0;
            }
    return total > 0.0 ? unsafe / total : 0.0;
}

namespace {

Vec uniform_point(const Interval& box, std::mt19937_64& rng) {
    Vec x(box.size());
    for (int k = 0; k < box.size(); ++k)
        x[k] = box.upper[k] > box.lower[k] ? std::uniform_real_distribution<double>(box.lower[k], box.upper[k])(rng)
                                           : box.lower[k];
    return x;
}

/// Rejection sample from a region's own-state part; falls back to its bounding box.
Vec point_in(const Region& r, const Interval& domain, std::mt19937_64& rng) {
    const Interval bb = r.bounding_box(domain);
    if (!bb.valid()) return uniform_point(domain, rng);
    for (int t = 0; t < 200; ++t) {
        const Vec p = uniform_point(bb, rng);
        if (r.contains_state(p)) return p;
    }
    return uniform_point(bb, rng);
}

enum class Draw { stratified, force_unsafe };

Sample draw_sample(const Scenario& sc, const TrainingConfig& cfg, std::mt19937_64& rng, Draw mode) {
    const int q = sc.q(), n = sc.n();
    Sample s;
    s.x = Mat(q, n);
    s.exo.resize(q);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int j = 0; j < q; ++j) {
        const Interval& dom = sc.model.state_domain[j];
        const auto& sets = sc.sets[j];
        const double r = unit(rng);
        Vec p;
        const bool force = mode == Draw::force_unsafe && !sc.is_exogenous(j);
        if (!sets.unsafe.is_empty() && (force || r < cfg.unsafe_fraction)) {
            p = point_in(sets.unsafe, dom, rng);
        } else if (!force && r < cfg.unsafe_fraction + cfg.boundary_fraction) {
            std::vector<const Region*> candidates;
            for (const Region* reg : {&sets.initial, &sets.goal, &sets.unsafe})
                if (!reg->is_empty()) candidates.push_back(reg);
            if (candidates.empty()) {
                p = uniform_point(dom, rng);
            } else {
                const Region* reg = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
                p = point_in(*reg, dom, rng);
                for (int k = 0; k < n; ++k)
                    p[k] += std::normal_distribution<double>(0.0, cfg.boundary_noise * dom.width()[k])(rng);
                p = p.cwiseMax(dom.lower).cwiseMin(dom.upper);
            }
        } else {
            p = uniform_point(dom, rng);
        }
        s.x.row(j) = p.transpose();
        if (sc.is_exogenous(j)) s.exo[j] = uniform_point(sc.model.control_bounds[j], rng);
    }
    s.tags = region_tags(sc, s.x);
    return s;
}

}  // namespace

Dataset sample_dataset(const Scenario& sc, const TrainingConfig& cfg) {
    sc.validate();
    cfg.validate();
    for (const auto& d : sc.model.state_domain)
        if (!(d.width().array() >= 0.0).all()) throw ConfigError("sample_dataset: empty domain");
    std::mt19937_64 rng(cfg.seed);
    std::vector<Sample> all;
    all.reserve(cfg.dataset_size);
    for (int s = 0; s < cfg.dataset_size; ++s) all.push_back(draw_sample(sc, cfg, rng, Draw::stratified));

    bool any_unsafe = false;
    for (int i = 0; i < sc.q(); ++i) any_unsafe |= !sc.is_exogenous(i) && !sc.sets[i].unsafe.is_empty();
    if (any_unsafe) {
        Dataset probe;
        probe.train = all;
        double frac = unsafe_fraction(probe, sc);
        // top up by redrawing samples with every agent forced into its unsafe set
        for (std::size_t k = 0; frac < 0.10 && k < all.size(); ++k) {
            all[k] = draw_sample(sc, cfg, rng, Draw::force_unsafe);
            probe.train = all;
            frac = unsafe_fraction(probe, sc);
        }
    }
    std::shuffle(all.begin(), all.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(all.size())));
    Dataset d;
    d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    d.validation.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    return d;
}

// ------------------------------------------------------------ initialization

std::optional<Mat> lyapunov_matrix(const Mat& a) {
    const int n = static_cast<int>(a.rows());
    if (spectral_abscissa(a) >= -1e-9) return std::nullopt;
    const Mat id = Mat::Identity(n, n);
    Mat k = Mat::Zero(n * n, n * n);
    // column-major vec: vec(A^T P) = (I kron A^T) vec(P), vec(P A) = (A^T kron I) vec(P)
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            k.block(r * n, c * n, n, n) += id(r, c) * a.transpose();
            k.block(r * n, c * n, n, n) += a(c, r) * id;
        }
    Vec rhs(n * n);
    for (int c = 0; c < n; ++c) rhs.segment(c * n, n) = -id.col(c);
    const Vec sol = k.fullPivLu().solve(rhs);
    Mat p(n, n);
    for (int c = 0; c < n; ++c) p.col(c) = sol.segment(c * n, n);
    return Mat(0.5 * (p + p.transpose()));
}

namespace {

Vec half_widths(const Interval& box) {
    Vec w = 0.5 * box.width();
    for (int k = 0; k < w.size(); ++k)
        if (!(w[k] > 0.0)) w[k] = 1.0;
    return w;
}

/// Jacobian of agent i's nominal closed-loop derivative in its own state at the joint equilibrium.
Mat linearized_loop(const Scenario& sc, int i) {
    const int q = sc.q(), n = sc.n();
    Mat x(q, n);
    for (int j = 0; j < q; ++j) x.row(j) = sc.equilibrium[j].transpose();
    auto deriv = [&](const Mat& xx) {
        const JointState joint{xx, 0.0};
        const ExtendedState e = extended_state(joint, sc.topo, i);
        const Vec u = clip_to(sc.model.control_bounds[i], sc.nominal(joint, i));
        return sc.model.agents[i]->derivative(e.rows, e.valid_rows, u);
    };
    const double h = 1e-6;
    Mat a(n, n);
    for (int c = 0; c < n; ++c) {
        Mat p = x, m = x;
        p(i, c) += h;
        m(i, c) -= h;
        a.col(c) = (deriv(p) - deriv(m)) / (2.0 * h);
    }
    return a;
}

/// Fits the positive-definite form to z^T P z on the normalized unit box.
void fit_quadratic(ScalarCertificate& v, const Mat& p, std::mt19937_64& rng) {
    const int n = static_cast<int>(p.rows());
    std::vector<Vec> zs;
    for (int s = 0; s < 512; ++s) {
        Vec z(n);
        for (int k = 0; k < n; ++k) z[k] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
        zs.push_back(z);
    }
    Vec params = v.net.parameters();
    Optimizer opt(static_cast<int>(params.size()), true);
    for (int epoch = 0; epoch < 150; ++epoch) {
        for (std::size_t start = 0; start < zs.size(); start += 64) {
            Vec grad = Vec::Zero(params.size());
            for (std::size_t k = start; k < start + 64 && k < zs.size(); ++k) {
                const Vec x = v.shift + v.scale.cwiseProduct(zs[k]);
                ScalarCertificate::Trace t;
                const double err = v.value(x, t) - zs[k].dot(p * zs[k]);
                v.backward(t, 2.0 * err / 64.0, &grad);
            }
            opt.step(params, grad, 1e-2);
            v.net.set_parameters(params);
        }
    }
}

}  // namespace

CoRwaCertificate initialize_certificate(const Scenario& sc, const TrainingConfig& cfg, const Dataset* data) {
    sc.validate();
    cfg.validate();
    const int q = sc.q(), n = sc.n();
    std::mt19937_64 rng(cfg.seed + 1);
    CoRwaCertificate cert;
    cert.active.assign(q, 1);
    cert.V.resize(q);
    cert.h.resize(q);
    cert.pi.resize(q);
    cert.slacks = cfg.slacks;
    cert.eV.assign(q, 0.0);
    cert.eh.assign(q, 0.0);
    for (int i = 0; i < q; ++i) {
        if (sc.is_exogenous(i)) {
            cert.active[i] = 0;
            continue;
        }
        const Interval& dom = sc.model.state_domain[i];
        const Interval box = neighborhood_box(sc.topo, i, sc.model.state_domain);
        const int w = sc.topo.extended_dim(i), m = sc.model.agents[i]->control_dim();

        auto& V = cert.V[i];
        std::vector<int> vs{n};
        vs.insert(vs.end(), cfg.v_hidden.begin(), cfg.v_hidden.end());
        vs.push_back(n);
        V.net = FeedForwardNet::random(vs, Activation::tanh, Activation::identity, rng);
        V.form = ScalarForm::positive_definite;
        V.shift = sc.equilibrium[i];
        V.scale = half_widths(dom);

        auto& h = cert.h[i];
        std::vector<int> hs{w};
        hs.insert(hs.end(), cfg.h_hidden.begin(), cfg.h_hidden.end());
        hs.push_back(1);
        h.net = FeedForwardNet::random(hs, Activation::tanh, Activation::identity, rng);
        h.form = ScalarForm::raw;
        h.shift = box.center();
        h.scale = half_widths(box);

        auto& pi = cert.pi[i];
        std::vector<int> ps{w};
        ps.insert(ps.end(), cfg.pi_hidden.begin(), cfg.pi_hidden.end());
        ps.push_back(m);
        pi.net = FeedForwardNet::random(ps, cfg.pi_activation, Activation::identity, rng);
        pi.shift = box.center();
        pi.scale = half_widths(box);
        pi.bounds = sc.model.control_bounds[i];
        pi.out_shift = pi.bounds.center();
        pi.out_scale = half_widths(pi.bounds);

        Mat p = Mat::Identity(n, n);
        if (sc.nominal) {
            if (auto lp = lyapunov_matrix(linearized_loop(sc, i))) {
                const Mat d = V.scale.asDiagonal();
                p = d * (*lp) * d;
            }
        }
        p /= Eigen::SelfAdjointEigenSolver<Mat>(p).eigenvalues().maxCoeff();
        fit_quadratic(V, p, rng);
    }
    cert.Lambda = Mat::Zero(q, q);
    cert.Upsilon = Mat::Zero(q, q);
    for (int i = 0; i < q; ++i) {
        cert.Lambda(i, i) = -1.0;
        cert.Upsilon(i, i) = -1.0;
        if (!cert.is_active(i)) continue;
        for (int j : sc.topo.communicable[i])
            if (cert.is_active(j)) {
                cert.Lambda(i, j) = 0.01;
                cert.Upsilon(i, j) = softplus(-10.0);
            }
    }
    project_coupling(cert, sc);
    if (data && sc.nominal && cfg.pretrain_epochs > 0) pretrain_controllers(cert, sc, *data, cfg);
    cert.validate();
    return cert;
}

double pretrain_controllers(CoRwaCertificate& cert, const Scenario& sc, const Dataset& data,
                            const TrainingConfig& cfg) {
    if (!sc.nominal) throw ConfigError("pretrain: scenario has no nominal controller");
    const int q = sc.q();
    struct Pair {
        int agent;
        Vec xbar;
        Vec target;
    };
    std::vector<Pair> pairs;
    for (const auto& s : data.train) {
        const JointState joint{s.x, 0.0};
        for (int i = 0; i < q; ++i)
            if (cert.is_active(i))
                pairs.push_back({i, extended_state(joint, sc.topo, i).flat(),
                                 clip_to(sc.model.control_bounds[i], sc.nominal(joint, i))});
    }
    if (pairs.empty()) return 0.0;
    std::vector<Vec> params(q);
    std::vector<Optimizer> opts(q);
    for (int i = 0; i < q; ++i)
        if (cert.is_active(i)) {
            params[i] = cert.pi[i].net.parameters();
            opts[i] = Optimizer(static_cast<int>(params[i].size()), true);
        }
    std::mt19937_64 rng(cfg.seed + 2);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    double mse = 0.0;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        mse = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Vec> grads(q);
            for (int i = 0; i < q; ++i)
                if (cert.is_active(i)) grads[i] = Vec::Zero(params[i].size());
            for (std::size_t k = start; k < end; ++k) {
                const Pair& p = pairs[order[k]];
                ControllerNet::Trace t;
                const Vec diff = cert.pi[p.agent].forward(p.xbar, t) - p.target;
                mse += diff.squaredNorm();
                cert.pi[p.agent].backward(t, 2.0 * diff / static_cast<double>(end - start), &grads[p.agent]);
            }
            for (int i = 0; i < q; ++i)
                if (cert.is_active(i)) {
                    opts[i].step(params[i], grads[i], cfg.pretrain_learning_rate);
                    cert.pi[i].net.set_parameters(params[i]);
                }
        }
        mse /= static_cast<double>(pairs.size());
        if (!std::isfinite(mse)) throw DivergenceError(epoch, mse, "controller pretraining diverged");
    }
    return mse;
}

// ------------------------------------------------------------ nominal controllers

namespace {

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

Vec repulsion(const Vec& away, double dist, double gain, double radius) {
    const double d = std::max(dist, 1e-3);
    if (d >= radius) return Vec::Zero(2);
    const double norm = away.norm();
    if (norm <= 0.0) return Vec::Zero(2);
    return gain * (1.0 / d - 1.0 / radius) / (d * d) * away / norm;
}

}  // namespace

Vec nominal_robot_controller(const JointState& joint, const SystemTopology& topo, int i, const RobotField& field) {
    const Vec p = joint.x.row(i).head(2).transpose();
    Vec v(2);
    if (field.leader >= 0 && field.leader != i) {
        const Vec lead = joint.x.row(field.leader).head(2).transpose();
        v = field.k_form * (lead + field.offset - p);
    } else {
        v = field.k_target * (field.target - p);
    }
    for (std::size_t k = 0; k < field.obstacle_centers.size(); ++k) {
        const Vec away = p - field.obstacle_centers[k];
        v += repulsion(away, away.norm() - field.obstacle_radii[k], field.k_obs, field.d_obs);
    }
    for (int j = 0; j < joint.x.rows(); ++j) {
        if (j == i) continue;
        const Vec away = p - joint.x.row(j).head(2).transpose();
        v += repulsion(away, away.norm(), field.k_agent, field.d_agent);
    }
    if (v.norm() > field.max_speed) v *= field.max_speed / v.norm();
    Vec body(3);
    body << v[0], v[1], -field.k_heading * wrap_angle(joint.x(i, 2));
    const Vec drift = robot_drift(joint, topo, i, field.robot.k, field.robot.eps);
    const Mat g = robot_input_matrix(joint.x(i, 2), field.robot.wheel_radius, field.robot.wheel_offset);
    const Vec u = g.partialPivLu().solve(body - drift);
    return u.cwiseMax(-field.max_wheel).cwiseMin(field.max_wheel);
}

Vec nominal_platoon_controller(const JointState& joint, int i, const PlatoonGains& gains) {
    if (i < 1 || i >= joint.x.rows()) throw std::invalid_argument("platoon controller: follower id out of range");
    const double u = gains.k_s * (joint.x(i, 0) - gains.spacing) + gains.k_v * (joint.x(i - 1, 1) - joint.x(i, 1));
    return Vec::Constant(1, std::clamp(u, -gains.u_max, gains.u_max));
}

}  // namespace corwa
