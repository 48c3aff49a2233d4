#include "corwa/transfer.hpp"

#include "corwa/errors.hpp"
#include "corwa/parallel.hpp"
#include "corwa/scenarios.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace corwa {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json box_json(const Interval& b) {
    return {std::vector<double>(b.lower.data(), b.lower.data() + b.lower.size()),
            std::vector<double>(b.upper.data(), b.upper.data() + b.upper.size())};
}

bool contains(const std::vector<int>& sorted, int v) { return std::binary_search(sorted.begin(), sorted.end(), v); }

std::string label_key(const AgentSignature& a) {
    char r[32];
    std::snprintf(r, sizeof r, "%.17g", a.R);
    return a.tag + "#" + hex(a.hash) + "#" + std::to_string(a.M) + "#" + r + (a.exogenous ? "#x" : "#c");
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// ------------------------------------------------------------ signatures

bool AgentSignature::same_label(const AgentSignature& o) const {
    return tag == o.tag && hash == o.hash && M == o.M && R == o.R && exogenous == o.exogenous;
}

json AgentSignature::to_json() const {
    return {{"tag", tag}, {"hash", hex(hash)}, {"M", M}, {"R", R}, {"exogenous", exogenous}};
}

AgentSignature AgentSignature::from_json(const json& j) {
    reject_unknown_keys(j, {{"tag", 0}, {"hash", 0}, {"M", 0}, {"R", 0}, {"exogenous", 0}}, "agent signature");
    AgentSignature a;
    a.tag = j.at("tag").get<std::string>();
    a.hash = std::stoull(j.at("hash").get<std::string>(), nullptr, 16);
    a.M = j.at("M").get<int>();
    a.R = j.at("R").get<double>();
    a.exogenous = j.at("exogenous").get<bool>();
    return a;
}

SystemSignature SystemSignature::of(const Scenario& sc) {
    SystemSignature s;
    for (int i = 0; i < sc.q(); ++i) {
        const AgentDynamics& dyn = *sc.model.agents[i];
        const json body = {{"tag", dyn.tag()},
                           {"params", dyn.params()},
                           {"n", sc.n()},
                           {"U", box_json(sc.model.control_bounds[i])},
                           {"X", box_json(sc.model.state_domain[i])}};
        AgentSignature a;
        a.tag = dyn.tag();
        a.hash = fnv1a(body.dump());
        a.M = sc.topo.M(i);
        a.R = sc.topo.radius[i];
        a.exogenous = sc.is_exogenous(i);
        s.agents.push_back(a);
        std::vector<int> c;
        for (int j : sc.topo.communicable[i])
            if (j != i) c.push_back(j);
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
        s.communicable.push_back(c);
    }
    return s;
}

void SystemSignature::validate() const {
    if (agents.empty()) throw ConfigError("signature: no agents");
    if (communicable.size() != agents.size()) throw ConfigError("signature: communicable lists differ in length");
    for (int i = 0; i < q(); ++i) {
        if (!std::is_sorted(communicable[i].begin(), communicable[i].end()))
            throw ConfigError("signature: communicable list of agent " + std::to_string(i) + " is not sorted");
        for (int j : communicable[i])
            if (j < 0 || j >= q() || j == i)
                throw ConfigError("signature: agent " + std::to_string(i) + " has invalid neighbor " +
                                  std::to_string(j));
    }
}

std::string SystemSignature::role(int i) const {
    std::vector<std::string> nb;
    for (int j : communicable[i]) nb.push_back(label_key(agents[j]));
    std::sort(nb.begin(), nb.end());
    std::string r = label_key(agents[i]) + "[";
    for (const auto& s : nb) r += s + ";";
    return r + "]";
}

json SystemSignature::to_json() const {
    json a = json::array();
    for (const auto& s : agents) a.push_back(s.to_json());
    return {{"agents", a}, {"communicable", communicable}};
}

SystemSignature SystemSignature::from_json(const json& j) {
    reject_unknown_keys(j, {{"agents", 0}, {"communicable", 0}}, "signature");
    SystemSignature s;
    for (const auto& a : j.at("agents")) s.agents.push_back(AgentSignature::from_json(a));
    s.communicable = j.at("communicable").get<std::vector<std::vector<int>>>();
    s.validate();
    return s;
}

// ------------------------------------------------------------ embedding

std::vector<int> Embedding::inverse(int large_q) const {
    std::vector<int> inv(large_q, -1);
    for (std::size_t j = 0; j < tau.size(); ++j) inv[tau[j]] = static_cast<int>(j);
    return inv;
}

bool is_embedding(const SystemSignature& small, const SystemSignature& large, const Embedding& e) {
    if (static_cast<int>(e.tau.size()) != small.q()) return false;
    std::vector<int> seen(large.q(), 0);
    for (int t : e.tau) {
        if (t < 0 || t >= large.q() || seen[t]) return false;
        seen[t] = 1;
    }
    for (int j = 0; j < small.q(); ++j) {
        if (!small.agents[j].same_label(large.agents[e.tau[j]])) return false;
        std::vector<int> image;
        for (int k : small.communicable[j]) image.push_back(e.tau[k]);
        std::sort(image.begin(), image.end());
        if (image != large.communicable[e.tau[j]]) return false;
    }
    return true;
}

std::optional<Embedding> find_embedding(const SystemSignature& small, const SystemSignature& large) {
    small.validate();
    large.validate();
    const int qs = small.q(), ql = large.q();
    if (qs > ql) return std::nullopt;
    std::vector<std::vector<int>> cand(qs);
    for (int j = 0; j < qs; ++j)
        for (int c = 0; c < ql; ++c)
            if (small.agents[j].same_label(large.agents[c]) &&
                small.communicable[j].size() == large.communicable[c].size())
                cand[j].push_back(c);
    std::vector<int> tau(qs, -1);
    std::vector<char> used(ql, 0);
    // candidates in increasing order, so the first complete map is the smallest
    std::function<bool(int)> extend = [&](int j) {
        if (j == qs) return true;
        for (int c : cand[j]) {
            if (used[c]) continue;
            bool ok = true;
            for (int k = 0; k < j && ok; ++k) {
                ok = contains(small.communicable[j], k) == contains(large.communicable[c], tau[k]) &&
                     contains(small.communicable[k], j) == contains(large.communicable[tau[k]], c);
            }
            if (!ok) continue;
            tau[j] = c;
            used[c] = 1;
            if (extend(j + 1)) return true;
            used[c] = 0;
        }
        tau[j] = -1;
        return false;
    };
    if (!extend(0)) return std::nullopt;
    return Embedding{tau};
}

std::vector<int> template_classes(const SystemSignature& small, const SystemSignature& large, const Embedding& e) {
    if (!is_embedding(small, large, e)) throw Error("transfer: not an embedding");
    std::map<std::string, int> by_role;
    for (int s = 0; s < small.q(); ++s) by_role[small.role(s)] = s;  // ids ascend, the largest wins
    const std::vector<int> inv = e.inverse(large.q());
    std::vector<int> cls(large.q());
    for (int a = 0; a < large.q(); ++a) {
        if (inv[a] >= 0) {
            cls[a] = inv[a];
            continue;
        }
        auto it = by_role.find(large.role(a));
        if (it == by_role.end())
            throw Error("transfer: agent " + std::to_string(a) + " of the large system matches no template role");
        cls[a] = it->second;
    }
    return cls;
}

namespace {

/// Small neighbor of template t that plays the part of large neighbor b of a.
int corresponding_neighbor(const SystemSignature& small, const SystemSignature& large, const std::vector<int>& inv,
                           int a, int t, int b) {
    if (inv[a] >= 0) return inv[b];
    const std::string key = label_key(large.agents[b]);
    int rank = 0;
    for (int c : large.communicable[a]) {
        if (c == b) break;
        if (label_key(large.agents[c]) == key) ++rank;
    }
    for (int s : small.communicable[t])
        if (label_key(small.agents[s]) == key && rank-- == 0) return s;
    throw Error("transfer: no neighbor correspondence for agent " + std::to_string(a));
}

}  // namespace

CoRwaCertificate transfer_certificate(const CoRwaCertificate& cert, const SystemSignature& small,
                                      const SystemSignature& large, const Embedding& e) {
    if (cert.q() != small.q()) throw DimensionError("transfer: certificate and small signature differ in size");
    const std::vector<int> cls = template_classes(small, large, e);
    const std::vector<int> inv = e.inverse(large.q());
    const int q = large.q();
    CoRwaCertificate out;
    out.slacks = cert.slacks;
    out.active.resize(q);
    out.V.resize(q);
    out.h.resize(q);
    out.pi.resize(q);
    out.Lambda = Mat::Zero(q, q);
    out.Upsilon = Mat::Zero(q, q);
    const bool margins = static_cast<int>(cert.eV.size()) == cert.q() && static_cast<int>(cert.eh.size()) == cert.q();
    if (margins) {
        out.eV.resize(q);
        out.eh.resize(q);
    }
    for (int a = 0; a < q; ++a) {
        const int t = cls[a];
        out.active[a] = cert.active[t];
        if (cert.is_active(t)) {
            out.V[a] = cert.V[t];
            out.h[a] = cert.h[t];
            out.pi[a] = cert.pi[t];
        }
        if (margins) {
            out.eV[a] = cert.eV[t];
            out.eh[a] = cert.eh[t];
        }
        out.Lambda(a, a) = cert.Lambda(t, t);
        out.Upsilon(a, a) = cert.Upsilon(t, t);
        for (int b : large.communicable[a]) {
            const int s = corresponding_neighbor(small, large, inv, a, t, b);
            out.Lambda(a, b) = cert.Lambda(t, s);
            out.Upsilon(a, b) = cert.Upsilon(t, s);
        }
    }
    if (!check_metzler(out.Lambda)) throw TransferRejected("transfer: tiled Lambda is not Metzler", out.Lambda);
    if (!check_metzler(out.Upsilon)) throw TransferRejected("transfer: tiled Upsilon is not Metzler", out.Upsilon);
    bool hurwitz = false;
    try {
        hurwitz = check_hurwitz(out.Lambda);
    } catch (const DiagnosticsError&) {
        hurwitz = false;
    }
    if (!hurwitz) throw TransferRejected("transfer: tiled Lambda is not Hurwitz", out.Lambda);
    out.validate();
    return out;
}

SurrogateModel transfer_surrogate(const SurrogateModel& s, const SystemSignature& small,
                                  const SystemSignature& large, const Embedding& e) {
    if (static_cast<int>(s.agents.size()) != small.q())
        throw DimensionError("transfer: surrogate and small signature differ in size");
    SurrogateModel out;
    for (int t : template_classes(small, large, e)) out.agents.push_back(s.agents[t]);
    return out;
}

Mat embed_state(const Mat& small_x, const Mat& large_background, const Embedding& e) {
    if (small_x.rows() != static_cast<int>(e.tau.size()) || small_x.cols() != large_background.cols())
        throw DimensionError("embed_state: shapes do not match the embedding");
    Mat x = large_background;
    for (std::size_t k = 0; k < e.tau.size(); ++k) x.row(e.tau[k]) = small_x.row(k);
    return x;
}

double residual_gap(const CoRwaCertificate& small_cert, const Scenario& small_sc,
                    const CoRwaCertificate& large_cert, const Scenario& large_sc, const Embedding& e,
                    const JointState& small_joint, const Mat& large_background) {
    const JointState large_joint{embed_state(small_joint.x, large_background, e), small_joint.time};
    const DerivativeSource ss{&small_sc, nullptr}, ls{&large_sc, nullptr};
    double gap = 0.0;
    auto track = [&gap](double a, double b) {
        const double d = std::abs(a - b);
        if (std::isnan(a) != std::isnan(b)) gap = std::numeric_limits<double>::infinity();
        else if (!std::isnan(d)) gap = std::max(gap, d);
    };
    for (int j = 0; j < small_sc.q(); ++j) {
        if (!small_cert.is_active(j)) continue;
        const int a = e.tau[j];
        track(clf_residual(small_cert, ss, small_joint, j), clf_residual(large_cert, ls, large_joint, a));
        track(cbf_residual(small_cert, ss, small_joint, j), cbf_residual(large_cert, ls, large_joint, a));
        track(clf_residual_discrete(small_cert, ss, small_joint, j, small_sc.dt),
              clf_residual_discrete(large_cert, ls, large_joint, a, small_sc.dt));
        track(cbf_residual_discrete(small_cert, ss, small_joint, j, small_sc.dt),
              cbf_residual_discrete(large_cert, ls, large_joint, a, small_sc.dt));
    }
    return gap;
}

// ------------------------------------------------------------ RedVer

void RedVerConfig::validate() const {
    if (sizes.empty()) throw ConfigError("redver: sizes must not be empty");
    for (int s : sizes)
        if (s < 1) throw ConfigError("redver: sizes must be positive");
    if (spot_agents < 1) throw ConfigError("redver: spot_agents must be at least 1");
    if (residual_samples < 0) throw ConfigError("redver: residual_samples must be non-negative");
    cegis.validate();
}

json RedVerConfig::to_json() const {
    return {{"sizes", sizes},
            {"cegis", cegis.to_json()},
            {"spot_verifier", spot_verifier.to_json()},
            {"spot_agents", spot_agents},
            {"residual_samples", residual_samples},
            {"seed", seed}};
}

RedVerConfig RedVerConfig::from_json(const json& j) {
    RedVerConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "sizes") c.sizes = v.get<std::vector<int>>();
        else if (key == "cegis") c.cegis = CegisConfig::from_json(v);
        else if (key == "spot_verifier") c.spot_verifier = VerifierConfig::from_json(v);
        else if (key == "spot_agents") c.spot_agents = v.get<int>();
        else if (key == "residual_samples") c.residual_samples = v.get<int>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else throw ConfigError("unknown redver key '" + key + "'");
    }
    c.validate();
    return c;
}

std::string RedVerReport::to_csv() const {
    std::ostringstream out;
    out << "size,agents,train_seconds,transfer_seconds,spot_seconds,spot_check,max_residual_gap\n";
    for (const auto& r : rows)
        out << r.size << ',' << r.agents << ',' << r.train_seconds << ',' << r.transfer_seconds << ','
            << r.spot_seconds << ',' << to_string(r.spot_check) << ',' << r.max_residual_gap << '\n';
    return out.str();
}

json RedVerReport::to_json() const {
    json rs = json::array();
    for (const auto& r : rows)
        rs.push_back({{"size", r.size},
                      {"agents", r.agents},
                      {"train_seconds", r.train_seconds},
                      {"transfer_seconds", r.transfer_seconds},
                      {"spot_seconds", r.spot_seconds},
                      {"spot_check", to_string(r.spot_check)},
                      {"spot_agents", r.spot_agent_ids},
                      {"max_residual_gap", r.max_residual_gap},
                      {"embedding", r.embedding.to_json()}});
    return {{"training_runs", training_runs},
            {"training", training.to_json()},
            {"rows", rs},
            {"tiling", "networks and coupling rows reused by role class; Lambda re-checked for Hurwitz"}};
}

RedVerReport red_ver(const ScenarioFamily& family, const RedVerConfig& cfg, const RedVerHooks& hooks) {
    cfg.validate();
    std::vector<int> sizes = cfg.sizes;
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

    RedVerReport rep;
    const Scenario small = family(sizes.front());
    auto t0 = std::chrono::steady_clock::now();
    Dataset data = sample_dataset(small, cfg.cegis.training);
    CoRwaCertificate cert = initialize_certificate(small, cfg.cegis.training, &data);
    const SurrogateModel sur = fit_surrogates(small.model, small.topo, cfg.cegis.surrogate);
    rep.training = hooks.train ? hooks.train(small, cert, data, sur) : run_cegis(small, cert, data, sur, cfg.cegis);
    rep.training_runs = 1;
    const double train_seconds = seconds_since(t0);
    const SystemSignature ssig = SystemSignature::of(small);

    VerifierConfig vc = cfg.spot_verifier;
    if (vc.T == 0.0) vc.T = cfg.cegis.verifier.T;

    for (int size : sizes) {
        RedVerRow row;
        row.size = size;
        row.train_seconds = size == sizes.front() ? train_seconds : 0.0;
        const Scenario large = size == sizes.front() ? small : family(size);
        row.agents = large.q();

        t0 = std::chrono::steady_clock::now();
        const SystemSignature lsig = SystemSignature::of(large);
        const auto emb = find_embedding(ssig, lsig);
        if (!emb) throw Error("redver: size " + std::to_string(size) + " admits no embedding of the trained system");
        CoRwaCertificate lcert = transfer_certificate(cert, ssig, lsig, *emb);
        const SurrogateModel lsur = transfer_surrogate(sur, ssig, lsig, *emb);
        row.transfer_seconds = seconds_since(t0);
        row.embedding = *emb;

        std::mt19937_64 rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(size));
        std::vector<int> active;
        for (int i = 0; i < large.q(); ++i)
            if (lcert.is_active(i)) active.push_back(i);
        std::sample(active.begin(), active.end(), std::back_inserter(row.spot_agent_ids),
                    std::min<int>(cfg.spot_agents, static_cast<int>(active.size())), rng);

        t0 = std::chrono::steady_clock::now();
        const VerifierContext ctx{&large, &lcert, &lsur};
        std::vector<VerificationStatus> verdicts(row.spot_agent_ids.size());
        parallel_for(static_cast<int>(verdicts.size()),
                     [&](int k) { verdicts[k] = verify_agent(ctx, row.spot_agent_ids[k], vc).verdict; });
        row.spot_check = VerificationStatus::verified;
        for (auto v : verdicts) row.spot_check = combine(row.spot_check, v);
        row.spot_seconds = seconds_since(t0);

        for (int s = 0; s < cfg.residual_samples; ++s) {
            JointState sj{Mat(small.q(), small.n()), 0.0};
            for (int i = 0; i < small.q(); ++i) {
                const Interval& d = small.model.state_domain[i];
                for (int k = 0; k < small.n(); ++k)
                    sj.x(i, k) = std::uniform_real_distribution<double>(d.lower[k], d.upper[k])(rng);
            }
            const Mat background = initial_state(large, rng).x;
            row.max_residual_gap =
                std::max(row.max_residual_gap, residual_gap(cert, small, lcert, large, *emb, sj, background));
        }
        rep.rows.push_back(row);
        rep.certificates.push_back(std::move(lcert));
    }
    return rep;
}

}  // namespace corwa
