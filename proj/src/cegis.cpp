#include "corwa/cegis.hpp"

#include "corwa/errors.hpp"
#include "corwa/io.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace corwa {

using nlohmann::json;

std::string to_string(CegisStatus s) {
    return s == CegisStatus::certified_converged ? "CertifiedConverged" : "IterationBudgetExhausted";
}

json surrogate_config_to_json(const SurrogateConfig& c) {
    return {{"hidden", c.hidden},
            {"activation", to_string(c.activation)},
            {"points_per_dim", c.points_per_dim},
            {"max_grid_points", c.max_grid_points},
            {"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"seed", c.seed}};
}

SurrogateConfig surrogate_config_from_json(const json& j) {
    SurrogateConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "hidden") c.hidden = v.get<std::vector<int>>();
        else if (key == "activation") c.activation = activation_from_string(v.get<std::string>());
        else if (key == "points_per_dim") c.points_per_dim = v.get<int>();
        else if (key == "max_grid_points") c.max_grid_points = v.get<int>();
        else if (key == "epochs") c.epochs = v.get<int>();
        else if (key == "learning_rate") c.learning_rate = v.get<double>();
        else if (key == "batch_size") c.batch_size = v.get<int>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else throw ConfigError("unknown surrogate key '" + key + "'");
    }
    if (c.points_per_dim < 2 || c.max_grid_points < 1 || c.epochs < 0 || c.batch_size < 1)
        throw ConfigError("surrogate settings out of range");
    return c;
}

json lipschitz_options_to_json(const LipschitzOptions& o) {
    return {{"samples", o.samples}, {"safety", o.safety}, {"boxes", o.boxes}, {"fd_step", o.fd_step}, {"seed", o.seed}};
}

LipschitzOptions lipschitz_options_from_json(const json& j) {
    LipschitzOptions o;
    for (const auto& [key, v] : j.items()) {
        if (key == "samples") o.samples = v.get<int>();
        else if (key == "safety") o.safety = v.get<double>();
        else if (key == "boxes") o.boxes = v.get<int>();
        else if (key == "fd_step") o.fd_step = v.get<double>();
        else if (key == "seed") o.seed = v.get<std::uint64_t>();
        else throw ConfigError("unknown lipschitz key '" + key + "'");
    }
    if (o.samples < 1 || o.safety < 1.0 || o.boxes < 1 || !(o.fd_step > 0.0))
        throw ConfigError("lipschitz settings out of range");
    return o;
}

void CegisConfig::validate() const {
    if (max_iterations < 1) throw ConfigError("cegis: max_iterations must be >= 1");
    if (variants < 0) throw ConfigError("cegis: variants must be >= 0");
    if (!(noise_scale >= 0.0)) throw ConfigError("cegis: noise_scale must be >= 0");
    if (!(max_seconds >= 0.0)) throw ConfigError("cegis: max_seconds must be >= 0");
    training.validate();
}

json CegisConfig::to_json() const {
    return {{"max_iterations", max_iterations},
            {"variants", variants},
            {"noise_scale", noise_scale},
            {"use_margins", use_margins},
            {"augment_unresolved", augment_unresolved},
            {"training", training.to_json()},
            {"verifier", verifier.to_json()},
            {"lipschitz", lipschitz_options_to_json(lipschitz)},
            {"surrogate", surrogate_config_to_json(surrogate)},
            {"checkpoint_dir", checkpoint_dir},
            {"max_seconds", max_seconds}};
}

CegisConfig CegisConfig::from_json(const json& j) {
    CegisConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "max_iterations") c.max_iterations = v.get<int>();
        else if (key == "variants") c.variants = v.get<int>();
        else if (key == "noise_scale") c.noise_scale = v.get<double>();
        else if (key == "use_margins") c.use_margins = v.get<bool>();
        else if (key == "augment_unresolved") c.augment_unresolved = v.get<bool>();
        else if (key == "training") c.training = TrainingConfig::from_json(v);
        else if (key == "verifier") c.verifier = VerifierConfig::from_json(v);
        else if (key == "lipschitz") c.lipschitz = lipschitz_options_from_json(v);
        else if (key == "surrogate") c.surrogate = surrogate_config_from_json(v);
        else if (key == "checkpoint_dir") c.checkpoint_dir = v.get<std::string>();
        else if (key == "max_seconds") c.max_seconds = v.get<double>();
        else throw ConfigError("unknown cegis key '" + key + "'");
    }
    c.validate();
    return c;
}

json IterationRecord::to_json() const {
    return {{"iteration", iteration},
            {"verdict", corwa::to_string(verdict)},
            {"queries", queries},
            {"verified", verified},
            {"counterexamples", counterexamples},
            {"unknown", unknown},
            {"max_eV", max_eV},
            {"max_eh", max_eh},
            {"verify_seconds", verify_seconds},
            {"trained", trained},
            {"loss", {{"ctrl", loss.ctrl}, {"clf", loss.clf}, {"cbf", loss.cbf}, {"total", loss.total}}},
            {"val_loss", val_loss},
            {"train_seconds", train_seconds},
            {"dataset_size", dataset_size}};
}

json CegisReport::to_json() const {
    json recs = json::array();
    for (const auto& r : records) recs.push_back(r.to_json());
    return {{"status", to_string(status)},
            {"iterations", iterations},
            {"timed_out", timed_out},
            {"verification_passes", verification_passes},
            {"seconds", seconds},
            {"records", recs},
            {"final_verification", final_verification.to_json()}};
}

std::string CegisReport::summary_table() const {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%4s  %-14s %7s %7s %7s %10s %10s %10s %8s\n", "iter", "verdict", "queries",
                  "cex", "unknown", "max eV", "max eh", "loss", "data");
    os << line;
    for (const auto& r : records) {
        std::snprintf(line, sizeof line, "%4d  %-14s %7d %7d %7d %10.3g %10.3g %10.3g %8zu\n", r.iteration,
                      corwa::to_string(r.verdict).c_str(), r.queries, r.counterexamples, r.unknown, r.max_eV,
                      r.max_eh, r.trained ? r.loss.total : 0.0, r.dataset_size);
        os << line;
    }
    os << "status: " << to_string(status) << " after " << iterations << " training rounds, " << seconds << " s\n";
    return os.str();
}

void augment_counterexamples(Dataset& data, const Scenario& sc, const std::vector<Witness>& witnesses,
                             const CegisConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int q = sc.q(), n = sc.n();
    for (const auto& w : witnesses) {
        for (int v = 0; v <= cfg.variants; ++v) {
            Sample s;
            s.x = w.joint.x;
            if (v > 0) {
                for (int a = 0; a < q; ++a) {
                    const Interval& dom = sc.model.state_domain[a];
                    for (int c = 0; c < n; ++c) {
                        const double width = dom.upper[c] - dom.lower[c];
                        s.x(a, c) = std::clamp(s.x(a, c) + cfg.noise_scale * width * normal(rng), dom.lower[c],
                                               dom.upper[c]);
                    }
                }
            }
            s.tags = region_tags(sc, s.x);
            s.exo.resize(q);
            for (int a = 0; a < q; ++a)
                if (sc.is_exogenous(a)) s.exo[a] = sc.exogenous_at(w.joint.time, a);
            s.weight = cfg.training.counterexample_weight;
            s.origin = to_string(w.tag);
            data.train.push_back(std::move(s));
        }
    }
}

void decay_counterexample_weights(Dataset& data) {
    for (auto& s : data.train)
        if (s.weight > 1.0) s.weight = std::max(1.0, 0.5 * s.weight);
}

namespace {

IterationRecord summarize(int iteration, const VerificationReport& rep, const CoRwaCertificate& cert,
                          std::size_t data_size) {
    IterationRecord r;
    r.iteration = iteration;
    r.verdict = rep.verdict;
    for (const auto& av : rep.agents)
        for (const auto& o : av.outcomes) {
            ++r.queries;
            if (o.status == VerificationStatus::verified) ++r.verified;
            if (o.status == VerificationStatus::unknown) ++r.unknown;
            r.counterexamples += static_cast<int>(o.witnesses.size());
        }
    for (double e : cert.eV) r.max_eV = std::max(r.max_eV, e);
    for (double e : cert.eh) r.max_eh = std::max(r.max_eh, e);
    r.verify_seconds = rep.seconds;
    r.dataset_size = data_size;
    return r;
}

}  // namespace

void assign_margins(const Scenario& sc, CoRwaCertificate& cert, const SurrogateModel& surrogate,
                    const CegisConfig& cfg) {
    if (!cfg.use_margins) {
        cert.eV.assign(sc.q(), 0.0);
        cert.eh.assign(sc.q(), 0.0);
        return;
    }
    const double T = cfg.verifier.T > 0.0 ? cfg.verifier.T : sc.dt;
    std::vector<double> eps_hat;
    for (int i = 0; i < sc.q(); ++i) eps_hat.push_back(surrogate.eps_hat(i));
    const ErrorMargins m = compute_margins(compute_lipschitz_budget(sc, cert, cfg.lipschitz), T, eps_hat);
    cert.eV = m.eV;
    cert.eh = m.eh;
}

CegisReport run_cegis(const Scenario& sc, CoRwaCertificate& cert, Dataset& data, const SurrogateModel& surrogate,
                      const CegisConfig& cfg, const CegisHooks& hooks) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    auto verify = [&]() {
        assign_margins(sc, cert, surrogate, cfg);
        if (hooks.verify) return hooks.verify(cert);
        return verify_all({&sc, &cert, &surrogate}, cfg.verifier);
    };
    auto checkpoint = [&](int iteration) {
        if (cfg.checkpoint_dir.empty()) return;
        char name[64];
        std::snprintf(name, sizeof name, "certificate_%03d.json", iteration);
        write_atomic((std::filesystem::path(cfg.checkpoint_dir) / name).string(), cert.to_json().dump());
    };

    CegisReport report;
    for (int it = 0;; ++it) {
        VerificationReport rep = verify();
        ++report.verification_passes;
        IterationRecord rec = summarize(it, rep, cert, data.size());
        const bool done = rep.verdict == VerificationStatus::verified;
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        report.timed_out = !done && cfg.max_seconds > 0.0 && elapsed >= cfg.max_seconds;
        if (done || it == cfg.max_iterations || report.timed_out) {
            report.records.push_back(rec);
            if (hooks.on_iteration) hooks.on_iteration(rec, cert);
            report.final_verification = std::move(rep);
            report.status = done ? CegisStatus::certified_converged : CegisStatus::iteration_budget_exhausted;
            break;
        }

        decay_counterexample_weights(data);
        std::vector<Witness> fresh = rep.witnesses();
        if (fresh.empty() && cfg.augment_unresolved)
            for (const auto& js : rep.unresolved()) fresh.push_back({js, 0, ConditionTag::lyap_decrement, 0.0});
        augment_counterexamples(data, sc, fresh, cfg, cfg.training.seed * 7919 + static_cast<std::uint64_t>(it));

        TrainingConfig tc = cfg.training;
        tc.seed = cfg.training.seed + static_cast<std::uint64_t>(it) * 1000003ULL;
        const auto t0 = std::chrono::steady_clock::now();
        TrainingResult tr;
        try {
            tr = train_round(cert, sc, data, tc);
        } catch (const DivergenceError& e) {
            throw DivergenceError(e.epoch(), e.loss(),
                                  "cegis iteration " + std::to_string(it) + ": " + std::string(e.what()));
        }
        rec.trained = true;
        if (!tr.curve.empty()) {
            rec.loss = tr.curve.back().train;
            rec.val_loss = tr.curve.back().val_total;
        }
        rec.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.dataset_size = data.size();
        ++report.iterations;
        report.records.push_back(rec);
        if (hooks.on_iteration) hooks.on_iteration(rec, cert);
        checkpoint(it);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace corwa
