#include "corwa/cli.hpp"

#include "corwa/errors.hpp"
#include "corwa/experiment.hpp"
#include "corwa/io.hpp"
#include "corwa/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace corwa {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
    std::string config;
    std::string out;
    std::string certificate;
    std::string large_config;
    std::uint64_t seed = 0;
    long long budget = 0;
    bool nominal = false;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* budget_opt = nullptr;
};

std::string in_dir(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.output_dir) / name).string();
}

ExperimentConfig load_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    ExperimentConfig cfg = ExperimentConfig::load(o.config);
    if (o.seed_opt->count()) cfg.apply_seed(o.seed);
    if (!o.out.empty()) cfg.output_dir = o.out;
    write_atomic(in_dir(cfg, "config.json"), cfg.to_json().dump(2));
    return cfg;
}

CoRwaCertificate load_certificate(const std::string& path) {
    return CoRwaCertificate::from_json(json::parse(read_file(path)));
}

long long budget_value(const Options& o, long long lo) {
    if (o.budget < lo) throw ConfigError("--budget must be at least " + std::to_string(lo));
    return o.budget;
}

int cmd_train(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load_config(o);
    TrainingConfig tc = cfg.cegis.training;
    if (o.budget_opt->count()) tc.epochs = static_cast<int>(budget_value(o, 1));
    const Scenario sc = cfg.build();
    const Dataset data = sample_dataset(sc, tc);
    CoRwaCertificate cert = initialize_certificate(sc, tc, &data);
    const TrainingResult tr = train_round(cert, sc, data, tc);
    std::ostringstream curve;
    curve << "epoch,ctrl,clf,cbf,total,val_total\n";
    for (const auto& e : tr.curve)
        curve << e.epoch << ',' << e.train.ctrl << ',' << e.train.clf << ',' << e.train.cbf << ',' << e.train.total
              << ',' << e.val_total << '\n';
    write_atomic(in_dir(cfg, "training_curve.csv"), curve.str());
    write_atomic(in_dir(cfg, "certificate.json"), cert.to_json().dump());
    out << "trained " << tr.curve.size() << " epochs on " << data.size() << " samples";
    if (!tr.curve.empty()) out << ", final loss " << tr.curve.back().train.total;
    out << "\nwrote " << in_dir(cfg, "certificate.json") << '\n';
    return 0;
}

int cmd_verify(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load_config(o);
    if (o.budget_opt->count()) cfg.cegis.verifier.budget.max_boxes = static_cast<int>(budget_value(o, 1));
    const Scenario sc = cfg.build();
    CoRwaCertificate cert = load_certificate(o.certificate.empty() ? in_dir(cfg, "certificate.json") : o.certificate);
    const SurrogateModel sur = fit_surrogates(sc.model, sc.topo, cfg.cegis.surrogate);
    assign_margins(sc, cert, sur, cfg.cegis);
    const VerificationReport rep = verify_all({&sc, &cert, &sur}, cfg.cegis.verifier);
    write_atomic(in_dir(cfg, "verification.json"), rep.to_json().dump(2));
    int queries = 0, verified = 0;
    for (const auto& a : rep.agents)
        for (const auto& oc : a.outcomes) {
            ++queries;
            if (oc.status == VerificationStatus::verified) ++verified;
        }
    out << to_string(rep.verdict) << ": " << verified << "/" << queries << " queries verified, "
        << rep.witnesses().size() << " counterexamples, " << rep.seconds << " s\n";
    return rep.verdict == VerificationStatus::verified ? 0 : 1;
}

int cmd_cegis(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load_config(o);
    if (o.budget_opt->count()) cfg.cegis.max_iterations = static_cast<int>(budget_value(o, 1));
    if (cfg.cegis.checkpoint_dir.empty()) cfg.cegis.checkpoint_dir = in_dir(cfg, "checkpoints");
    const Scenario sc = cfg.build();
    Dataset data = sample_dataset(sc, cfg.cegis.training);
    CoRwaCertificate cert = o.certificate.empty() ? initialize_certificate(sc, cfg.cegis.training, &data)
                                                  : load_certificate(o.certificate);
    const SurrogateModel sur = fit_surrogates(sc.model, sc.topo, cfg.cegis.surrogate);
    write_atomic(in_dir(cfg, "surrogate.json"), sur.to_json().dump());
    CegisHooks hooks;
    hooks.on_iteration = [&](const IterationRecord& r, const CoRwaCertificate&) {
        out << "pass " << r.iteration << ": " << to_string(r.verdict) << " (" << r.verified << "/" << r.queries
            << " verified)" << std::endl;
    };
    const CegisReport rep = run_cegis(sc, cert, data, sur, cfg.cegis, hooks);
    std::ostringstream csv;
    csv << "iteration,verdict,queries,verified,counterexamples,unknown,max_eV,max_eh,verify_seconds,trained,loss,"
           "val_loss,train_seconds,dataset_size\n";
    for (const auto& r : rep.records)
        csv << r.iteration << ',' << to_string(r.verdict) << ',' << r.queries << ',' << r.verified << ','
            << r.counterexamples << ',' << r.unknown << ',' << r.max_eV << ',' << r.max_eh << ',' << r.verify_seconds
            << ',' << (r.trained ? 1 : 0) << ',' << r.loss.total << ',' << r.val_loss << ',' << r.train_seconds << ','
            << r.dataset_size << '\n';
    write_atomic(in_dir(cfg, "cegis_iterations.csv"), csv.str());
    write_atomic(in_dir(cfg, "cegis_report.json"), rep.to_json().dump(2));
    write_atomic(in_dir(cfg, "certificate.json"), cert.to_json().dump());
    out << rep.summary_table();
    return rep.status == CegisStatus::certified_converged ? 0 : 1;
}

int cmd_simulate(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load_config(o);
    int steps = cfg.simulation.steps;
    if (o.budget_opt->count()) steps = static_cast<int>(budget_value(o, 0));
    const Scenario sc = cfg.build();
    const MetricGeometry geo = cfg.geometry();
    std::optional<CoRwaCertificate> cert;
    const std::string cpath = o.certificate.empty() ? in_dir(cfg, "certificate.json") : o.certificate;
    if (!o.nominal) {
        if (!o.certificate.empty() || fs::exists(cpath)) cert = load_certificate(cpath);
        else throw Error("no certificate at " + cpath + " (pass --nominal to roll out the nominal law)");
    }
    std::ostringstream metrics, clips;
    metrics << "rollout";
    for (const auto& c : MetricsReport::columns()) metrics << ',' << c;
    metrics << '\n';
    clips << "rollout,step,agent\n";
    json all = json::array();
    for (int k = 0; k < cfg.simulation.rollouts; ++k) {
        std::mt19937_64 rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(k));
        const SimulationResult res = simulate(sc, cert ? &*cert : nullptr, initial_state(sc, rng), geo, steps);
        char name[64];
        std::snprintf(name, sizeof name, "trajectory_%03d.csv", k);
        write_atomic(in_dir(cfg, name), res.trajectory_csv());
        metrics << k;
        for (double v : res.metrics.row()) metrics << ',' << v;
        metrics << '\n';
        for (const auto& c : res.clips) clips << k << ',' << c.step << ',' << c.agent << '\n';
        json m = res.metrics.to_json();
        m["rollout"] = k;
        m["clip_events"] = res.clips.size();
        all.push_back(m);
        out << "rollout " << k << ": min agent distance " << res.metrics.min_agent_distance
            << ", min obstacle distance " << res.metrics.min_obstacle_distance << ", violations "
            << res.metrics.safety_violations << '\n';
    }
    write_atomic(in_dir(cfg, "metrics.csv"), metrics.str());
    write_atomic(in_dir(cfg, "metrics.json"), all.dump(2));
    write_atomic(in_dir(cfg, "clips.csv"), clips.str());
    return 0;
}

int cmd_transfer(const Options& o, std::ostream& out, std::ostream& err) {
    ExperimentConfig small_cfg = load_config(o);
    if (o.large_config.empty()) throw ConfigError("--large-config is required");
    ExperimentConfig large_cfg = ExperimentConfig::load(o.large_config);
    const Scenario small = small_cfg.build(), large = large_cfg.build();
    const CoRwaCertificate cert =
        load_certificate(o.certificate.empty() ? in_dir(small_cfg, "certificate.json") : o.certificate);
    const SystemSignature ss = SystemSignature::of(small), ls = SystemSignature::of(large);
    json record = {{"small", ss.to_json()}, {"large", ls.to_json()}};
    const auto emb = find_embedding(ss, ls);
    if (!emb) {
        record["embedding"] = nullptr;
        write_atomic(in_dir(small_cfg, "embedding.json"), record.dump(2));
        err << "no embedding of the small system into the large one\n";
        return 1;
    }
    record["embedding"] = emb->to_json();
    try {
        record["templates"] = template_classes(ss, ls, *emb);
        const CoRwaCertificate big = transfer_certificate(cert, ss, ls, *emb);
        write_atomic(in_dir(small_cfg, "embedding.json"), record.dump(2));
        write_atomic(in_dir(small_cfg, "transferred_certificate.json"), big.to_json().dump());
    } catch (const TransferRejected& e) {
        json rows = json::array();
        for (int r = 0; r < e.matrix().rows(); ++r) {
            std::vector<double> row(e.matrix().cols());
            for (int c = 0; c < e.matrix().cols(); ++c) row[c] = e.matrix()(r, c);
            rows.push_back(row);
        }
        record["rejected"] = {{"reason", e.what()}, {"matrix", rows}};
        write_atomic(in_dir(small_cfg, "embedding.json"), record.dump(2));
        err << e.what() << '\n';
        return 1;
    }
    out << "embedding tau =";
    for (int t : emb->tau) out << ' ' << t;
    out << "\nwrote " << in_dir(small_cfg, "transferred_certificate.json") << '\n';
    return 0;
}

int cmd_redver(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load_config(o);
    if (o.budget_opt->count()) {
        cfg.cegis.max_iterations = static_cast<int>(budget_value(o, 1));
        cfg.redver.cegis = cfg.cegis;
    }
    const RedVerReport rep = red_ver(cfg.family(), cfg.redver);
    write_atomic(in_dir(cfg, "redver.csv"), rep.to_csv());
    write_atomic(in_dir(cfg, "redver.json"), rep.to_json().dump(2));
    for (std::size_t k = 0; k < rep.rows.size(); ++k)
        write_atomic(in_dir(cfg, "certificate_size" + std::to_string(rep.rows[k].size) + ".json"),
                     rep.certificates[k].to_json().dump());
    out << rep.to_csv();
    bool preserved = true;
    for (const auto& r : rep.rows) preserved = preserved && r.max_residual_gap <= 1e-9;
    return preserved ? 0 : 1;
}

int cmd_report(const Options& o, std::ostream& out) {
    std::string dir = o.out;
    if (dir.empty()) {
        if (o.config.empty()) throw ConfigError("report needs --out or --config");
        dir = ExperimentConfig::load(o.config).output_dir;
    }
    for (const auto& f : render_report(dir)) out << "wrote " << (fs::path(dir) / f).string() << '\n';
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural Co-RWA certificates: training, verification, transfer"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* s) {
        s->add_option("--config", o.config, "experiment config (JSON)");
        s->add_option("--seed", o.seed, "seed override");
        s->add_option("--out", o.out, "output directory override");
        s->add_option("--budget", o.budget,
                      "train: epochs, verify: boxes per query, cegis/redver: iterations, simulate: steps");
    };
    std::vector<std::pair<std::string, CLI::App*>> subs;
    for (const char* name : {"train", "verify", "cegis", "simulate", "transfer", "redver", "report"}) {
        CLI::App* s = app.add_subcommand(name);
        common(s);
        subs.emplace_back(name, s);
    }
    app.get_subcommand("train")->description("one training round from a fresh certificate");
    app.get_subcommand("verify")->description("verify a certificate; exit 0 only when Verified");
    app.get_subcommand("cegis")->description("train/verify loop; exit 0 only on CertifiedConverged");
    app.get_subcommand("simulate")->description("closed-loop rollouts with metrics");
    app.get_subcommand("transfer")->description("reuse a certificate on a larger system");
    app.get_subcommand("redver")->description("train once, transfer to every configured size");
    app.get_subcommand("report")->description("plots and tables from a run directory");
    for (const char* name : {"verify", "cegis", "simulate", "transfer"})
        app.get_subcommand(name)->add_option("--certificate", o.certificate, "certificate JSON");
    app.get_subcommand("simulate")->add_flag("--nominal", o.nominal, "use the nominal controllers");
    app.get_subcommand("transfer")->add_option("--large-config", o.large_config, "config of the larger system");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }
    try {
        for (const auto& [name, s] : subs) {
            if (!s->parsed()) continue;
            o.seed_opt = s->get_option("--seed");
            o.budget_opt = s->get_option("--budget");
            if (name == "train") return cmd_train(o, out);
            if (name == "verify") return cmd_verify(o, out);
            if (name == "cegis") return cmd_cegis(o, out);
            if (name == "simulate") return cmd_simulate(o, out);
            if (name == "transfer") return cmd_transfer(o, out, err);
            if (name == "redver") return cmd_redver(o, out);
            if (name == "report") return cmd_report(o, out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

}  // namespace corwa
