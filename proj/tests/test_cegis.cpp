#include "corwa/cegis.hpp"
#include "corwa/errors.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <thread>

using namespace corwa;

namespace {

struct Loop {
    Scenario sc = fixture::scalar_scenario();
    CoRwaCertificate cert = fixture::scalar_certificate(-1.0, 0.0);
    SurrogateModel surrogate = fit_surrogates(sc.model, sc.topo, SurrogateConfig{});
    CegisConfig cfg;
    Dataset data;

    Loop() {
        cfg.training.dataset_size = 100;
        cfg.training.epochs = 1;
        cfg.training.pretrain_epochs = 0;
        cfg.training.dt = 0.1;
        cfg.verifier.T = 0.1;
        cfg.max_iterations = 3;
        data = sample_dataset(sc, cfg.training);
    }
};

VerificationReport report_with(VerificationStatus status, std::vector<Witness> witnesses = {}) {
    VerificationOutcome o;
    o.status = status;
    o.witnesses = std::move(witnesses);
    AgentVerification av;
    av.verdict = status;
    av.outcomes.push_back(o);
    VerificationReport r;
    r.agents.push_back(av);
    r.verdict = status;
    return r;
}

Witness witness_at(double x) {
    Witness w;
    w.joint = JointState{Mat::Zero(1, 1)};
    w.joint.x(0, 0) = x;
    w.tag = ConditionTag::lyap_decrement;
    w.residual = 0.1;
    return w;
}

}  // namespace

TEST_CASE("a certificate that already verifies stops before training") {
    Loop l;
    int calls = 0;
    CegisHooks hooks;
    hooks.verify = [&](const CoRwaCertificate&) {
        ++calls;
        return report_with(VerificationStatus::verified);
    };
    const auto before = l.cert.to_json();
    const auto rep = run_cegis(l.sc, l.cert, l.data, l.surrogate, l.cfg, hooks);
    CHECK(rep.status == CegisStatus::certified_converged);
    CHECK(rep.iterations == 0);
    CHECK(rep.verification_passes == 1);
    CHECK(calls == 1);
    CHECK(l.data.size() == 100);
    auto after = l.cert.to_json();
    after.erase("eV");
    after.erase("eh");
    auto expected = before;
    expected.erase("eV");
    expected.erase("eh");
    CHECK(after == expected);
}

TEST_CASE("a persistent counterexample exhausts the iteration budget") {
    Loop l;
    l.cfg.training.learning_rate = 0.0;
    CegisHooks hooks;
    hooks.verify = [](const CoRwaCertificate&) {
        return report_with(VerificationStatus::counterexample, {witness_at(0.3)});
    };
    std::vector<int> seen;
    hooks.on_iteration = [&](const IterationRecord& r, const CoRwaCertificate&) { seen.push_back(r.iteration); };
    const auto rep = run_cegis(l.sc, l.cert, l.data, l.surrogate, l.cfg, hooks);
    CHECK(rep.status == CegisStatus::iteration_budget_exhausted);
    CHECK(!rep.timed_out);
    CHECK(rep.iterations == 3);
    CHECK(rep.verification_passes == 4);
    CHECK(seen == std::vector<int>{0, 1, 2, 3});
    CHECK(l.data.train.size() == 80 + 3 * 21);
    CHECK(l.cert.Lambda(0, 0) == -1.0);
}

TEST_CASE("augmentation adds the witness and its variants inside the domain") {
    Loop l;
    l.cfg.noise_scale = 0.5;
    Dataset d;
    augment_counterexamples(d, l.sc, {witness_at(0.95)}, l.cfg, 4);
    REQUIRE(d.train.size() == 21);
    CHECK(d.validation.empty());
    CHECK(d.train[0].x(0, 0) == 0.95);
    int moved = 0;
    for (const auto& s : d.train) {
        CHECK(l.sc.model.state_domain[0].contains(Vec(s.x.row(0).transpose())));
        CHECK(s.weight == l.cfg.training.counterexample_weight);
        CHECK(s.origin == "lyap_decrement");
        CHECK(s.tags == region_tags(l.sc, s.x));
        if (s.x(0, 0) != 0.95) ++moved;
    }
    CHECK(moved >= 15);

    Dataset again;
    augment_counterexamples(again, l.sc, {witness_at(0.95)}, l.cfg, 4);
    for (std::size_t k = 0; k < d.train.size(); ++k) CHECK(again.train[k].x == d.train[k].x);

    for (int k = 0; k < 5; ++k) decay_counterexample_weights(d);
    for (const auto& s : d.train) CHECK(s.weight == 1.0);
}

TEST_CASE("wall-clock cap stops the loop") {
    Loop l;
    l.cfg.max_iterations = 100;
    l.cfg.max_seconds = 0.05;
    CegisHooks hooks;
    hooks.verify = [](const CoRwaCertificate&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(60));
        return report_with(VerificationStatus::counterexample, {witness_at(0.3)});
    };
    const auto rep = run_cegis(l.sc, l.cert, l.data, l.surrogate, l.cfg, hooks);
    CHECK(rep.timed_out);
    CHECK(rep.status == CegisStatus::iteration_budget_exhausted);
    CHECK(rep.iterations == 0);
    CHECK(rep.to_json().at("timed_out") == true);
}

TEST_CASE("the full loop certifies the scalar system") {
    Loop l;
    l.cfg.verifier.budget.max_depth = 30;
    l.cfg.verifier.T = 1e-3;
    l.cfg.checkpoint_dir = (std::filesystem::temp_directory_path() / "corwa_test_checkpoints").string();
    std::filesystem::remove_all(l.cfg.checkpoint_dir);
    std::filesystem::create_directories(l.cfg.checkpoint_dir);
    l.sc.sets[0].goal = Region::box(Vec::Constant(1, -0.1), Vec::Constant(1, 0.1));
    l.sc.sets[0].unsafe = Region::empty();
    l.cert.h[0].net.layers()[0].bias[0] = 2.0;
    const auto rep = run_cegis(l.sc, l.cert, l.data, l.surrogate, l.cfg);
    CHECK(rep.status == CegisStatus::certified_converged);
    CHECK(rep.final_verification.verdict == VerificationStatus::verified);
    // the margins are recomputed for the verification step
    REQUIRE(l.cert.eV.size() == 1);
    CHECK(l.cert.eV[0] >= 0.0);
    std::filesystem::remove_all(l.cfg.checkpoint_dir);
}

TEST_CASE("cegis config round trip and validation") {
    CegisConfig c;
    c.max_iterations = 7;
    c.max_seconds = 12.5;
    c.variants = 3;
    CHECK(CegisConfig::from_json(c.to_json()).to_json() == c.to_json());
    auto j = c.to_json();
    j["max_iterations"] = -1;
    CHECK_THROWS_AS(CegisConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["unknown_field"] = 0;
    CHECK_THROWS_AS(CegisConfig::from_json(j), ConfigError);
}
