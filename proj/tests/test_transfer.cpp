#include "corwa/errors.hpp"
#include "corwa/scenarios.hpp"
#include "corwa/transfer.hpp"

#include <doctest.h>

#include <functional>
#include <optional>
#include <random>

using namespace corwa;

namespace {

Scenario platoon(int followers) {
    PlatoonScenarioParams p;
    p.followers = followers;
    return platoon_scenario(p);
}

TrainingConfig tiny_training() {
    TrainingConfig cfg;
    cfg.v_hidden = {4};
    cfg.h_hidden = {4};
    cfg.pi_hidden = {4};
    cfg.pretrain_epochs = 0;
    cfg.dataset_size = 100;
    return cfg;
}

/// Brute-force reference: every injective map, checked against the definition directly.
std::optional<std::vector<int>> brute_force_embedding(const SystemSignature& s, const SystemSignature& l) {
    const int qs = s.q(), ql = l.q();
    std::vector<int> tau(qs);
    std::vector<char> used(ql, 0);
    std::optional<std::vector<int>> best;
    auto valid = [&] {
        for (int j = 0; j < qs; ++j) {
            const auto& a = s.agents[j];
            const auto& b = l.agents[tau[j]];
            if (a.tag != b.tag || a.hash != b.hash || a.M != b.M || a.R != b.R || a.exogenous != b.exogenous)
                return false;
            std::vector<char> image(ql, 0);
            for (int k : s.communicable[j]) image[tau[k]] = 1;
            std::vector<char> actual(ql, 0);
            for (int k : l.communicable[tau[j]]) actual[k] = 1;
            if (image != actual) return false;
        }
        return true;
    };
    std::function<void(int)> rec = [&](int j) {
        if (j == qs) {
            if (valid() && (!best || tau < *best)) best = tau;
            return;
        }
        for (int c = 0; c < ql; ++c) {
            if (used[c]) continue;
            used[c] = 1;
            tau[j] = c;
            rec(j + 1);
            used[c] = 0;
        }
    };
    rec(0);
    return best;
}

SystemSignature random_signature(int q, int labels, double density, std::mt19937_64& rng) {
    SystemSignature s;
    std::uniform_int_distribution<int> lab(0, labels - 1);
    std::bernoulli_distribution edge(density);
    for (int i = 0; i < q; ++i) {
        AgentSignature a;
        a.tag = lab(rng) == 0 ? "a" : "b";
        a.hash = 7;
        a.M = 3;
        a.R = 1.0;
        s.agents.push_back(a);
        std::vector<int> c;
        for (int j = 0; j < q; ++j)
            if (j != i && edge(rng)) c.push_back(j);
        s.communicable.push_back(c);
    }
    return s;
}

}  // namespace

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("signature json round trip keeps the hash") {
    const SystemSignature s = SystemSignature::of(platoon(3));
    const SystemSignature r = SystemSignature::from_json(nlohmann::json::parse(s.to_json().dump()));
    REQUIRE(r.q() == s.q());
    for (int i = 0; i < s.q(); ++i) {
        CHECK(r.agents[i].hash == s.agents[i].hash);
        CHECK(r.agents[i].same_label(s.agents[i]));
    }
    CHECK(r.communicable == s.communicable);
    CHECK_THROWS_AS(SystemSignature::from_json({{"agents", nlohmann::json::array()}, {"extra", 1}}), ConfigError);
}

TEST_CASE("platoon chain of 3 followers embeds into 6 as the identity") {
    const auto e = find_embedding(SystemSignature::of(platoon(3)), SystemSignature::of(platoon(6)));
    REQUIRE(e);
    CHECK(e->tau == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("identical systems embed as the identity") {
    const SystemSignature s = SystemSignature::of(platoon(4));
    const auto e = find_embedding(s, s);
    REQUIRE(e);
    CHECK(e->tau == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("dynamics mismatch gives no embedding") {
    PlatoonScenarioParams p;
    p.gains.u_max = 3.0;
    const Scenario other = platoon_scenario(p);
    CHECK_FALSE(find_embedding(SystemSignature::of(platoon(3)), SystemSignature::of(other)));
    DoubleIntegratorParams d;
    d.agents = 2;
    CHECK_FALSE(find_embedding(SystemSignature::of(double_integrator_scenario(d)), SystemSignature::of(platoon(3))));
    CHECK_FALSE(find_embedding(SystemSignature::of(platoon(6)), SystemSignature::of(platoon(3))));
}

TEST_CASE("embedding search agrees with brute force on small instances") {
    std::mt19937_64 rng(11);
    int found = 0;
    for (int t = 0; t < 300; ++t) {
        const int qs = std::uniform_int_distribution<int>(1, 4)(rng);
        const int ql = std::uniform_int_distribution<int>(qs, 8)(rng);
        const double density = std::uniform_real_distribution<double>(0.1, 0.6)(rng);
        const SystemSignature l = random_signature(ql, 2, density, rng);
        SystemSignature s;
        if (t % 2 == 0) {
            // induced piece of the large system, so an embedding often exists
            std::vector<int> pick(ql);
            for (int k = 0; k < ql; ++k) pick[k] = k;
            std::shuffle(pick.begin(), pick.end(), rng);
            pick.resize(qs);
            for (int j = 0; j < qs; ++j) {
                s.agents.push_back(l.agents[pick[j]]);
                std::vector<int> c;
                for (int k = 0; k < qs; ++k)
                    if (std::find(l.communicable[pick[j]].begin(), l.communicable[pick[j]].end(), pick[k]) !=
                        l.communicable[pick[j]].end())
                        c.push_back(k);
                s.communicable.push_back(c);
            }
        } else {
            s = random_signature(qs, 2, density, rng);
        }
        const auto fast = find_embedding(s, l);
        const auto slow = brute_force_embedding(s, l);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) {
            ++found;
            CHECK(fast->tau == *slow);
            CHECK(is_embedding(s, l, *fast));
        }
    }
    CHECK(found > 30);
    CHECK(found < 300);
}

TEST_CASE("template classes follow roles") {
    const SystemSignature s = SystemSignature::of(platoon(3));
    const SystemSignature l = SystemSignature::of(platoon(30));
    const auto e = find_embedding(s, l);
    REQUIRE(e);
    const auto cls = template_classes(s, l, *e);
    CHECK(cls[0] == 0);
    CHECK(cls[1] == 1);
    CHECK(cls[2] == 2);
    for (int a = 3; a <= 30; ++a) CHECK(cls[a] == 3);
}

TEST_CASE("identity transfer leaves the certificate unchanged") {
    const Scenario sc = platoon(3);
    const CoRwaCertificate cert = initialize_certificate(sc, tiny_training());
    const SystemSignature s = SystemSignature::of(sc);
    const CoRwaCertificate out = transfer_certificate(cert, s, s, *find_embedding(s, s));
    CHECK(out.to_json().dump() == cert.to_json().dump());
}

TEST_CASE("transferred residuals equal the small-system residuals at embedded states") {
    const Scenario small = platoon(3), large = platoon(6);
    CoRwaCertificate cert = initialize_certificate(small, tiny_training());
    cert.Lambda(2, 1) = 0.25;
    cert.Lambda(3, 2) = 0.3;
    cert.Upsilon(3, 2) = 0.2;
    const SystemSignature s = SystemSignature::of(small), l = SystemSignature::of(large);
    const auto e = find_embedding(s, l);
    REQUIRE(e);
    const CoRwaCertificate big = transfer_certificate(cert, s, l, *e);
    CHECK(big.Lambda(2, 1) == 0.25);
    CHECK(big.Lambda(5, 4) == 0.3);  // interior follower rows copy the last small follower
    CHECK(big.Upsilon(5, 4) == 0.2);
    CHECK(check_metzler(big.Upsilon));
    std::mt19937_64 rng(3);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        JointState sj = initial_state(small, rng);
        sj.time = 0.1 * k;
        const Mat background = initial_state(large, rng).x;
        worst = std::max(worst, residual_gap(cert, small, big, large, *e, sj, background));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("tiling into a non-Hurwitz coupling is rejected with the matrix") {
    DoubleIntegratorParams d;
    d.agents = 2;
    const Scenario sc = double_integrator_scenario(d);
    CoRwaCertificate cert = initialize_certificate(sc, tiny_training());
    cert.Lambda << -1.0, 0.1, 2.0, -1.0;
    REQUIRE(check_hurwitz(cert.Lambda));
    const SystemSignature s = SystemSignature::of(sc);
    SystemSignature l;
    l.agents = {s.agents[0], s.agents[0], s.agents[0], s.agents[0]};
    l.communicable = {{1}, {0}, {3}, {2}};
    const auto e = find_embedding(s, l);
    REQUIRE(e);
    try {
        transfer_certificate(cert, s, l, *e);
        FAIL("expected TransferRejected");
    } catch (const TransferRejected& err) {
        CHECK(err.matrix().rows() == 4);
        CHECK(err.matrix()(2, 3) == 2.0);
        CHECK(err.matrix()(3, 2) == 2.0);
    }
}

TEST_CASE("an agent with no template role is an error") {
    DoubleIntegratorParams d;
    d.agents = 2;
    const Scenario sc = double_integrator_scenario(d);
    const CoRwaCertificate cert = initialize_certificate(sc, tiny_training());
    const SystemSignature s = SystemSignature::of(sc);
    SystemSignature l;
    l.agents = {s.agents[0], s.agents[0], s.agents[0]};
    l.communicable = {{1}, {0}, {}};
    const auto e = find_embedding(s, l);
    REQUIRE(e);
    CHECK_THROWS_AS(transfer_certificate(cert, s, l, *e), Error);
}

TEST_CASE("redver trains once and preserves residuals") {
    RedVerConfig cfg;
    cfg.sizes = {6, 3};
    cfg.cegis.training = tiny_training();
    cfg.spot_agents = 2;
    cfg.residual_samples = 20;
    cfg.spot_verifier.budget.max_boxes = 20;
    cfg.spot_verifier.retry_unknown = false;
    cfg.spot_verifier.T = 1e-3;
    int calls = 0;
    RedVerHooks hooks;
    hooks.train = [&](const Scenario& sc, CoRwaCertificate&, Dataset&, const SurrogateModel&) {
        ++calls;
        CHECK(sc.q() == 4);
        return CegisReport{};
    };
    const RedVerReport rep = red_ver(platoon, cfg, hooks);
    CHECK(calls == 1);
    CHECK(rep.training_runs == 1);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].size == 3);
    CHECK(rep.rows[1].agents == 7);
    CHECK(rep.rows[1].train_seconds == 0.0);
    CHECK(rep.rows[1].spot_agent_ids.size() == 2);
    for (const auto& r : rep.rows) CHECK(r.max_residual_gap <= 1e-12);
    CHECK(rep.to_csv().rfind("size,agents,train_seconds,transfer_seconds,spot_seconds,spot_check,max_residual_gap\n",
                             0) == 0);
}

TEST_CASE("redver config round trip and validation") {
    RedVerConfig c;
    c.sizes = {2, 4};
    c.spot_agents = 5;
    const RedVerConfig r = RedVerConfig::from_json(c.to_json());
    CHECK(r.to_json() == c.to_json());
    CHECK_THROWS_AS(RedVerConfig::from_json({{"sizes", nlohmann::json::array()}}), ConfigError);
    CHECK_THROWS_AS(RedVerConfig::from_json({{"bogus", 1}}), ConfigError);
}
