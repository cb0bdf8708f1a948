#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <vector>

#include "dca/errors.hpp"
#include "dca/qpmix.hpp"

using namespace dca;
using qpmix::MixingNetwork;
using qpmix::ReplayBuffer;
using qpmix::StationSpec;
using qpmix::Trainer;
using qpmix::TrainConfig;
using qpmix::Transition;

namespace {

std::vector<double> random_vec(int n, Rng& rng) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = rng.uniform() * 2.0 - 1.0;
    return x;
}

Transition random_transition(int n_agents, int obs_size, Rng& rng) {
    Transition tr;
    for (int i = 0; i < n_agents; ++i) {
        tr.obs.push_back(random_vec(obs_size, rng));
        tr.next_obs.push_back(random_vec(obs_size, rng));
        tr.actions.push_back(rng.uniform_int(0, 1));
    }
    tr.state = random_vec(2 * n_agents, rng);
    tr.next_state = random_vec(2 * n_agents, rng);
    tr.reward = rng.uniform_int(-1, 1);
    return tr;
}

// Small heterogeneous trainer fixture: one DQN + one PPO station with
// narrow networks so finite differences stay cheap.
struct Fixture {
    TrainConfig cfg;
    std::vector<std::unique_ptr<agents::DqnAgent>> dqns;
    std::vector<std::unique_ptr<agents::PpoAgent>> ppos;
    Rng rng{99};
    ReplayBuffer buffer{64};
    std::unique_ptr<Trainer> trainer;

    explicit Fixture(int n_transitions = 8) {
        cfg.roster = {StationSpec{StationSpec::Kind::Dqn}, StationSpec{StationSpec::Kind::Ppo}};
        cfg.sim.n_stations = 2;
        cfg.history_len = 2;
        cfg.mix_hidden = 4;
        cfg.gamma = 0.5;
        agents::AgentNetConfig net_cfg;
        net_cfg.input_size = 5 * cfg.history_len;
        net_cfg.hidden = {8};
        dqns.push_back(std::make_unique<agents::DqnAgent>(net_cfg, rng));
        ppos.push_back(std::make_unique<agents::PpoAgent>(net_cfg, rng));
        trainer = std::make_unique<Trainer>(cfg, dqns, ppos, rng);
        for (int k = 0; k < n_transitions; ++k)
            buffer.push(random_transition(2, net_cfg.input_size, rng));
    }
};

}  // namespace

TEST_CASE("replay buffer is a fifo ring") {
    ReplayBuffer buf(3);
    Rng rng(1);
    for (int k = 0; k < 5; ++k) {
        Transition tr;
        tr.reward = k;
        buf.push(std::move(tr));
    }
    CHECK(buf.size() == 3);
    CHECK(buf.capacity() == 3);
    CHECK(buf[0].reward == 2.0);  // oldest survivor
    CHECK(buf[1].reward == 3.0);
    CHECK(buf[2].reward == 4.0);

    const auto recent = buf.recent(2);
    REQUIRE(recent.size() == 2);
    CHECK(recent[0]->reward == 3.0);  // oldest first
    CHECK(recent[1]->reward == 4.0);
    CHECK(buf.recent(10).size() == 3);

    const auto idx = buf.sample_indices(64, rng);
    CHECK(idx.size() == 64);
    for (std::size_t i : idx) CHECK(i < 3);
}

TEST_CASE("mixer output is monotone in every agent q") {
    Rng rng(5);
    MixingNetwork mixer(3, 6, 8);
    mixer.init_params(rng);
    for (int trial = 0; trial < 50; ++trial) {
        const auto q = random_vec(3, rng);
        const auto s = random_vec(6, rng);
        MixingNetwork::Cache cache;
        mixer.mix(q, s, cache);
        MixingNetwork::Grads grads;
        std::vector<double> dq;
        mixer.backward(cache, 1.0, grads, &dq);
        REQUIRE(dq.size() == 3);
        for (double d : dq) CHECK(d >= 0.0);
        // Finite-difference cross-check of the analytic dQtot/dq.
        const double h = 1e-6;
        for (int i = 0; i < 3; ++i) {
            auto qp = q, qm = q;
            qp[static_cast<std::size_t>(i)] += h;
            qm[static_cast<std::size_t>(i)] -= h;
            const double fd = (mixer.mix(qp, s) - mixer.mix(qm, s)) / (2.0 * h);
            CHECK(dq[static_cast<std::size_t>(i)] ==
                  doctest::Approx(fd).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("mixer hypernet gradients match finite differences") {
    Rng rng(7);
    MixingNetwork mixer(2, 4, 3);
    mixer.init_params(rng);
    const auto q = random_vec(2, rng);
    const auto s = random_vec(4, rng);

    MixingNetwork::Cache cache;
    mixer.mix(q, s, cache);
    MixingNetwork::Grads grads;
    mixer.backward(cache, 1.0, grads);

    const double h = 1e-6;
    auto check_net = [&](nn::Mlp& net, const std::vector<double>& g) {
        REQUIRE(g.size() == net.param_count());
        auto& p = net.params();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double save = p[i];
            p[i] = save + h;
            const double lp = mixer.mix(q, s);
            p[i] = save - h;
            const double lm = mixer.mix(q, s);
            p[i] = save;
            CHECK(g[i] == doctest::Approx((lp - lm) / (2.0 * h)).epsilon(1e-5).scale(1.0));
        }
    };
    check_net(mixer.hyper_w1(), grads.w1);
    check_net(mixer.hyper_b1(), grads.b1);
    check_net(mixer.hyper_w2(), grads.w2);
    check_net(mixer.hyper_b2(), grads.b2);
}

TEST_CASE("state-value head gradients match finite differences") {
    Rng rng(9);
    MixingNetwork mixer(2, 4, 3);
    mixer.init_params(rng);
    const auto s = random_vec(4, rng);
    nn::Mlp::Cache cache;
    mixer.value(s, cache);
    std::vector<double> grads(mixer.value_head().param_count(), 0.0);
    mixer.value_backward(cache, 1.0, grads);
    const double h = 1e-6;
    auto& p = mixer.value_head().params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double save = p[i];
        p[i] = save + h;
        const double lp = mixer.value(s);
        p[i] = save - h;
        const double lm = mixer.value(s);
        p[i] = save;
        CHECK(grads[i] == doctest::Approx((lp - lm) / (2.0 * h)).epsilon(1e-5).scale(1.0));
    }
}

TEST_CASE("mixer rejects wrong q arity") {
    Rng rng(1);
    MixingNetwork mixer(3, 6, 4);
    mixer.init_params(rng);
    CHECK_THROWS_AS(mixer.mix(std::vector<double>{1.0, 2.0}, random_vec(6, rng)), ConfigError);
}

TEST_CASE("qtot target uses per-agent greedy values through the target mixer") {
    Fixture fx(1);
    const Transition& tr = fx.buffer[0];

    nn::Mlp::Cache scratch;
    std::vector<double> q = {
        fx.trainer->agent_q(0, tr.obs[0], tr.actions[0], scratch),
        fx.trainer->agent_q(1, tr.obs[1], tr.actions[1], scratch),
    };
    CHECK(q[0] == doctest::Approx(fx.dqns[0]->net().forward(tr.obs[0])
                                      [static_cast<std::size_t>(tr.actions[0])]));
    const double q_tot = fx.trainer->mixer().mix(q, tr.state);
    const std::vector<double> qn = {
        fx.dqns[0]->greedy_target_q(tr.next_obs[0]),
        fx.ppos[0]->greedy_target_q(tr.next_obs[1]),
    };
    const double y = tr.reward + fx.cfg.gamma * fx.trainer->target_mixer().mix(qn, tr.next_state);

    const std::size_t idx[] = {0};
    std::vector<std::vector<double>> agent_grads;
    MixingNetwork::Grads mix_grads;
    const double loss = fx.trainer->qtot_loss(idx, fx.buffer, agent_grads, mix_grads);
    CHECK(loss == doctest::Approx((q_tot - y) * (q_tot - y)));
}

TEST_CASE("qtot loss gradients match finite differences") {
    Fixture fx(6);
    std::vector<std::size_t> batch = {0, 1, 2, 3, 4, 5};
    std::vector<std::vector<double>> agent_grads;
    MixingNetwork::Grads mix_grads;
    fx.trainer->qtot_loss(batch, fx.buffer, agent_grads, mix_grads);

    auto loss_now = [&] {
        std::vector<std::vector<double>> g;
        MixingNetwork::Grads mg;
        return fx.trainer->qtot_loss(batch, fx.buffer, g, mg);
    };
    const double h = 1e-6;
    auto check_params = [&](std::vector<double>& p, const std::vector<double>& g,
                            std::size_t stride) {
        REQUIRE(g.size() == p.size());
        for (std::size_t i = 0; i < p.size(); i += stride) {
            const double save = p[i];
            p[i] = save + h;
            const double lp = loss_now();
            p[i] = save - h;
            const double lm = loss_now();
            p[i] = save;
            CHECK(g[i] == doctest::Approx((lp - lm) / (2.0 * h)).epsilon(1e-4).scale(1.0));
        }
    };
    check_params(fx.dqns[0]->net().params(), agent_grads[0], 5);
    check_params(fx.ppos[0]->critic().params(), agent_grads[1], 5);
    check_params(fx.trainer->mixer().hyper_w1().params(), mix_grads.w1, 1);
    check_params(fx.trainer->mixer().hyper_b1().params(), mix_grads.b1, 1);
    check_params(fx.trainer->mixer().hyper_w2().params(), mix_grads.w2, 1);
    check_params(fx.trainer->mixer().hyper_b2().params(), mix_grads.b2, 1);
}

TEST_CASE("v loss gradients match finite differences") {
    Fixture fx(6);
    std::vector<std::size_t> batch = {0, 1, 2, 3, 4, 5};
    std::vector<double> v_grads(fx.trainer->mixer().value_head().param_count(), 0.0);
    fx.trainer->v_loss(batch, fx.buffer, v_grads);

    auto loss_now = [&] {
        std::vector<double> g(v_grads.size(), 0.0);
        return fx.trainer->v_loss(batch, fx.buffer, g);
    };
    const double h = 1e-6;
    auto& p = fx.trainer->mixer().value_head().params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double save = p[i];
        p[i] = save + h;
        const double lp = loss_now();
        p[i] = save - h;
        const double lm = loss_now();
        p[i] = save;
        CHECK(v_grads[i] == doctest::Approx((lp - lm) / (2.0 * h)).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("target networks sync on the configured interval") {
    Fixture fx(16);
    fx.cfg.target_interval = 3;
    fx.cfg.batch_size = 4;
    Trainer trainer(fx.cfg, fx.dqns, fx.ppos, fx.rng);

    auto targets_stale = [&] {
        return fx.dqns[0]->net().params() != fx.dqns[0]->target().params();
    };
    trainer.train_step(fx.buffer, fx.rng);
    CHECK(trainer.update_count() == 1);
    CHECK(targets_stale());
    trainer.train_step(fx.buffer, fx.rng);
    CHECK(targets_stale());
    trainer.train_step(fx.buffer, fx.rng);  // third update: sync
    CHECK_FALSE(targets_stale());
    CHECK(fx.ppos[0]->critic().params() == fx.ppos[0]->critic_target().params());
}

TEST_CASE("training reduces the qtot loss on a fixed batch") {
    Fixture fx(16);
    fx.cfg.batch_size = 16;
    Trainer trainer(fx.cfg, fx.dqns, fx.ppos, fx.rng);
    std::vector<std::size_t> all(16);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto loss_now = [&] {
        std::vector<std::vector<double>> g;
        MixingNetwork::Grads mg;
        return trainer.qtot_loss(all, fx.buffer, g, mg);
    };
    const double before = loss_now();
    for (int k = 0; k < 200; ++k) trainer.train_step(fx.buffer, fx.rng);
    CHECK(loss_now() < before);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // empty roster
    cfg.roster.assign(4, StationSpec{StationSpec::Kind::Dqn});
    cfg.sim.n_stations = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // roster/station mismatch
    cfg.sim.n_stations = 4;
    cfg.validate();
    cfg.gamma = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("simulation checkpoints round-trip all learner parameters") {
    TrainConfig cfg;
    cfg.roster = {StationSpec{StationSpec::Kind::Dqn}, StationSpec{StationSpec::Kind::Ppo},
                  StationSpec{StationSpec::Kind::EdcaBe}};
    cfg.sim.n_stations = 3;
    cfg.sim.rng_seed = 12;
    qpmix::Simulation sim(cfg);
    const std::string path = "qpmix_roundtrip.ckpt";
    sim.save_checkpoint(path);

    TrainConfig cfg2 = cfg;
    cfg2.sim.rng_seed = 77;  // different init, then overwritten by the load
    qpmix::Simulation sim2(cfg2);
    CHECK(sim2.dqns()[0]->net().params() != sim.dqns()[0]->net().params());
    sim2.load_checkpoint(path);
    CHECK(sim2.dqns()[0]->net().params() == sim.dqns()[0]->net().params());
    CHECK(sim2.ppos()[0]->actor().params() == sim.ppos()[0]->actor().params());
    CHECK(sim2.ppos()[0]->critic().params() == sim.ppos()[0]->critic().params());
    CHECK(sim2.trainer().mixer().hyper_w1().params() ==
          sim.trainer().mixer().hyper_w1().params());
    CHECK(sim2.trainer().mixer().value_head().params() ==
          sim.trainer().mixer().value_head().params());
    // Loaded targets start in sync with the loaded online nets.
    CHECK(sim2.dqns()[0]->target().params() == sim.dqns()[0]->net().params());
    std::remove(path.c_str());
}

TEST_CASE("short training runs are deterministic per seed") {
    auto run = [](std::uint64_t seed) {
        TrainConfig cfg;
        cfg.roster = {StationSpec{StationSpec::Kind::Dqn}, StationSpec{StationSpec::Kind::Ppo}};
        cfg.sim.n_stations = 2;
        cfg.sim.rng_seed = seed;
        cfg.total_slots = 3000;
        cfg.report_window = 500;
        qpmix::Simulation sim(cfg);
        return sim.run();
    };
    const auto a = run(3);
    const auto b = run(3);
    const auto c = run(4);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].throughput_total == b.curve[i].throughput_total);
        CHECK(a.curve[i].mean_reward == b.curve[i].mean_reward);
    }
    CHECK(a.stats.stations[0].sent == b.stats.stations[0].sent);
    bool differs = a.stats.stations[0].sent != c.stats.stations[0].sent ||
                   a.stats.stations[1].sent != c.stats.stations[1].sent;
    CHECK(differs);
}

TEST_CASE("mixed roster with edca stations runs clean") {
    TrainConfig cfg;
    cfg.roster = {StationSpec{StationSpec::Kind::Dqn}, StationSpec{StationSpec::Kind::EdcaVo},
                  StationSpec{StationSpec::Kind::EdcaBe}};
    cfg.sim.n_stations = 3;
    cfg.total_slots = 2000;
    qpmix::Simulation sim(cfg);
    const auto res = sim.run();
    CHECK(res.stats.total_slots == 2000);
    long long sent = 0;
    for (const auto& st : res.stats.stations) sent += st.sent;
    CHECK(sent > 0);  // the EDCA stations at least are active
}
