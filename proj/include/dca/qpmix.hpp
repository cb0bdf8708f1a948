#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dca/agents.hpp"
#include "dca/env.hpp"
#include "dca/metrics.hpp"
#include "dca/nn.hpp"
#include "dca/obs.hpp"
#include "dca/rng.hpp"

namespace dca::qpmix {

// Monotonic mixer: hypernetworks map the global state to the weights and
// biases of a two-layer network over per-agent Q-values. Weight-producing
// hypernet outputs pass through |.| so dQtot/dq_i >= 0, plus an
// unconstrained state-value head.
class MixingNetwork {
public:
    MixingNetwork() = default;
    MixingNetwork(int n_agents, int state_size, int hidden);

    void init_params(Rng& rng);

    struct Cache {
        nn::Mlp::Cache w1, b1, w2, b2;
        std::vector<double> q;
        std::vector<double> abs_w1, abs_b1, abs_w2;  // abs_b1 holds b1 raw
        std::vector<double> raw_w1, raw_w2;
        std::vector<double> hidden_pre, hidden_post;
    };

    double mix(std::span<const double> q, std::span<const double> state, Cache& cache) const;
    double mix(std::span<const double> q, std::span<const double> state) const;

    struct Grads {
        std::vector<double> w1, b1, w2, b2;
    };
    // Accumulates hypernet gradients and (optionally) dQtot/dq.
    void backward(const Cache& cache, double dqtot, Grads& grads,
                  std::vector<double>* dq = nullptr) const;

    double value(std::span<const double> state) const;
    double value(std::span<const double> state, nn::Mlp::Cache& cache) const;
    void value_backward(const nn::Mlp::Cache& cache, double dv,
                        std::vector<double>& grads) const;

    int n_agents() const { return n_agents_; }
    int state_size() const { return state_size_; }
    int hidden() const { return hidden_; }

    nn::Mlp& hyper_w1() { return hyper_w1_; }
    nn::Mlp& hyper_b1() { return hyper_b1_; }
    nn::Mlp& hyper_w2() { return hyper_w2_; }
    nn::Mlp& hyper_b2() { return hyper_b2_; }
    const nn::Mlp& hyper_w1() const { return hyper_w1_; }
    const nn::Mlp& hyper_b1() const { return hyper_b1_; }
    const nn::Mlp& hyper_w2() const { return hyper_w2_; }
    const nn::Mlp& hyper_b2() const { return hyper_b2_; }
    nn::Mlp& value_head() { return value_head_; }
    const nn::Mlp& value_head() const { return value_head_; }

private:
    int n_agents_ = 0, state_size_ = 0, hidden_ = 0;
    nn::Mlp hyper_w1_, hyper_b1_, hyper_w2_, hyper_b2_, value_head_;
};

struct Transition {
    std::vector<std::vector<double>> obs;       // per learning agent, encoded
    std::vector<double> state;                  // encoded global state
    std::vector<int> actions;                   // per learning agent
    double reward = 0.0;
    std::vector<std::vector<double>> next_obs;
    std::vector<double> next_state;
    // Channel busy at the successor slot: every agent's next action is the
    // forced Wait, so target policies must not take a greedy max there.
    bool next_forced_wait = false;
};

// FIFO ring of transitions, capacity-bounded.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(Transition t);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t pushed() const { return pushed_; }  // lifetime push count
    const Transition& operator[](std::size_t i) const { return data_[(head_ + i) % data_.size()]; }
    // Up to k most recent transitions, oldest first.
    std::vector<const Transition*> recent(std::size_t k) const;
    std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t head_ = 0;  // index of the oldest element once full
    std::size_t pushed_ = 0;
    std::vector<Transition> data_;
};

struct StationSpec {
    enum class Kind { Dqn, Ppo, EdcaVo, EdcaVi, EdcaBe };
    Kind kind = Kind::Dqn;
    bool learning() const { return kind == Kind::Dqn || kind == Kind::Ppo; }
};

struct TrainConfig {
    env::SimConfig sim;
    std::vector<StationSpec> roster;
    int history_len = 8;
    long long l_max = 64;
    int update_interval = 10;         // N_c
    int target_interval = 1000;       // N_t
    int batch_size = 32;
    std::size_t buffer_capacity = 500;
    double gamma = 0.5;
    double gae_lambda = 0.95;
    double clip_delta = 0.2;
    double lr_q = 5e-4;    // DQN nets, PPO critics, mixing hypernets, V head
    double lr_actor = 1e-5;
    double epsilon_decay = 0.998;  // per train step, floor 0.01
    double grad_clip = 10.0;
    int mix_hidden = 16;
    long long total_slots = 200000;
    bool independent = false;  // disable the mixer, per-agent training
    bool train = true;         // false: evaluation-only (greedy/eval epsilon)
    double eval_epsilon = 0.01;
    int report_window = 500;

    int n_stations() const { return static_cast<int>(roster.size()); }
    int n_learning() const;
    void validate() const;
};

struct TrainStepLog {
    double l_qtot = 0.0, l_v = 0.0, l_actor = 0.0;
};

// Centralized trainer: owns the mixer pair and optimizer state, borrows
// the agents.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, std::vector<std::unique_ptr<agents::DqnAgent>>& dqns,
            std::vector<std::unique_ptr<agents::PpoAgent>>& ppos, Rng& rng);

    TrainStepLog train_step(const ReplayBuffer& buffer, Rng& rng);

    MixingNetwork& mixer() { return mixer_; }
    const MixingNetwork& mixer() const { return mixer_; }
    const MixingNetwork& target_mixer() const { return target_mixer_; }
    long long update_count() const { return update_count_; }

    // Loss/gradient primitives, exposed for verification.
    double qtot_loss(std::span<const std::size_t> batch, const ReplayBuffer& buffer,
                     std::vector<std::vector<double>>& agent_grads, MixingNetwork::Grads& mix_grads);
    double v_loss(std::span<const std::size_t> batch, const ReplayBuffer& buffer,
                  std::vector<double>& v_grads);

private:
    TrainStepLog independent_step(const ReplayBuffer& buffer, Rng& rng);
    void sync_targets();

    const TrainConfig& cfg_;
    std::vector<std::unique_ptr<agents::DqnAgent>>& dqns_;
    std::vector<std::unique_ptr<agents::PpoAgent>>& ppos_;
    std::vector<int> agent_kind_;  // per learning slot: 0 = dqn index, 1 = ppo
    std::vector<int> agent_sub_;   // index into dqns_/ppos_
    MixingNetwork mixer_, target_mixer_;
    std::vector<nn::RmsProp> q_opts_;   // one per net in the Qtot group
    nn::RmsProp v_opt_;
    std::vector<nn::RmsProp> actor_opts_;
    long long update_count_ = 0;
    std::size_t actor_mark_ = 0;  // buffer push count at the last actor update

public:
    // Per learning agent: online Q of (features, action) with cache.
    double agent_q(int slot, std::span<const double> features, int action,
                   nn::Mlp::Cache& cache) const;
    double agent_greedy_target_q(int slot, std::span<const double> features) const;
    double agent_next_target_q(int slot, const Transition& tr) const;
    const std::vector<int>& agent_kinds() const { return agent_kind_; }
    const std::vector<int>& agent_subs() const { return agent_sub_; }
};

struct WindowLog {
    long long slot_end = 0;
    double throughput_total = 0.0;
    std::vector<double> throughput_per_station;
    double mean_reward = 0.0;
    double epsilon = 1.0;
    TrainStepLog losses;
};

struct RunResult {
    metrics::RunStats stats;
    std::vector<WindowLog> curve;
    // Metrics over the last 10% of slots (post-convergence window).
    double final_throughput = 0.0;
    double final_jfi = 0.0;
    double mean_reward_final = 0.0;  // 500-step averages over the last 20%
    long long training_updates = 0;
};

// Algorithm-driven slot loop: heterogeneous roster of DQN/PPO/EDCA
// stations over one continuous episode of total_slots.
class Simulation {
public:
    explicit Simulation(const TrainConfig& cfg);

    RunResult run();

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    const std::vector<std::unique_ptr<agents::DqnAgent>>& dqns() const { return dqns_; }
    const std::vector<std::unique_ptr<agents::PpoAgent>>& ppos() const { return ppos_; }
    Trainer& trainer() { return *trainer_; }

private:
    TrainConfig cfg_;
    Rng rng_;
    std::vector<std::unique_ptr<agents::DqnAgent>> dqns_;
    std::vector<std::unique_ptr<agents::PpoAgent>> ppos_;
    std::unique_ptr<Trainer> trainer_;
};

}  // namespace dca::qpmix
