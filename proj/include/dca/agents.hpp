#pragma once

#include <array>
#include <span>
#include <vector>

#include "dca/nn.hpp"
#include "dca/rng.hpp"

namespace dca::agents {

inline constexpr int kNumActions = 2;  // Wait, Transmit

struct AgentNetConfig {
    int input_size = 40;  // 5 * history length
    std::vector<int> hidden = {250, 120, 120};
};

nn::Mlp make_agent_net(const AgentNetConfig& cfg);

struct ActResult {
    int action = 0;
    double q_value = 0.0;  // Q of the chosen action (fed to the mixer)
    double prob = 1.0;     // policy probability of the chosen action (PPO)
};

// Value-based agent: epsilon-greedy over a Q-network, with a target copy
// for bootstrapping.
class DqnAgent {
public:
    DqnAgent(const AgentNetConfig& cfg, Rng& rng);

    ActResult act(std::span<const double> features, Rng& rng);
    double greedy_target_q(std::span<const double> features) const;  // max_a Q^-(tau,a)
    double target_q(std::span<const double> features, int action) const;

    void decay_epsilon();
    void sync_target() { target_ = net_; }
    double epsilon() const { return epsilon_; }
    void set_epsilon(double e) { epsilon_ = e; }

    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }
    const nn::Mlp& target() const { return target_; }

    double epsilon_min = 0.01;
    double epsilon_decay = 0.998;

private:
    nn::Mlp net_;
    nn::Mlp target_;
    double epsilon_ = 1.0;
};

std::array<double, kNumActions> softmax2(double l0, double l1);

// Policy-based agent: softmax actor plus a Q-critic; keeps the pre-update
// actor snapshot for the clipped surrogate ratio.
class PpoAgent {
public:
    PpoAgent(const AgentNetConfig& cfg, Rng& rng);

    ActResult act(std::span<const double> features, Rng& rng);
    std::array<double, kNumActions> policy(std::span<const double> features) const;
    std::array<double, kNumActions> old_policy(std::span<const double> features) const;
    double greedy_target_q(std::span<const double> features) const;
    double target_q(std::span<const double> features, int action) const;

    void refresh_old_actor() { actor_old_ = actor_; }
    void sync_target() { critic_target_ = critic_; }

    nn::Mlp& actor() { return actor_; }
    const nn::Mlp& actor() const { return actor_; }
    const nn::Mlp& actor_old() const { return actor_old_; }
    nn::Mlp& critic() { return critic_; }
    const nn::Mlp& critic() const { return critic_; }
    const nn::Mlp& critic_target() const { return critic_target_; }

    double clip_delta = 0.2;

private:
    nn::Mlp actor_;
    nn::Mlp actor_old_;
    nn::Mlp critic_;
    nn::Mlp critic_target_;
};

// Generalized advantage estimate over a truncated horizon:
//   A_t = sum_k (gamma*lambda)^k * delta_{t+k}
std::vector<double> gae(std::span<const double> td_errors, double gamma, double lambda);

struct ActorSample {
    std::vector<double> features;
    int action = 0;
    double advantage = 0.0;
};

// Clipped surrogate loss over a batch for one agent; accumulates the
// gradient w.r.t. actor parameters into `grads`. Returns the loss value
//   -sum min(ratio*A, clip(ratio, 1-delta, 1+delta)*A).
double ppo_actor_loss(const nn::Mlp& actor, const nn::Mlp& actor_old,
                      std::span<const ActorSample> batch, double clip_delta,
                      std::vector<double>& grads);

}  // namespace dca::agents
