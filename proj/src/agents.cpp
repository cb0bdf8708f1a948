#include "dca/agents.hpp"

#include <algorithm>
#include <cmath>

#include "dca/errors.hpp"

namespace dca::agents {

nn::Mlp make_agent_net(const AgentNetConfig& cfg) {
    std::vector<int> widths;
    widths.push_back(cfg.input_size);
    for (int h : cfg.hidden) widths.push_back(h);
    widths.push_back(kNumActions);
    std::vector<nn::Activation> acts(widths.size() - 1, nn::Activation::ReLU);
    acts.back() = nn::Activation::Identity;
    return nn::Mlp(widths, acts);
}

DqnAgent::DqnAgent(const AgentNetConfig& cfg, Rng& rng) : net_(make_agent_net(cfg)) {
    net_.init_params(rng);
    target_ = net_;
}

ActResult DqnAgent::act(std::span<const double> features, Rng& rng) {
    const auto q = net_.forward(features);
    int a;
    if (rng.uniform() < epsilon_)
        a = rng.uniform_int(0, kNumActions - 1);
    else
        a = (q[1] > q[0]) ? 1 : 0;  // ties resolve to Wait
    return {a, q[static_cast<std::size_t>(a)], 1.0};
}

double DqnAgent::greedy_target_q(std::span<const double> features) const {
    const auto q = target_.forward(features);
    return std::max(q[0], q[1]);
}

double DqnAgent::target_q(std::span<const double> features, int action) const {
    return target_.forward(features)[static_cast<std::size_t>(action)];
}

void DqnAgent::decay_epsilon() {
    epsilon_ = std::max(epsilon_min, epsilon_ * epsilon_decay);
}

std::array<double, kNumActions> softmax2(double l0, double l1) {
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double z = e0 + e1;
    // Floor keeps importance ratios finite when one logit runs away and, like
    // the epsilon-greedy floor on the value-based side, guarantees residual
    // exploration so a collapsed action can still be sampled and recover.
    constexpr double kFloor = 0.01;
    const double p0 = std::max(e0 / z, kFloor);
    const double p1 = std::max(e1 / z, kFloor);
    const double s = p0 + p1;
    return {p0 / s, p1 / s};
}

PpoAgent::PpoAgent(const AgentNetConfig& cfg, Rng& rng)
    : actor_(make_agent_net(cfg)), critic_(make_agent_net(cfg)) {
    actor_.init_params(rng);
    critic_.init_params(rng);
    actor_old_ = actor_;
    critic_target_ = critic_;
}

std::array<double, kNumActions> PpoAgent::policy(std::span<const double> features) const {
    const auto logits = actor_.forward(features);
    return softmax2(logits[0], logits[1]);
}

std::array<double, kNumActions> PpoAgent::old_policy(std::span<const double> features) const {
    const auto logits = actor_old_.forward(features);
    return softmax2(logits[0], logits[1]);
}

ActResult PpoAgent::act(std::span<const double> features, Rng& rng) {
    const auto pi = policy(features);
    const int a = (rng.uniform() < pi[0]) ? 0 : 1;
    const auto q = critic_.forward(features);
    return {a, q[static_cast<std::size_t>(a)], pi[static_cast<std::size_t>(a)]};
}

double PpoAgent::greedy_target_q(std::span<const double> features) const {
    const auto q = critic_target_.forward(features);
    return std::max(q[0], q[1]);
}

double PpoAgent::target_q(std::span<const double> features, int action) const {
    return critic_target_.forward(features)[static_cast<std::size_t>(action)];
}

std::vector<double> gae(std::span<const double> td_errors, double gamma, double lambda) {
    if (td_errors.empty()) throw ConfigError("gae: empty TD error sequence");
    std::vector<double> adv(td_errors.size());
    double acc = 0.0;
    for (int t = static_cast<int>(td_errors.size()) - 1; t >= 0; --t) {
        acc = td_errors[static_cast<std::size_t>(t)] + gamma * lambda * acc;
        adv[static_cast<std::size_t>(t)] = acc;
    }
    return adv;
}

double ppo_actor_loss(const nn::Mlp& actor, const nn::Mlp& actor_old,
                      std::span<const ActorSample> batch, double clip_delta,
                      std::vector<double>& grads) {
    if (grads.size() != actor.param_count()) grads.assign(actor.param_count(), 0.0);
    double loss = 0.0;
    nn::Mlp::Cache cache;
    for (const auto& s : batch) {
        const auto logits = actor.forward(s.features, cache);
        const auto pi = softmax2(logits[0], logits[1]);
        const auto logits_old = actor_old.forward(s.features);
        const auto pi_old = softmax2(logits_old[0], logits_old[1]);
        const double p_old = pi_old[static_cast<std::size_t>(s.action)];
        if (p_old <= 0.0) throw NumericalError("ppo_actor_loss: zero old-policy probability");
        const double ratio = pi[static_cast<std::size_t>(s.action)] / p_old;
        const double clipped = std::clamp(ratio, 1.0 - clip_delta, 1.0 + clip_delta);
        const double a = s.advantage;
        const double unclipped_arm = ratio * a;
        const double clipped_arm = clipped * a;
        loss -= std::min(unclipped_arm, clipped_arm);
        // Gradient flows only through the unclipped arm when it is the
        // active minimum; the clip region is flat in theta.
        if (unclipped_arm <= clipped_arm) {
            // d(-ratio*A)/dlogits = -(A/p_old) * dpi_a/dlogits, with
            // dpi_a/dlogit_k = pi_a * (1[k==a] - pi_k) for softmax.
            const double pa = pi[static_cast<std::size_t>(s.action)];
            std::vector<double> dlogits(kNumActions);
            for (int k = 0; k < kNumActions; ++k) {
                const double ind = (k == s.action) ? 1.0 : 0.0;
                dlogits[static_cast<std::size_t>(k)] =
                    -(a / p_old) * pa * (ind - pi[static_cast<std::size_t>(k)]);
            }
            actor.backward(cache, dlogits, grads);
        }
    }
    return loss;
}

}  // namespace dca::agents
