#include "dca/qpmix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dca/errors.hpp"

namespace dca::qpmix {

namespace {

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

nn::Mlp make_linear(int in, int out) {
    return nn::Mlp({in, out}, {nn::Activation::Identity});
}
nn::Mlp make_two_layer(int in, int hidden, int out) {
    return nn::Mlp({in, hidden, out}, {nn::Activation::ReLU, nn::Activation::Identity});
}

// Scales every gradient vector in the group so their joint L2 norm is at
// most max_norm.
void clip_group_norm(std::vector<std::vector<double>*> grads, double max_norm) {
    double sq = 0.0;
    for (const auto* g : grads)
        for (double x : *g) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto* g : grads)
            for (double& x : *g) x *= s;
    }
}

}  // namespace

MixingNetwork::MixingNetwork(int n_agents, int state_size, int hidden)
    : n_agents_(n_agents),
      state_size_(state_size),
      hidden_(hidden),
      hyper_w1_(make_linear(state_size, hidden * n_agents)),
      hyper_b1_(make_linear(state_size, hidden)),
      hyper_w2_(make_linear(state_size, hidden)),
      hyper_b2_(make_two_layer(state_size, hidden, 1)),
      value_head_(make_two_layer(state_size, hidden, 1)) {}

void MixingNetwork::init_params(Rng& rng) {
    hyper_w1_.init_params(rng);
    hyper_b1_.init_params(rng);
    hyper_w2_.init_params(rng);
    hyper_b2_.init_params(rng);
    value_head_.init_params(rng);
}

double MixingNetwork::mix(std::span<const double> q, std::span<const double> state,
                          Cache& cache) const {
    if (static_cast<int>(q.size()) != n_agents_)
        throw ConfigError("MixingNetwork::mix: wrong number of Q-values");
    cache.q.assign(q.begin(), q.end());
    cache.raw_w1 = hyper_w1_.forward(state, cache.w1);
    cache.abs_b1 = hyper_b1_.forward(state, cache.b1);
    cache.raw_w2 = hyper_w2_.forward(state, cache.w2);
    const double b2 = hyper_b2_.forward(state, cache.b2)[0];

    cache.abs_w1.resize(cache.raw_w1.size());
    for (std::size_t i = 0; i < cache.raw_w1.size(); ++i)
        cache.abs_w1[i] = std::fabs(cache.raw_w1[i]);
    cache.abs_w2.resize(cache.raw_w2.size());
    for (std::size_t i = 0; i < cache.raw_w2.size(); ++i)
        cache.abs_w2[i] = std::fabs(cache.raw_w2[i]);

    cache.hidden_pre.assign(static_cast<std::size_t>(hidden_), 0.0);
    cache.hidden_post.assign(static_cast<std::size_t>(hidden_), 0.0);
    double out = b2;
    for (int k = 0; k < hidden_; ++k) {
        double h = cache.abs_b1[static_cast<std::size_t>(k)];
        for (int i = 0; i < n_agents_; ++i)
            h += cache.abs_w1[static_cast<std::size_t>(k) * n_agents_ + i] * q[static_cast<std::size_t>(i)];
        cache.hidden_pre[static_cast<std::size_t>(k)] = h;
        const double g = elu(h);
        cache.hidden_post[static_cast<std::size_t>(k)] = g;
        out += cache.abs_w2[static_cast<std::size_t>(k)] * g;
    }
    return out;
}

double MixingNetwork::mix(std::span<const double> q, std::span<const double> state) const {
    Cache scratch;
    return mix(q, state, scratch);
}

void MixingNetwork::backward(const Cache& cache, double dqtot, Grads& grads,
                             std::vector<double>* dq) const {
    if (grads.w1.size() != hyper_w1_.param_count()) grads.w1.assign(hyper_w1_.param_count(), 0.0);
    if (grads.b1.size() != hyper_b1_.param_count()) grads.b1.assign(hyper_b1_.param_count(), 0.0);
    if (grads.w2.size() != hyper_w2_.param_count()) grads.w2.assign(hyper_w2_.param_count(), 0.0);
    if (grads.b2.size() != hyper_b2_.param_count()) grads.b2.assign(hyper_b2_.param_count(), 0.0);

    std::vector<double> d_abs_w2(static_cast<std::size_t>(hidden_));
    std::vector<double> d_h(static_cast<std::size_t>(hidden_));
    for (int k = 0; k < hidden_; ++k) {
        d_abs_w2[static_cast<std::size_t>(k)] = dqtot * cache.hidden_post[static_cast<std::size_t>(k)];
        d_h[static_cast<std::size_t>(k)] = dqtot * cache.abs_w2[static_cast<std::size_t>(k)] *
                                           elu_grad(cache.hidden_pre[static_cast<std::size_t>(k)]);
    }

    // b2
    const std::vector<double> db2{dqtot};
    hyper_b2_.backward(cache.b2, db2, grads.b2);
    // w2 through |.|
    std::vector<double> d_raw_w2(static_cast<std::size_t>(hidden_));
    for (int k = 0; k < hidden_; ++k) {
        const double r = cache.raw_w2[static_cast<std::size_t>(k)];
        d_raw_w2[static_cast<std::size_t>(k)] =
            d_abs_w2[static_cast<std::size_t>(k)] * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0));
    }
    hyper_w2_.backward(cache.w2, d_raw_w2, grads.w2);
    // b1
    hyper_b1_.backward(cache.b1, d_h, grads.b1);
    // W1 through |.|
    std::vector<double> d_raw_w1(static_cast<std::size_t>(hidden_) * n_agents_);
    for (int k = 0; k < hidden_; ++k)
        for (int i = 0; i < n_agents_; ++i) {
            const std::size_t idx = static_cast<std::size_t>(k) * n_agents_ + i;
            const double r = cache.raw_w1[idx];
            const double sgn = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
            d_raw_w1[idx] = d_h[static_cast<std::size_t>(k)] * cache.q[static_cast<std::size_t>(i)] * sgn;
        }
    hyper_w1_.backward(cache.w1, d_raw_w1, grads.w1);

    if (dq != nullptr) {
        dq->assign(static_cast<std::size_t>(n_agents_), 0.0);
        for (int k = 0; k < hidden_; ++k)
            for (int i = 0; i < n_agents_; ++i)
                (*dq)[static_cast<std::size_t>(i)] +=
                    d_h[static_cast<std::size_t>(k)] *
                    cache.abs_w1[static_cast<std::size_t>(k) * n_agents_ + i];
    }
}

double MixingNetwork::value(std::span<const double> state) const {
    return value_head_.forward(state)[0];
}

double MixingNetwork::value(std::span<const double> state, nn::Mlp::Cache& cache) const {
    return value_head_.forward(state, cache)[0];
}

void MixingNetwork::value_backward(const nn::Mlp::Cache& cache, double dv,
                                   std::vector<double>& grads) const {
    const std::vector<double> dout{dv};
    value_head_.backward(cache, dout, grads);
}

void ReplayBuffer::push(Transition t) {
    ++pushed_;
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[head_] = std::move(t);
        head_ = (head_ + 1) % capacity_;
    }
}

std::vector<const Transition*> ReplayBuffer::recent(std::size_t k) const {
    const std::size_t n = std::min(k, data_.size());
    std::vector<const Transition*> out;
    out.reserve(n);
    for (std::size_t i = data_.size() - n; i < data_.size(); ++i) out.push_back(&(*this)[i]);
    return out;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data_.size()) - 1));
    return idx;
}

int TrainConfig::n_learning() const {
    int n = 0;
    for (const auto& s : roster) n += s.learning() ? 1 : 0;
    return n;
}

void TrainConfig::validate() const {
    if (roster.empty()) throw ConfigError("roster is empty");
    if (static_cast<int>(roster.size()) != sim.n_stations)
        throw ConfigError("roster size must equal n_stations");
    if (update_interval < 1 || target_interval < 1)
        throw ConfigError("update intervals must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
    if (history_len < 1) throw ConfigError("history_len must be >= 1");
    sim.validate();
}

Trainer::Trainer(const TrainConfig& cfg, std::vector<std::unique_ptr<agents::DqnAgent>>& dqns,
                 std::vector<std::unique_ptr<agents::PpoAgent>>& ppos, Rng& rng)
    : cfg_(cfg),
      dqns_(dqns),
      ppos_(ppos),
      v_opt_(0, cfg.lr_q) {
    int di = 0, pi = 0;
    for (const auto& s : cfg.roster) {
        if (s.kind == StationSpec::Kind::Dqn) {
            agent_kind_.push_back(0);
            agent_sub_.push_back(di++);
        } else if (s.kind == StationSpec::Kind::Ppo) {
            agent_kind_.push_back(1);
            agent_sub_.push_back(pi++);
        }
    }
    const int n = static_cast<int>(agent_kind_.size());
    if (n > 0) {
        mixer_ = MixingNetwork(n, 2 * n, cfg.mix_hidden);
        mixer_.init_params(rng);
        target_mixer_ = mixer_;
        for (auto& d : dqns_) q_opts_.emplace_back(d->net().param_count(), cfg.lr_q);
        for (auto& p : ppos_) q_opts_.emplace_back(p->critic().param_count(), cfg.lr_q);
        q_opts_.emplace_back(mixer_.hyper_w1().param_count(), cfg.lr_q);
        q_opts_.emplace_back(mixer_.hyper_b1().param_count(), cfg.lr_q);
        q_opts_.emplace_back(mixer_.hyper_w2().param_count(), cfg.lr_q);
        q_opts_.emplace_back(mixer_.hyper_b2().param_count(), cfg.lr_q);
        v_opt_ = nn::RmsProp(mixer_.value_head().param_count(), cfg.lr_q);
        for (auto& p : ppos_) actor_opts_.emplace_back(p->actor().param_count(), cfg.lr_actor);
    }
}

double Trainer::agent_q(int slot, std::span<const double> features, int action,
                        nn::Mlp::Cache& cache) const {
    const nn::Mlp& net = agent_kind_[static_cast<std::size_t>(slot)] == 0
                             ? dqns_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(slot)])]->net()
                             : ppos_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(slot)])]->critic();
    return net.forward(features, cache)[static_cast<std::size_t>(action)];
}

double Trainer::agent_greedy_target_q(int slot, std::span<const double> features) const {
    if (agent_kind_[static_cast<std::size_t>(slot)] == 0)
        return dqns_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(slot)])]->greedy_target_q(features);
    return ppos_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(slot)])]->greedy_target_q(features);
}

double Trainer::agent_next_target_q(int slot, const Transition& tr) const {
    const auto& feat = tr.next_obs[static_cast<std::size_t>(slot)];
    if (!tr.next_forced_wait) return agent_greedy_target_q(slot, feat);
    // Busy successor: the policy there is the forced Wait, not a greedy max.
    if (agent_kind_[static_cast<std::size_t>(slot)] == 0)
        return dqns_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(slot)])]->target_q(feat, 0);
    return ppos_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(slot)])]->target_q(feat, 0);
}

double Trainer::qtot_loss(std::span<const std::size_t> batch, const ReplayBuffer& buffer,
                          std::vector<std::vector<double>>& agent_grads,
                          MixingNetwork::Grads& mix_grads) {
    const int n = static_cast<int>(agent_kind_.size());
    if (static_cast<int>(agent_grads.size()) != n) agent_grads.resize(static_cast<std::size_t>(n));
    double loss = 0.0;
    std::vector<nn::Mlp::Cache> caches(static_cast<std::size_t>(n));
    std::vector<double> q(static_cast<std::size_t>(n)), qn(static_cast<std::size_t>(n));
    MixingNetwork::Cache mix_cache;
    for (std::size_t idx : batch) {
        const Transition& tr = buffer[idx];
        for (int i = 0; i < n; ++i)
            q[static_cast<std::size_t>(i)] =
                agent_q(i, tr.obs[static_cast<std::size_t>(i)], tr.actions[static_cast<std::size_t>(i)],
                        caches[static_cast<std::size_t>(i)]);
        const double q_tot = mixer_.mix(q, tr.state, mix_cache);
        // Joint max on the target decomposes per agent under IGM.
        for (int i = 0; i < n; ++i)
            qn[static_cast<std::size_t>(i)] = agent_next_target_q(i, tr);
        const double y = tr.reward + cfg_.gamma * target_mixer_.mix(qn, tr.next_state);
        const double err = q_tot - y;
        loss += err * err;
        std::vector<double> dq;
        mixer_.backward(mix_cache, 2.0 * err, mix_grads, &dq);
        for (int i = 0; i < n; ++i) {
            std::vector<double> dout(agents::kNumActions, 0.0);
            dout[static_cast<std::size_t>(tr.actions[static_cast<std::size_t>(i)])] =
                dq[static_cast<std::size_t>(i)];
            const nn::Mlp& net = agent_kind_[static_cast<std::size_t>(i)] == 0
                                     ? dqns_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(i)])]->net()
                                     : ppos_[static_cast<std::size_t>(agent_sub_[static_cast<std::size_t>(i)])]->critic();
            net.backward(caches[static_cast<std::size_t>(i)], dout, agent_grads[static_cast<std::size_t>(i)]);
        }
    }
    return loss;
}

double Trainer::v_loss(std::span<const std::size_t> batch, const ReplayBuffer& buffer,
                       std::vector<double>& v_grads) {
    double loss = 0.0;
    nn::Mlp::Cache cache;
    for (std::size_t idx : batch) {
        const Transition& tr = buffer[idx];
        const double v = mixer_.value(tr.state, cache);
        const double target = tr.reward + cfg_.gamma * target_mixer_.value(tr.next_state);
        const double delta = target - v;
        loss += delta * delta;
        mixer_.value_backward(cache, -2.0 * delta, v_grads);
    }
    return loss;
}

TrainStepLog Trainer::train_step(const ReplayBuffer& buffer, Rng& rng) {
    if (buffer.size() == 0) return {};
    if (cfg_.independent) return independent_step(buffer, rng);

    TrainStepLog log;
    const auto batch = buffer.sample_indices(
        std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), buffer.size()), rng);

    const int n = static_cast<int>(agent_kind_.size());
    std::vector<std::vector<double>> agent_grads(static_cast<std::size_t>(n));
    MixingNetwork::Grads mix_grads;
    log.l_qtot = qtot_loss(batch, buffer, agent_grads, mix_grads);

    std::vector<double> v_grads(mixer_.value_head().param_count(), 0.0);
    log.l_v = v_loss(batch, buffer, v_grads);

    // Actor loss over the transitions gathered since the last update so
    // the old-policy ratios stay meaningful; GAE truncates at the window.
    std::vector<std::vector<double>> actor_grads(ppos_.size());
    for (std::size_t j = 0; j < ppos_.size(); ++j)
        actor_grads[j].assign(ppos_[j]->actor().param_count(), 0.0);
    // The clipped surrogate is on-policy: re-applying it to a window that has
    // not turned over since the last actor step compounds unclipped drift, so
    // the actors wait for N_c fresh transitions.
    const bool fresh_window = buffer.pushed() >= actor_mark_ + static_cast<std::size_t>(cfg_.update_interval);
    const auto window = buffer.recent(static_cast<std::size_t>(cfg_.update_interval));
    if (fresh_window && !window.empty() && !ppos_.empty()) {
        std::vector<double> deltas(window.size());
        for (std::size_t t = 0; t < window.size(); ++t) {
            const Transition& tr = *window[t];
            deltas[t] = tr.reward + cfg_.gamma * target_mixer_.value(tr.next_state) -
                        mixer_.value(tr.state);
        }
        const auto adv = agents::gae(deltas, cfg_.gamma, cfg_.gae_lambda);
        for (int slot = 0; slot < n; ++slot) {
            if (agent_kind_[static_cast<std::size_t>(slot)] != 1) continue;
            const int j = agent_sub_[static_cast<std::size_t>(slot)];
            std::vector<agents::ActorSample> samples(window.size());
            for (std::size_t t = 0; t < window.size(); ++t) {
                samples[t].features = (*window[t]).obs[static_cast<std::size_t>(slot)];
                samples[t].action = (*window[t]).actions[static_cast<std::size_t>(slot)];
                samples[t].advantage = adv[t];
            }
            log.l_actor += agents::ppo_actor_loss(ppos_[static_cast<std::size_t>(j)]->actor(),
                                                  ppos_[static_cast<std::size_t>(j)]->actor_old(),
                                                  samples, cfg_.clip_delta,
                                                  actor_grads[static_cast<std::size_t>(j)]);
        }
        actor_mark_ = buffer.pushed();
    }

    // Optimize: theta_tot jointly, theta_V, then each actor.
    std::vector<std::vector<double>*> qtot_group;
    for (auto& g : agent_grads) qtot_group.push_back(&g);
    qtot_group.push_back(&mix_grads.w1);
    qtot_group.push_back(&mix_grads.b1);
    qtot_group.push_back(&mix_grads.w2);
    qtot_group.push_back(&mix_grads.b2);
    clip_group_norm(qtot_group, cfg_.grad_clip);

    // q_opts_ holds dqn nets first, then ppo critics, then the four
    // hypernets; agent_grads are in roster-slot order.
    std::size_t opt = 0;
    {
        int di = 0, pi = 0;
        for (int slot = 0; slot < n; ++slot) {
            if (agent_kind_[static_cast<std::size_t>(slot)] == 0) {
                q_opts_[static_cast<std::size_t>(di)].step(
                    dqns_[static_cast<std::size_t>(di)]->net().params(),
                    agent_grads[static_cast<std::size_t>(slot)]);
                ++di;
            } else {
                q_opts_[dqns_.size() + static_cast<std::size_t>(pi)].step(
                    ppos_[static_cast<std::size_t>(pi)]->critic().params(),
                    agent_grads[static_cast<std::size_t>(slot)]);
                ++pi;
            }
        }
        opt = dqns_.size() + ppos_.size();
    }
    q_opts_[opt + 0].step(mixer_.hyper_w1().params(), mix_grads.w1);
    q_opts_[opt + 1].step(mixer_.hyper_b1().params(), mix_grads.b1);
    q_opts_[opt + 2].step(mixer_.hyper_w2().params(), mix_grads.w2);
    q_opts_[opt + 3].step(mixer_.hyper_b2().params(), mix_grads.b2);

    clip_group_norm({&v_grads}, cfg_.grad_clip);
    v_opt_.step(mixer_.value_head().params(), v_grads);

    for (std::size_t j = 0; j < ppos_.size(); ++j) {
        clip_group_norm({&actor_grads[j]}, cfg_.grad_clip);
        actor_opts_[j].step(ppos_[j]->actor().params(), actor_grads[j]);
        ppos_[j]->refresh_old_actor();
    }
    for (auto& d : dqns_) d->decay_epsilon();

    ++update_count_;
    if (update_count_ % cfg_.target_interval == 0) sync_targets();
    return log;
}

TrainStepLog Trainer::independent_step(const ReplayBuffer& buffer, Rng& rng) {
    TrainStepLog log;
    const auto batch = buffer.sample_indices(
        std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), buffer.size()), rng);
    const int n = static_cast<int>(agent_kind_.size());
    nn::Mlp::Cache cache;

    int di = 0, pi = 0;
    for (int slot = 0; slot < n; ++slot) {
        if (agent_kind_[static_cast<std::size_t>(slot)] == 0) {
            auto& agent = *dqns_[static_cast<std::size_t>(di)];
            std::vector<double> grads(agent.net().param_count(), 0.0);
            for (std::size_t idx : batch) {
                const Transition& tr = buffer[idx];
                const auto& feat = tr.obs[static_cast<std::size_t>(slot)];
                const int a = tr.actions[static_cast<std::size_t>(slot)];
                const double qv = agent.net().forward(feat, cache)[static_cast<std::size_t>(a)];
                const auto& nf = tr.next_obs[static_cast<std::size_t>(slot)];
                const double y = tr.reward + cfg_.gamma * (tr.next_forced_wait
                                                               ? agent.target_q(nf, 0)
                                                               : agent.greedy_target_q(nf));
                const double err = qv - y;
                log.l_qtot += err * err;
                std::vector<double> dout(agents::kNumActions, 0.0);
                dout[static_cast<std::size_t>(a)] = 2.0 * err;
                agent.net().backward(cache, dout, grads);
            }
            clip_group_norm({&grads}, cfg_.grad_clip);
            q_opts_[static_cast<std::size_t>(di)].step(agent.net().params(), grads);
            ++di;
        } else {
            auto& agent = *ppos_[static_cast<std::size_t>(pi)];
            std::vector<double> cgrads(agent.critic().param_count(), 0.0);
            for (std::size_t idx : batch) {
                const Transition& tr = buffer[idx];
                const auto& feat = tr.obs[static_cast<std::size_t>(slot)];
                const int a = tr.actions[static_cast<std::size_t>(slot)];
                const double qv = agent.critic().forward(feat, cache)[static_cast<std::size_t>(a)];
                const auto& nf = tr.next_obs[static_cast<std::size_t>(slot)];
                const double y = tr.reward + cfg_.gamma * (tr.next_forced_wait
                                                               ? agent.target_q(nf, 0)
                                                               : agent.greedy_target_q(nf));
                const double err = qv - y;
                log.l_v += err * err;
                std::vector<double> dout(agents::kNumActions, 0.0);
                dout[static_cast<std::size_t>(a)] = 2.0 * err;
                agent.critic().backward(cache, dout, cgrads);
            }
            clip_group_norm({&cgrads}, cfg_.grad_clip);
            q_opts_[dqns_.size() + static_cast<std::size_t>(pi)].step(agent.critic().params(), cgrads);

            // Own-critic advantage over the recent window; skipped until the
            // window has fully turned over (see train_step).
            const bool fresh_window =
                buffer.pushed() >= actor_mark_ + static_cast<std::size_t>(cfg_.update_interval);
            const auto window = buffer.recent(static_cast<std::size_t>(cfg_.update_interval));
            if (fresh_window && !window.empty()) {
                std::vector<agents::ActorSample> samples(window.size());
                for (std::size_t t = 0; t < window.size(); ++t) {
                    const Transition& tr = *window[t];
                    const auto& feat = tr.obs[static_cast<std::size_t>(slot)];
                    const auto qvals = agent.critic().forward(feat);
                    const auto pol = agent.policy(feat);
                    const int a = tr.actions[static_cast<std::size_t>(slot)];
                    const double baseline = pol[0] * qvals[0] + pol[1] * qvals[1];
                    samples[t].features = feat;
                    samples[t].action = a;
                    samples[t].advantage = qvals[static_cast<std::size_t>(a)] - baseline;
                }
                std::vector<double> agrads(agent.actor().param_count(), 0.0);
                log.l_actor += agents::ppo_actor_loss(agent.actor(), agent.actor_old(), samples,
                                                      cfg_.clip_delta, agrads);
                clip_group_norm({&agrads}, cfg_.grad_clip);
                actor_opts_[static_cast<std::size_t>(pi)].step(agent.actor().params(), agrads);
                agent.refresh_old_actor();
            }
            ++pi;
        }
    }
    if (buffer.pushed() >= actor_mark_ + static_cast<std::size_t>(cfg_.update_interval))
        actor_mark_ = buffer.pushed();
    for (auto& d : dqns_) d->decay_epsilon();
    ++update_count_;
    if (update_count_ % cfg_.target_interval == 0) sync_targets();
    return log;
}

void Trainer::sync_targets() {
    for (auto& d : dqns_) d->sync_target();
    for (auto& p : ppos_) p->sync_target();
    if (!agent_kind_.empty() && !cfg_.independent) target_mixer_ = mixer_;
}

Simulation::Simulation(const TrainConfig& cfg) : cfg_(cfg), rng_(cfg.sim.rng_seed) {
    cfg_.validate();
    agents::AgentNetConfig net_cfg;
    net_cfg.input_size = 5 * cfg_.history_len;
    for (const auto& s : cfg_.roster) {
        if (s.kind == StationSpec::Kind::Dqn) {
            dqns_.push_back(std::make_unique<agents::DqnAgent>(net_cfg, rng_));
            dqns_.back()->epsilon_decay = cfg_.epsilon_decay;
        }
        else if (s.kind == StationSpec::Kind::Ppo)
            ppos_.push_back(std::make_unique<agents::PpoAgent>(net_cfg, rng_));
    }
    trainer_ = std::make_unique<Trainer>(cfg_, dqns_, ppos_, rng_);
    if (!cfg_.train)
        for (auto& d : dqns_) d->set_epsilon(cfg_.eval_epsilon);
}

RunResult Simulation::run() {
    const int n = cfg_.n_stations();
    env::Bss bss(cfg_.sim);
    ReplayBuffer buffer(cfg_.buffer_capacity);

    std::vector<env::AccessCategory> edca_ac(static_cast<std::size_t>(n), env::AccessCategory::AC_BE);
    std::vector<std::unique_ptr<env::EdcaStation>> edca(static_cast<std::size_t>(n));
    std::vector<int> learn_slot(static_cast<std::size_t>(n), -1);  // station -> learning index
    std::vector<int> learn_station;                                // learning index -> station
    for (int i = 0; i < n; ++i) {
        const auto kind = cfg_.roster[static_cast<std::size_t>(i)].kind;
        if (cfg_.roster[static_cast<std::size_t>(i)].learning()) {
            learn_slot[static_cast<std::size_t>(i)] = static_cast<int>(learn_station.size());
            learn_station.push_back(i);
        } else {
            const auto ac = kind == StationSpec::Kind::EdcaVo   ? env::AccessCategory::AC_VO
                            : kind == StationSpec::Kind::EdcaVi ? env::AccessCategory::AC_VI
                                                                : env::AccessCategory::AC_BE;
            edca[static_cast<std::size_t>(i)] =
                std::make_unique<env::EdcaStation>(ac, cfg_.sim.difs_slots, rng_);
        }
    }
    const int nl = static_cast<int>(learn_station.size());

    std::vector<obs::ObservationTracker> trackers;
    trackers.reserve(static_cast<std::size_t>(nl));
    for (int j = 0; j < nl; ++j)
        trackers.emplace_back(learn_station[static_cast<std::size_t>(j)], cfg_.history_len, cfg_.l_max);

    RunResult result;
    const long long T = cfg_.total_slots;
    const long long final_start = T - T / 10;
    const long long reward_start = T - T / 5;
    std::vector<long long> success_at_final(static_cast<std::size_t>(n), 0);
    double reward_final_sum = 0.0;
    long long reward_final_count = 0;

    double window_reward_sum = 0.0;
    long long window_reward_count = 0;
    std::vector<long long> window_success(static_cast<std::size_t>(n), 0);
    TrainStepLog last_losses;

    std::optional<Transition> pending;
    double pending_reward = 0.0;
    std::vector<env::Action> joint(static_cast<std::size_t>(n), env::Action::Wait);
    std::vector<int> cur_txers;
    int payload_left = 0;

    for (long long t = 0; t < T; ++t) {
        bss.generate_arrivals(rng_);
        // Decisions happen only while the channel is clear; busy slots are
        // forced (keep transmitting or keep waiting), so one transition spans
        // the whole interval between consecutive clear slots.
        const bool decision_slot = !bss.channel_busy();

        // Observe (extends each history), then build s_t from the
        // pre-outcome counters and last actions.
        std::vector<std::vector<double>> features(static_cast<std::size_t>(nl));
        std::vector<obs::DelayCounters> counters(static_cast<std::size_t>(nl));
        std::vector<int> prev_actions(static_cast<std::size_t>(nl));
        for (int j = 0; j < nl; ++j) {
            auto& tk = trackers[static_cast<std::size_t>(j)];
            const int sta = learn_station[static_cast<std::size_t>(j)];
            const int z = bss.sensed_idle(sta) ? 0 : 1;
            features[static_cast<std::size_t>(j)] = tk.observe(z).encode();
            counters[static_cast<std::size_t>(j)] = tk.counters();
            prev_actions[static_cast<std::size_t>(j)] = tk.last_action();
        }
        const auto gstate = obs::build_global_state(counters, prev_actions);
        const auto state_vec = obs::encode_global_state(gstate);

        if (pending && decision_slot) {
            pending->reward = pending_reward / cfg_.sim.packet_slots;
            pending->next_obs = features;
            pending->next_state = state_vec;
            pending->next_forced_wait = false;
            buffer.push(std::move(*pending));
            pending.reset();
        }

        // Actions. A station mid-payload keeps transmitting; otherwise a
        // learner consults its policy only when it may legally transmit.
        std::vector<int> acts(static_cast<std::size_t>(nl), 0);
        for (int i = 0; i < n; ++i) {
            const int j = learn_slot[static_cast<std::size_t>(i)];
            if (bss.transmitting(i)) {
                joint[static_cast<std::size_t>(i)] = env::Action::Transmit;
                if (j >= 0) acts[static_cast<std::size_t>(j)] = 1;
                continue;
            }
            if (j < 0) {
                joint[static_cast<std::size_t>(i)] = edca[static_cast<std::size_t>(i)]->decide(
                    bss.sensed_idle(i), bss.buffer_size(i) > 0, rng_);
                continue;
            }
            int a = 0;
            if (bss.sensed_idle(i) && bss.buffer_size(i) > 0) {
                const auto& feat = features[static_cast<std::size_t>(j)];
                const int k = trainer_->agent_kinds()[static_cast<std::size_t>(j)];
                const int sub = trainer_->agent_subs()[static_cast<std::size_t>(j)];
                a = k == 0 ? dqns_[static_cast<std::size_t>(sub)]->act(feat, rng_).action
                           : ppos_[static_cast<std::size_t>(sub)]->act(feat, rng_).action;
            }
            acts[static_cast<std::size_t>(j)] = a;
            joint[static_cast<std::size_t>(i)] = static_cast<env::Action>(a);
        }

        const auto outcome = bss.step(joint);

        // Shared reward over the learning agents. A slot with a packet in
        // the air counts as that agent transmitting (successfully or not),
        // so every payload slot carries the +1/-1 signal; only genuinely
        // silent slots (idle, SIFS/ACK tail) score 0. A success by a
        // rule-based station never matches the delay argmax.
        if (decision_slot) {
            std::vector<int> txs;
            for (int i = 0; i < n; ++i)
                if (joint[static_cast<std::size_t>(i)] == env::Action::Transmit) txs.push_back(i);
            if (!txs.empty()) {
                cur_txers = std::move(txs);
                payload_left = cfg_.sim.packet_slots;
            }
        }
        int reward = 0;
        if (nl > 0 && payload_left > 0) {
            env::ChannelOutcome in_air;
            if (cur_txers.size() == 1) {
                in_air.kind = env::ChannelOutcome::Kind::Success;
                in_air.station = learn_slot[static_cast<std::size_t>(cur_txers.front())] >= 0
                                     ? learn_slot[static_cast<std::size_t>(cur_txers.front())]
                                     : -2;
            } else {
                in_air.kind = env::ChannelOutcome::Kind::Collision;
                in_air.colliders = cur_txers;
            }
            reward = obs::compute_reward(gstate.D, in_air);
            --payload_left;
        }

        for (int j = 0; j < nl; ++j)
            trackers[static_cast<std::size_t>(j)].commit(outcome, acts[static_cast<std::size_t>(j)]);
        if (outcome.kind == env::ChannelOutcome::Kind::Success) {
            if (auto& st = edca[static_cast<std::size_t>(outcome.station)]) st->on_success(rng_);
        } else if (outcome.kind == env::ChannelOutcome::Kind::Collision) {
            for (int i : outcome.colliders)
                if (auto& st = edca[static_cast<std::size_t>(i)]) st->on_collision(rng_);
        }

        if (nl > 0 && decision_slot) {
            Transition tr;
            tr.obs = std::move(features);
            tr.state = state_vec;
            tr.actions = acts;
            pending = std::move(tr);
            pending_reward = 0.0;
        }
        pending_reward += reward;

        if (cfg_.train && nl > 0 && (t + 1) % cfg_.update_interval == 0 &&
            buffer.size() >= static_cast<std::size_t>(cfg_.batch_size))
            last_losses = trainer_->train_step(buffer, rng_);

        window_reward_sum += reward;
        ++window_reward_count;
        if (t >= reward_start) {
            reward_final_sum += reward;
            ++reward_final_count;
        }
        if (t + 1 == final_start)
            for (int i = 0; i < n; ++i)
                success_at_final[static_cast<std::size_t>(i)] = bss.counters(i).success_slots;

        if ((t + 1) % cfg_.report_window == 0) {
            WindowLog w;
            w.slot_end = t + 1;
            w.throughput_per_station.resize(static_cast<std::size_t>(n));
            double tot = 0.0;
            for (int i = 0; i < n; ++i) {
                const long long s = bss.counters(i).success_slots - window_success[static_cast<std::size_t>(i)];
                window_success[static_cast<std::size_t>(i)] = bss.counters(i).success_slots;
                w.throughput_per_station[static_cast<std::size_t>(i)] =
                    static_cast<double>(s) / cfg_.report_window;
                tot += w.throughput_per_station[static_cast<std::size_t>(i)];
            }
            w.throughput_total = tot;
            w.mean_reward = window_reward_count > 0 ? window_reward_sum / window_reward_count : 0.0;
            w.epsilon = dqns_.empty() ? 0.0 : dqns_.front()->epsilon();
            w.losses = last_losses;
            result.curve.push_back(std::move(w));
            window_reward_sum = 0.0;
            window_reward_count = 0;
        }
    }

    result.stats = metrics::RunStats::from_bss(bss);
    long long final_success = 0;
    std::vector<double> final_per(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const long long s = bss.counters(i).success_slots - success_at_final[static_cast<std::size_t>(i)];
        final_success += s;
        final_per[static_cast<std::size_t>(i)] = static_cast<double>(s);
    }
    const long long final_slots = T - final_start;
    result.final_throughput =
        final_slots > 0 ? static_cast<double>(final_success) / static_cast<double>(final_slots) : 0.0;
    bool any_final = false;
    for (double v : final_per) any_final = any_final || v > 0.0;
    result.final_jfi = any_final ? metrics::jfi(final_per) : 0.0;
    result.mean_reward_final =
        reward_final_count > 0 ? reward_final_sum / reward_final_count : 0.0;
    result.training_updates = trainer_->update_count();
    return result;
}

void Simulation::save_checkpoint(const std::string& path) const {
    std::vector<nn::CheckpointEntry> entries;
    for (std::size_t i = 0; i < dqns_.size(); ++i)
        entries.push_back({"dqn" + std::to_string(i), dqns_[i]->net().params()});
    for (std::size_t i = 0; i < ppos_.size(); ++i) {
        entries.push_back({"ppo" + std::to_string(i) + ".actor", ppos_[i]->actor().params()});
        entries.push_back({"ppo" + std::to_string(i) + ".critic", ppos_[i]->critic().params()});
    }
    if (!trainer_->agent_kinds().empty() && !cfg_.independent) {
        const auto& m = trainer_->mixer();
        entries.push_back({"mix.hyper_w1", m.hyper_w1().params()});
        entries.push_back({"mix.hyper_b1", m.hyper_b1().params()});
        entries.push_back({"mix.hyper_w2", m.hyper_w2().params()});
        entries.push_back({"mix.hyper_b2", m.hyper_b2().params()});
        entries.push_back({"mix.value", m.value_head().params()});
    }
    nn::save_checkpoint(path, entries);
}

void Simulation::load_checkpoint(const std::string& path) {
    const auto entries = nn::load_checkpoint(path);
    auto find = [&](const std::string& name) -> const std::vector<double>* {
        for (const auto& e : entries)
            if (e.name == name) return &e.values;
        return nullptr;
    };
    auto assign = [&](const std::string& name, std::vector<double>& dst) {
        const auto* v = find(name);
        if (v == nullptr) throw ConfigError("checkpoint missing entry: " + name);
        if (v->size() != dst.size()) throw ConfigError("checkpoint size mismatch: " + name);
        dst = *v;
    };
    for (std::size_t i = 0; i < dqns_.size(); ++i) {
        assign("dqn" + std::to_string(i), dqns_[i]->net().params());
        dqns_[i]->sync_target();
    }
    for (std::size_t i = 0; i < ppos_.size(); ++i) {
        assign("ppo" + std::to_string(i) + ".actor", ppos_[i]->actor().params());
        assign("ppo" + std::to_string(i) + ".critic", ppos_[i]->critic().params());
        ppos_[i]->refresh_old_actor();
        ppos_[i]->sync_target();
    }
    if (!trainer_->agent_kinds().empty() && !cfg_.independent && find("mix.hyper_w1") != nullptr) {
        auto& m = trainer_->mixer();
        assign("mix.hyper_w1", m.hyper_w1().params());
        assign("mix.hyper_b1", m.hyper_b1().params());
        assign("mix.hyper_w2", m.hyper_w2().params());
        assign("mix.hyper_b2", m.hyper_b2().params());
        assign("mix.value", m.value_head().params());
    }
}

}  // namespace dca::qpmix
