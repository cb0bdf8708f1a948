#include "dca/convlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dca/errors.hpp"

namespace dca::convlab {

namespace {

int ipow(int base, int e) {
    int r = 1;
    while (e-- > 0) r *= base;
    return r;
}

int sample_discrete(const Eigen::VectorXd& probs, Rng& rng) {
    double u = rng.uniform();
    for (int i = 0; i < probs.size(); ++i) {
        u -= probs(i);
        if (u <= 0.0) return i;
    }
    return static_cast<int>(probs.size()) - 1;
}

}  // namespace

int LinearMdp::n_joint() const { return ipow(n_actions, n_agents); }

int LinearMdp::agent_action(int joint, int agent) const {
    return (joint / ipow(n_actions, agent)) % n_actions;
}

int LinearMdp::with_agent_action(int joint, int agent, int action) const {
    const int base = ipow(n_actions, agent);
    const int cur = agent_action(joint, agent);
    return joint + (action - cur) * base;
}

void LinearMdp::validate() const {
    if (n_states < 1 || n_agents < 1 || n_actions < 1) throw ConfigError("empty MDP");
    const int rows = n_states * n_joint();
    if (P.rows() != rows || P.cols() != n_states) throw ConfigError("bad P shape");
    if (R.size() != rows) throw ConfigError("bad R size");
    if (phi.rows() != rows) throw ConfigError("bad phi shape");
    for (int r = 0; r < rows; ++r) {
        if (std::fabs(P.row(r).sum() - 1.0) > 1e-9 || P.row(r).minCoeff() < 0.0)
            throw ConfigError("transition row is not a distribution");
        if (!std::isfinite(R(r))) throw ConfigError("unbounded reward");
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(phi);
    if (qr.rank() != phi.cols()) throw ConfigError("feature matrix is rank deficient");
}

LinearMdp make_random_mdp(Rng& rng, int n_states, int n_agents, int k, double gamma) {
    LinearMdp m;
    m.n_states = n_states;
    m.n_agents = n_agents;
    m.gamma = gamma;
    const int rows = n_states * m.n_joint();
    m.P.resize(rows, n_states);
    m.R.resize(rows);
    for (int r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (int s = 0; s < n_states; ++s) {
            m.P(r, s) = rng.uniform();
            sum += m.P(r, s);
        }
        // smooth toward uniform so the chain stays irreducible
        for (int s = 0; s < n_states; ++s)
            m.P(r, s) = 0.95 * m.P(r, s) / sum + 0.05 / n_states;
        m.R(r) = rng.uniform();
    }
    if (k <= 0) {
        m.phi = Eigen::MatrixXd::Identity(rows, rows);
    } else {
        if (k >= rows) throw ConfigError("k must be < |S||A| for compressed features");
        Eigen::MatrixXd raw(rows, k);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < k; ++c) raw(r, c) = rng.normal();
        // orthonormal columns keep the projected system well conditioned
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        m.phi = Eigen::MatrixXd(qr.householderQ()) .leftCols(k);
    }
    m.validate();
    return m;
}

Eigen::VectorXd psi_features(const LinearMdp& mdp, int agent, int s, int action) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(mdp.k());
    int count = 0;
    for (int a = 0; a < mdp.n_joint(); ++a) {
        if (mdp.agent_action(a, agent) != action) continue;
        out += mdp.phi.row(mdp.sa_index(s, a)).transpose();
        ++count;
    }
    return out / count;
}

Eigen::VectorXd agent_policy_probs(const LinearMdp& mdp, const AgentPolicy& pol, int agent,
                                   int s) {
    const int na = mdp.n_actions;
    Eigen::VectorXd score(na);
    for (int b = 0; b < na; ++b) score(b) = pol.w.dot(psi_features(mdp, agent, s, b));
    Eigen::VectorXd probs(na);
    if (pol.kind == AgentPolicy::Kind::EpsGreedy) {
        int best = 0;
        for (int b = 1; b < na; ++b)
            if (score(b) > score(best)) best = b;
        for (int b = 0; b < na; ++b) probs(b) = pol.eps / na + (b == best ? 1.0 - pol.eps : 0.0);
    } else {
        const double mx = score.maxCoeff();
        for (int b = 0; b < na; ++b) probs(b) = std::exp(score(b) - mx);
        probs /= probs.sum();
    }
    return probs;
}

Eigen::MatrixXd policy_matrix(const LinearMdp& mdp, const JointPolicy& pol) {
    if (static_cast<int>(pol.agents.size()) != mdp.n_agents)
        throw ConfigError("policy size does not match agent count");
    Eigen::MatrixXd pi(mdp.n_states, mdp.n_joint());
    for (int s = 0; s < mdp.n_states; ++s) {
        std::vector<Eigen::VectorXd> factors;
        for (int j = 0; j < mdp.n_agents; ++j)
            factors.push_back(agent_policy_probs(mdp, pol.agents[static_cast<std::size_t>(j)], j, s));
        for (int a = 0; a < mdp.n_joint(); ++a) {
            double p = 1.0;
            for (int j = 0; j < mdp.n_agents; ++j)
                p *= factors[static_cast<std::size_t>(j)](mdp.agent_action(a, j));
            pi(s, a) = p;
        }
    }
    return pi;
}

Eigen::MatrixXd state_chain(const LinearMdp& mdp, const Eigen::MatrixXd& pi) {
    Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_joint(); ++a)
            chain.row(s) += pi(s, a) * mdp.P.row(mdp.sa_index(s, a));
    return chain;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& chain) {
    const int n = static_cast<int>(chain.rows());
    Eigen::MatrixXd m = chain.transpose() - Eigen::MatrixXd::Identity(n, n);
    m.row(n - 1).setOnes();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    if (!lu.isInvertible()) throw NumericalError("stationary distribution solve is singular");
    return lu.solve(rhs);
}

Eigen::MatrixXd uniform_consensus(int n) {
    return Eigen::MatrixXd::Constant(n, n, 1.0 / n);
}

Eigen::MatrixXd lazy_consensus(int n) {
    return 0.5 * (Eigen::MatrixXd::Identity(n, n) + uniform_consensus(n));
}

void check_column_stochastic(const Eigen::MatrixXd& c) {
    if (c.minCoeff() < 0.0) throw ConfigError("consensus matrix has negative entries");
    for (int j = 0; j < c.cols(); ++j)
        if (std::fabs(c.col(j).sum() - 1.0) > 1e-9)
            throw ConfigError("consensus matrix is not column stochastic");
}

void consensus_td_update(const LinearMdp& mdp, std::vector<Eigen::VectorXd>& omegas,
                         const Sample& tr, const Eigen::MatrixXd& c, double beta) {
    const int n = static_cast<int>(omegas.size());
    const Eigen::VectorXd f = mdp.phi.row(mdp.sa_index(tr.s, tr.a)).transpose();
    const Eigen::VectorXd f2 = mdp.phi.row(mdp.sa_index(tr.s2, tr.a2)).transpose();
    Eigen::VectorXd diff(n);  // gamma Q'_k - Q_k
    for (int k = 0; k < n; ++k)
        diff(k) = mdp.gamma * f2.dot(omegas[static_cast<std::size_t>(k)]) -
                  f.dot(omegas[static_cast<std::size_t>(k)]);
    for (int i = 0; i < n; ++i) {
        const double dhat = tr.r + c.row(i).dot(diff) / n;
        omegas[static_cast<std::size_t>(i)] += beta * dhat * f;
    }
}

double mean_td_error(const LinearMdp& mdp, const std::vector<Eigen::VectorXd>& omegas,
                     const Sample& tr) {
    const int n = static_cast<int>(omegas.size());
    Eigen::VectorXd wbar = Eigen::VectorXd::Zero(mdp.k());
    for (const auto& w : omegas) wbar += w;
    wbar /= n;
    const Eigen::VectorXd f = mdp.phi.row(mdp.sa_index(tr.s, tr.a)).transpose();
    const Eigen::VectorXd f2 = mdp.phi.row(mdp.sa_index(tr.s2, tr.a2)).transpose();
    return tr.r + (mdp.gamma * f2 - f).dot(wbar) / n;
}

double advantage(const LinearMdp& mdp, const JointPolicy& pol, int agent,
                 const Eigen::VectorXd& omega, int s, int a) {
    const double q = mdp.phi.row(mdp.sa_index(s, a)).dot(omega);
    const Eigen::VectorXd probs =
        agent_policy_probs(mdp, pol.agents[static_cast<std::size_t>(agent)], agent, s);
    double baseline = 0.0;
    for (int b = 0; b < mdp.n_actions; ++b)
        baseline += probs(b) * mdp.phi.row(mdp.sa_index(s, mdp.with_agent_action(a, agent, b)))
                                   .dot(omega);
    return q - baseline;
}

Eigen::VectorXd log_policy_grad(const LinearMdp& mdp, const AgentPolicy& pol, int agent,
                                int s, int action) {
    if (pol.kind != AgentPolicy::Kind::Softmax)
        throw ConfigError("log_policy_grad requires a softmax agent");
    const Eigen::VectorXd probs = agent_policy_probs(mdp, pol, agent, s);
    Eigen::VectorXd g = psi_features(mdp, agent, s, action);
    for (int b = 0; b < mdp.n_actions; ++b) g -= probs(b) * psi_features(mdp, agent, s, b);
    return g;
}

void actor_update(const LinearMdp& mdp, JointPolicy& pol, int agent,
                  const Eigen::VectorXd& omega, const Sample& tr, double beta, double radius) {
    AgentPolicy& ap = pol.agents[static_cast<std::size_t>(agent)];
    const double adv = advantage(mdp, pol, agent, omega, tr.s, tr.a);
    const Eigen::VectorXd g =
        log_policy_grad(mdp, ap, agent, tr.s, mdp.agent_action(tr.a, agent));
    ap.w += beta * adv * g;
    ap.w = ap.w.cwiseMax(-radius).cwiseMin(radius);
}

Eigen::VectorXd solve_fixed_point(const LinearMdp& mdp, const Eigen::MatrixXd& pi,
                                  int n_agents) {
    const int rows = mdp.n_states * mdp.n_joint();
    const Eigen::VectorXd d = stationary_distribution(state_chain(mdp, pi));
    Eigen::VectorXd dsa(rows);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_joint(); ++a) dsa(mdp.sa_index(s, a)) = d(s) * pi(s, a);
    Eigen::MatrixXd ppi = Eigen::MatrixXd::Zero(rows, rows);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_joint(); ++a)
            for (int s2 = 0; s2 < mdp.n_states; ++s2)
                for (int a2 = 0; a2 < mdp.n_joint(); ++a2)
                    ppi(mdp.sa_index(s, a), mdp.sa_index(s2, a2)) =
                        mdp.P(mdp.sa_index(s, a), s2) * pi(s2, a2);
    const Eigen::MatrixXd dmat = dsa.asDiagonal();
    const Eigen::MatrixXd lhs =
        mdp.phi.transpose() * dmat *
        (Eigen::MatrixXd::Identity(rows, rows) - mdp.gamma * ppi) * mdp.phi;
    const Eigen::VectorXd rhs = static_cast<double>(n_agents) * mdp.phi.transpose() * dmat * mdp.R;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
    if (!lu.isInvertible()) throw NumericalError("TD fixed-point system is singular");
    return lu.solve(rhs);
}

double disagreement_norm(const std::vector<Eigen::VectorXd>& omegas) {
    const int n = static_cast<int>(omegas.size());
    Eigen::VectorXd wbar = Eigen::VectorXd::Zero(omegas.front().size());
    for (const auto& w : omegas) wbar += w;
    wbar /= n;
    double sq = 0.0;
    for (const auto& w : omegas) sq += (w - wbar).squaredNorm();
    return std::sqrt(sq);
}

Eigen::VectorXd expected_actor_update(const LinearMdp& mdp, const JointPolicy& pol, int agent,
                                      const Eigen::VectorXd& omega) {
    const Eigen::MatrixXd pi = policy_matrix(mdp, pol);
    const Eigen::VectorXd d = stationary_distribution(state_chain(mdp, pi));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(mdp.k());
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_joint(); ++a) {
            const double w = d(s) * pi(s, a);
            if (w <= 0.0) continue;
            g += w * advantage(mdp, pol, agent, omega, s, a) *
                 log_policy_grad(mdp, pol.agents[static_cast<std::size_t>(agent)], agent, s,
                                 mdp.agent_action(a, agent));
        }
    return g;
}

double StepSchedule::at(long long t) const {
    return b0 * std::pow(t0 + static_cast<double>(t), -p);
}

bool schedule_valid(const StepSchedule& critic, const StepSchedule& actor) {
    auto ok = [](const StepSchedule& s) {
        return s.b0 > 0.0 && s.t0 > 0.0 && s.p > 0.5 && s.p <= 1.0;
    };
    return ok(critic) && ok(actor) && actor.p > critic.p;
}

LabResult run_convergence(const LabConfig& cfg) {
    if (!schedule_valid(cfg.beta_omega, cfg.beta_theta))
        throw ConfigError("step schedules violate the two-time-scale conditions");
    Rng rng(cfg.seed);
    const LinearMdp mdp = make_random_mdp(rng, cfg.n_states, cfg.n_agents, cfg.k, cfg.gamma);
    const int kk = mdp.k();

    JointPolicy pol;
    for (int j = 0; j < cfg.n_agents; ++j) {
        AgentPolicy ap;
        if (cfg.train_actor) {
            ap.kind = AgentPolicy::Kind::Softmax;
            ap.w = Eigen::VectorXd::Zero(kk);
        } else if (j == 0) {
            // heterogeneous frozen policy: one eps-greedy value factor,
            // the rest softmax with random fixed parameters
            ap.kind = AgentPolicy::Kind::EpsGreedy;
            ap.eps = cfg.eps_greedy;
            ap.w = Eigen::VectorXd::NullaryExpr(kk, [&](Eigen::Index) { return rng.normal(); });
        } else {
            ap.kind = AgentPolicy::Kind::Softmax;
            ap.w = Eigen::VectorXd::NullaryExpr(kk,
                                                [&](Eigen::Index) { return 0.3 * rng.normal(); });
        }
        pol.agents.push_back(std::move(ap));
    }

    std::vector<Eigen::VectorXd> omegas;
    for (int j = 0; j < cfg.n_agents; ++j)
        omegas.push_back(Eigen::VectorXd::NullaryExpr(
            kk, [&](Eigen::Index) { return cfg.init_spread * rng.normal(); }));

    const Eigen::MatrixXd c = lazy_consensus(cfg.n_agents);
    check_column_stochastic(c);

    auto omega_bar = [&] {
        Eigen::VectorXd wbar = Eigen::VectorXd::Zero(kk);
        for (const auto& w : omegas) wbar += w;
        return Eigen::VectorXd(wbar / cfg.n_agents);
    };
    auto probe_norm = [&] {
        const Eigen::VectorXd wbar = omega_bar();
        double sq = 0.0;
        for (int j = 0; j < cfg.n_agents; ++j)
            if (pol.agents[static_cast<std::size_t>(j)].kind == AgentPolicy::Kind::Softmax)
                sq += expected_actor_update(mdp, pol, j, wbar).squaredNorm();
        return std::sqrt(sq);
    };

    LabResult out;
    out.omega_err_best = std::numeric_limits<double>::infinity();
    out.disagreement_best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd omega_star = solve_fixed_point(mdp, policy_matrix(mdp, pol), cfg.n_agents);

    int s = 0;
    Eigen::MatrixXd pi = policy_matrix(mdp, pol);
    int a = sample_discrete(pi.row(s), rng);
    std::vector<long long> visits(static_cast<std::size_t>(cfg.n_states), 0);

    for (long long t = 0; t < cfg.iters; ++t) {
        const int s2 = sample_discrete(mdp.P.row(mdp.sa_index(s, a)), rng);
        if (cfg.train_actor) pi = policy_matrix(mdp, pol);
        const int a2 = sample_discrete(pi.row(s2), rng);
        const Sample tr{s, a, mdp.R(mdp.sa_index(s, a)), s2, a2};

        consensus_td_update(mdp, omegas, tr, c, cfg.beta_omega.at(t));
        if (cfg.train_actor) {
            const double bt = cfg.beta_theta.at(t);
            for (int j = 0; j < cfg.n_agents; ++j)
                if (pol.agents[static_cast<std::size_t>(j)].kind == AgentPolicy::Kind::Softmax)
                    actor_update(mdp, pol, j, omegas[static_cast<std::size_t>(j)], tr, bt);
        }
        for (const auto& w : omegas)
            if (w.norm() > 1e6) throw NumericalError("critic weights diverged");

        ++visits[static_cast<std::size_t>(s)];
        s = s2;
        a = a2;

        // hitting-time bookkeeping against the current fixed point
        if (!cfg.train_actor && (t + 1) % 5000 == 0) {
            out.omega_err_best = std::min(out.omega_err_best, (omega_bar() - omega_star).norm());
            out.disagreement_best = std::min(out.disagreement_best, disagreement_norm(omegas));
        }

        if (cfg.trace_interval > 0 && (t + 1) % cfg.trace_interval == 0) {
            if (cfg.train_actor)
                omega_star = solve_fixed_point(mdp, policy_matrix(mdp, pol), cfg.n_agents);
            TraceRow row;
            row.iter = t + 1;
            row.disagreement = disagreement_norm(omegas);
            row.omega_err = (omega_bar() - omega_star).norm();
            row.actor_grad_norm = cfg.train_actor ? probe_norm() : 0.0;
            out.trace.push_back(row);
        }
    }

    pi = policy_matrix(mdp, pol);
    omega_star = solve_fixed_point(mdp, pi, cfg.n_agents);
    out.omega_err = (omega_bar() - omega_star).norm();
    out.disagreement = disagreement_norm(omegas);
    out.omega_err_best = std::min(out.omega_err_best, out.omega_err);
    out.disagreement_best = std::min(out.disagreement_best, out.disagreement);
    out.stationarity = cfg.train_actor ? probe_norm() : 0.0;

    const Eigen::VectorXd d = stationary_distribution(state_chain(mdp, pi));
    double tv = 0.0;
    for (int i = 0; i < cfg.n_states; ++i)
        tv += std::fabs(static_cast<double>(visits[static_cast<std::size_t>(i)]) / cfg.iters - d(i));
    out.empirical_tv = 0.5 * tv;
    return out;
}

}  // namespace dca::convlab
