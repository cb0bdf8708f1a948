#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dca/rng.hpp"

namespace dca::convlab {

// Finite MDP with linear Q-function features. Row index s*|A|+a over
// joint actions a (agent 0 least significant digit).
struct LinearMdp {
    int n_states = 0;
    int n_agents = 0;
    int n_actions = 2;  // per agent
    double gamma = 0.5;
    Eigen::MatrixXd P;    // (S*A) x S transition probabilities
    Eigen::VectorXd R;    // S*A deterministic shared reward
    Eigen::MatrixXd phi;  // (S*A) x K, full column rank

    int n_joint() const;
    int k() const { return static_cast<int>(phi.cols()); }
    int sa_index(int s, int a) const { return s * n_joint() + a; }
    int agent_action(int joint, int agent) const;
    int with_agent_action(int joint, int agent, int action) const;
    void validate() const;  // throws ConfigError on violated invariants
};

// Seeded random MDP; 0.05 uniform smoothing keeps the chain irreducible.
// k = 0 requests tabular features (phi = identity, K = S*A).
LinearMdp make_random_mdp(Rng& rng, int n_states, int n_agents, int k, double gamma);

// Per-agent policy factor: epsilon-greedy over a frozen linear Q, or
// softmax-linear with learnable theta. Both score own actions with the
// joint features averaged over the other agents' actions.
struct AgentPolicy {
    enum class Kind { EpsGreedy, Softmax };
    Kind kind = Kind::Softmax;
    Eigen::VectorXd w;  // omega_ref (EpsGreedy) or theta (Softmax)
    double eps = 0.1;
};

struct JointPolicy {
    std::vector<AgentPolicy> agents;
};

// Own-action features psi^j(s, a^j): mean of phi(s, .) over the other
// agents' actions.
Eigen::VectorXd psi_features(const LinearMdp& mdp, int agent, int s, int action);

// Per-agent action distribution at s.
Eigen::VectorXd agent_policy_probs(const LinearMdp& mdp, const AgentPolicy& pol, int agent, int s);
// S x A joint policy matrix, product of the factors.
Eigen::MatrixXd policy_matrix(const LinearMdp& mdp, const JointPolicy& pol);

// State chain S x S under the joint policy and its stationary distribution.
Eigen::MatrixXd state_chain(const LinearMdp& mdp, const Eigen::MatrixXd& pi);
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& chain);

// Column-stochastic consensus matrices.
Eigen::MatrixXd uniform_consensus(int n);  // 11^T/N
Eigen::MatrixXd lazy_consensus(int n);     // (I + 11^T/N)/2, doubly stochastic
void check_column_stochastic(const Eigen::MatrixXd& c);

struct Sample {
    int s = 0, a = 0;  // joint action
    double r = 0.0;
    int s2 = 0, a2 = 0;  // on-policy successor pair
};

// One TD step per agent with consensus over the value estimates:
//   dhat_i = r + N^-1 sum_k c(i,k) [gamma phi'^T w_k - phi^T w_k]
//   w_i   += beta * dhat_i * phi
void consensus_td_update(const LinearMdp& mdp, std::vector<Eigen::VectorXd>& omegas,
                         const Sample& tr, const Eigen::MatrixXd& c, double beta);

// Average-weights TD error dbar = r + N^-1 (gamma phi' - phi)^T wbar;
// the mean of the per-agent updates reduces to it exactly.
double mean_td_error(const LinearMdp& mdp, const std::vector<Eigen::VectorXd>& omegas,
                     const Sample& tr);

// Advantage of the taken own action under the agent's critic, and the
// policy-gradient step with box projection |theta|_inf <= radius.
double advantage(const LinearMdp& mdp, const JointPolicy& pol, int agent,
                 const Eigen::VectorXd& omega, int s, int a);
Eigen::VectorXd log_policy_grad(const LinearMdp& mdp, const AgentPolicy& pol, int agent,
                                int s, int action);
void actor_update(const LinearMdp& mdp, JointPolicy& pol, int agent,
                  const Eigen::VectorXd& omega, const Sample& tr, double beta,
                  double radius = 10.0);

// Direct solve of the TD fixed point in the same convention as the
// iterative update: Phi^T D (I - gamma P_pi) Phi w = N Phi^T D R.
// Throws NumericalError when the system is singular.
Eigen::VectorXd solve_fixed_point(const LinearMdp& mdp, const Eigen::MatrixXd& pi, int n_agents);

double disagreement_norm(const std::vector<Eigen::VectorXd>& omegas);

// Exactly enumerated expected actor update for one softmax agent.
Eigen::VectorXd expected_actor_update(const LinearMdp& mdp, const JointPolicy& pol, int agent,
                                      const Eigen::VectorXd& omega);

// Power-law schedule beta_t = b0 * (t0 + t)^-p. Validity per the
// two-time-scale conditions: 0.5 < p <= 1 for each sequence and the
// actor exponent strictly larger than the critic's.
struct StepSchedule {
    double b0 = 1.0;
    double p = 0.9;
    double t0 = 1.0;
    double at(long long t) const;
};
bool schedule_valid(const StepSchedule& critic, const StepSchedule& actor);

struct LabConfig {
    std::uint64_t seed = 1;
    int n_states = 3;
    int n_agents = 2;
    int k = 0;  // 0 = tabular
    double gamma = 0.2;
    long long iters = 1000000;
    StepSchedule beta_omega{5.0, 0.75, 10.0};
    StepSchedule beta_theta{60.0, 0.85, 10.0};
    bool train_actor = false;  // false: frozen policy (fixed-point study)
    double eps_greedy = 0.7;
    double init_spread = 1e-3;  // initial per-agent disagreement scale
    long long trace_interval = 10000;
};

struct TraceRow {
    long long iter = 0;
    double disagreement = 0.0;
    double omega_err = 0.0;
    double actor_grad_norm = 0.0;
};

struct LabResult {
    double omega_err = 0.0;        // |wbar - w_Theta| at the final policy
    double disagreement = 0.0;     // |w_perp| at the end
    double omega_err_best = 0.0;   // smallest error seen at any check point
    double disagreement_best = 0.0;
    double stationarity = 0.0;     // enumerated actor update norm
    double empirical_tv = 0.0;     // state-frequency vs d_Theta
    std::vector<TraceRow> trace;
};

LabResult run_convergence(const LabConfig& cfg);

}  // namespace dca::convlab
