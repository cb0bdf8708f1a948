#include "dca/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "dca/metrics.hpp"

namespace dca::cli {

namespace {

const std::vector<std::string> kScenarios = {
    "saturated",     "unsaturated",          "voip",    "mixed-roster",
    "coexistence",   "independent-learning", "convlab",
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw RangeViolation(key);
        return d;
    } catch (const RangeViolation&) {
        throw;
    } catch (...) {
        throw RangeViolation(key);
    }
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw RangeViolation(key);
        return i;
    } catch (const RangeViolation&) {
        throw;
    } catch (...) {
        throw RangeViolation(key);
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

env::TrafficModel::Kind traffic_kind(const std::string& key, const std::string& v) {
    if (v == "saturated") return env::TrafficModel::Kind::Saturated;
    if (v == "poisson") return env::TrafficModel::Kind::Poisson;
    if (v == "periodic") return env::TrafficModel::Kind::Periodic;
    throw RangeViolation(key);
}

std::string traffic_name(env::TrafficModel::Kind k) {
    switch (k) {
        case env::TrafficModel::Kind::Saturated: return "saturated";
        case env::TrafficModel::Kind::Poisson: return "poisson";
        case env::TrafficModel::Kind::Periodic: return "periodic";
    }
    return "saturated";
}

void apply_scenario_defaults(ScenarioSpec& s) {
    auto& tm = s.train.sim.traffic;
    tm.assign(1, env::TrafficModel{});
    if (s.scenario == "unsaturated" || s.scenario == "coexistence") {
        tm[0].kind = env::TrafficModel::Kind::Poisson;
        tm[0].lambda_pps = 200.0;
    } else if (s.scenario == "voip") {
        tm[0].kind = env::TrafficModel::Kind::Periodic;
        tm[0].period_ms = 20.0;
    }
    s.train.independent = s.scenario == "independent-learning";
}

// fills the roster from the counts, applying scenario defaults when no
// counts were given
void finalize_roster(ScenarioSpec& s, bool counts_given, bool n_given, int n_stations) {
    if (!counts_given) {
        const int n = n_given ? n_stations : 4;
        if (s.scenario == "coexistence") {
            s.n_edca_be = n;
        } else if (s.scenario == "mixed-roster") {
            s.n_dqn = n - 1;
            s.n_ppo = 1;
        } else {
            s.n_dqn = (n + 1) / 2;
            s.n_ppo = n / 2;
        }
    }
    const int total = s.n_dqn + s.n_ppo + s.n_edca_vo + s.n_edca_vi + s.n_edca_be;
    if (n_given && total != n_stations) throw RosterMismatch("n_stations");
    if (total < 1) throw RangeViolation("n_stations");
    s.train.sim.n_stations = total;
    s.train.roster.clear();
    auto add = [&](int n, qpmix::StationSpec::Kind k) {
        for (int i = 0; i < n; ++i) s.train.roster.push_back({k});
    };
    add(s.n_dqn, qpmix::StationSpec::Kind::Dqn);
    add(s.n_ppo, qpmix::StationSpec::Kind::Ppo);
    add(s.n_edca_vo, qpmix::StationSpec::Kind::EdcaVo);
    add(s.n_edca_vi, qpmix::StationSpec::Kind::EdcaVi);
    add(s.n_edca_be, qpmix::StationSpec::Kind::EdcaBe);
}

int worker_count(std::size_t jobs) {
    if (const char* e = std::getenv("DCA_WORKERS")) {
        const int n = std::atoi(e);
        if (n > 0) return static_cast<int>(std::min<std::size_t>(n, jobs));
    }
    return 1;
}

}  // namespace

ScenarioSpec parse_config(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kvs;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UnknownKey(line);
        kvs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }

    ScenarioSpec s;
    for (const auto& [k, v] : kvs)
        if (k == "scenario") {
            if (std::find(kScenarios.begin(), kScenarios.end(), v) == kScenarios.end())
                throw RangeViolation("scenario");
            s.scenario = v;
        }
    apply_scenario_defaults(s);

    bool counts_given = false, n_given = false;
    int n_stations = 0;
    auto& t = s.train;
    auto& lab = s.lab;
    auto pos_int = [](const std::string& k, const std::string& v, long long lo, long long hi) {
        const long long i = parse_int(k, v);
        if (i < lo || i > hi) throw RangeViolation(k);
        return i;
    };
    auto pos_double = [](const std::string& k, const std::string& v, double lo, double hi) {
        const double d = parse_double(k, v);
        if (!(d >= lo && d <= hi)) throw RangeViolation(k);
        return d;
    };

    for (const auto& [k, v] : kvs) {
        if (k == "scenario") continue;
        if (k == "out_dir") s.out_dir = v;
        else if (k == "checkpoint") s.checkpoint = v;
        else if (k == "eval_only") s.eval_only = pos_int(k, v, 0, 1) != 0;
        else if (k == "seeds") {
            s.seeds.clear();
            std::istringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ','))
                s.seeds.push_back(static_cast<std::uint64_t>(pos_int(k, trim(item), 0, 1LL << 62)));
            if (s.seeds.empty()) throw RangeViolation(k);
        } else if (k == "n_stations") {
            n_given = true;
            n_stations = static_cast<int>(pos_int(k, v, 1, 64));
        } else if (k == "n_dqn" || k == "n_ppo" || k == "n_edca_vo" || k == "n_edca_vi" ||
                   k == "n_edca_be") {
            counts_given = true;
            const int n = static_cast<int>(pos_int(k, v, 0, 64));
            if (k == "n_dqn") s.n_dqn = n;
            else if (k == "n_ppo") s.n_ppo = n;
            else if (k == "n_edca_vo") s.n_edca_vo = n;
            else if (k == "n_edca_vi") s.n_edca_vi = n;
            else s.n_edca_be = n;
        } else if (k == "traffic") t.sim.traffic[0].kind = traffic_kind(k, v);
        else if (k == "lambda") t.sim.traffic[0].lambda_pps = pos_double(k, v, 0.0, 1e9);
        else if (k == "period_ms") t.sim.traffic[0].period_ms = pos_double(k, v, 1e-3, 1e9);
        else if (k == "buffer_capacity") t.sim.buffer_capacity = static_cast<int>(pos_int(k, v, 1, 1 << 20));
        else if (k == "slots") t.total_slots = pos_int(k, v, 1, 1LL << 40);
        else if (k == "history_len") t.history_len = static_cast<int>(pos_int(k, v, 1, 1024));
        else if (k == "l_max") t.l_max = pos_int(k, v, 1, 1LL << 40);
        else if (k == "update_interval") t.update_interval = static_cast<int>(pos_int(k, v, 1, 1 << 20));
        else if (k == "target_interval") t.target_interval = static_cast<int>(pos_int(k, v, 1, 1 << 30));
        else if (k == "batch_size") t.batch_size = static_cast<int>(pos_int(k, v, 1, 1 << 20));
        else if (k == "replay_capacity") t.buffer_capacity = static_cast<std::size_t>(pos_int(k, v, 1, 1 << 30));
        else if (k == "gamma") t.gamma = pos_double(k, v, 1e-9, 1.0);
        else if (k == "gae_lambda") t.gae_lambda = pos_double(k, v, 0.0, 1.0);
        else if (k == "clip_delta") t.clip_delta = pos_double(k, v, 1e-9, 1.0);
        else if (k == "lr_q") t.lr_q = pos_double(k, v, 0.0, 1.0);
        else if (k == "lr_actor") t.lr_actor = pos_double(k, v, 0.0, 1.0);
        else if (k == "epsilon_decay") t.epsilon_decay = pos_double(k, v, 0.0, 1.0);
        else if (k == "grad_clip") t.grad_clip = pos_double(k, v, 1e-9, 1e9);
        else if (k == "mix_hidden") t.mix_hidden = static_cast<int>(pos_int(k, v, 1, 1 << 16));
        else if (k == "train") t.train = pos_int(k, v, 0, 1) != 0;
        else if (k == "eval_epsilon") t.eval_epsilon = pos_double(k, v, 0.0, 1.0);
        else if (k == "report_window") t.report_window = static_cast<int>(pos_int(k, v, 1, 1 << 30));
        else if (k == "lab_states") lab.n_states = static_cast<int>(pos_int(k, v, 2, 64));
        else if (k == "lab_agents") lab.n_agents = static_cast<int>(pos_int(k, v, 1, 8));
        else if (k == "lab_k") lab.k = static_cast<int>(pos_int(k, v, 0, 1 << 16));
        else if (k == "lab_iters") lab.iters = pos_int(k, v, 1, 1LL << 40);
        else if (k == "lab_gamma") lab.gamma = pos_double(k, v, 1e-9, 0.999999);
        else if (k == "lab_bw_b0") lab.beta_omega.b0 = pos_double(k, v, 1e-12, 1e9);
        else if (k == "lab_bw_p") lab.beta_omega.p = pos_double(k, v, 0.0, 1.0);
        else if (k == "lab_bw_t0") lab.beta_omega.t0 = pos_double(k, v, 1e-12, 1e12);
        else if (k == "lab_bt_b0") lab.beta_theta.b0 = pos_double(k, v, 1e-12, 1e9);
        else if (k == "lab_bt_p") lab.beta_theta.p = pos_double(k, v, 0.0, 1.0);
        else if (k == "lab_bt_t0") lab.beta_theta.t0 = pos_double(k, v, 1e-12, 1e12);
        else if (k == "lab_train_actor") lab.train_actor = pos_int(k, v, 0, 1) != 0;
        else if (k == "lab_eps") lab.eps_greedy = pos_double(k, v, 0.0, 1.0);
        else if (k == "lab_spread") lab.init_spread = pos_double(k, v, 0.0, 1e9);
        else if (k == "lab_trace_interval") lab.trace_interval = pos_int(k, v, 0, 1LL << 40);
        else throw UnknownKey(k);
    }

    finalize_roster(s, counts_given, n_given, n_stations);
    if (s.scenario != "convlab") s.train.validate();
    return s;
}

ScenarioSpec parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string emit_config(const ScenarioSpec& s) {
    std::ostringstream o;
    o << "scenario = " << s.scenario << "\n";
    o << "out_dir = " << s.out_dir << "\n";
    o << "seeds = ";
    for (std::size_t i = 0; i < s.seeds.size(); ++i) o << (i ? "," : "") << s.seeds[i];
    o << "\n";
    if (!s.checkpoint.empty()) o << "checkpoint = " << s.checkpoint << "\n";
    o << "eval_only = " << (s.eval_only ? 1 : 0) << "\n";
    o << "n_dqn = " << s.n_dqn << "\n";
    o << "n_ppo = " << s.n_ppo << "\n";
    o << "n_edca_vo = " << s.n_edca_vo << "\n";
    o << "n_edca_vi = " << s.n_edca_vi << "\n";
    o << "n_edca_be = " << s.n_edca_be << "\n";
    const auto& t = s.train;
    o << "traffic = " << traffic_name(t.sim.traffic[0].kind) << "\n";
    o << "lambda = " << fmt(t.sim.traffic[0].lambda_pps) << "\n";
    o << "period_ms = " << fmt(t.sim.traffic[0].period_ms > 0 ? t.sim.traffic[0].period_ms : 20.0)
      << "\n";
    o << "buffer_capacity = " << t.sim.buffer_capacity << "\n";
    o << "slots = " << t.total_slots << "\n";
    o << "history_len = " << t.history_len << "\n";
    o << "l_max = " << t.l_max << "\n";
    o << "update_interval = " << t.update_interval << "\n";
    o << "target_interval = " << t.target_interval << "\n";
    o << "batch_size = " << t.batch_size << "\n";
    o << "replay_capacity = " << t.buffer_capacity << "\n";
    o << "gamma = " << fmt(t.gamma) << "\n";
    o << "gae_lambda = " << fmt(t.gae_lambda) << "\n";
    o << "clip_delta = " << fmt(t.clip_delta) << "\n";
    o << "lr_q = " << fmt(t.lr_q) << "\n";
    o << "lr_actor = " << fmt(t.lr_actor) << "\n";
    o << "epsilon_decay = " << fmt(t.epsilon_decay) << "\n";
    o << "grad_clip = " << fmt(t.grad_clip) << "\n";
    o << "mix_hidden = " << t.mix_hidden << "\n";
    o << "train = " << (t.train ? 1 : 0) << "\n";
    o << "eval_epsilon = " << fmt(t.eval_epsilon) << "\n";
    o << "report_window = " << t.report_window << "\n";
    const auto& l = s.lab;
    o << "lab_states = " << l.n_states << "\n";
    o << "lab_agents = " << l.n_agents << "\n";
    o << "lab_k = " << l.k << "\n";
    o << "lab_iters = " << l.iters << "\n";
    o << "lab_gamma = " << fmt(l.gamma) << "\n";
    o << "lab_bw_b0 = " << fmt(l.beta_omega.b0) << "\n";
    o << "lab_bw_p = " << fmt(l.beta_omega.p) << "\n";
    o << "lab_bw_t0 = " << fmt(l.beta_omega.t0) << "\n";
    o << "lab_bt_b0 = " << fmt(l.beta_theta.b0) << "\n";
    o << "lab_bt_p = " << fmt(l.beta_theta.p) << "\n";
    o << "lab_bt_t0 = " << fmt(l.beta_theta.t0) << "\n";
    o << "lab_train_actor = " << (l.train_actor ? 1 : 0) << "\n";
    o << "lab_eps = " << fmt(l.eps_greedy) << "\n";
    o << "lab_spread = " << fmt(l.init_spread) << "\n";
    o << "lab_trace_interval = " << l.trace_interval << "\n";
    return o.str();
}

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << content;
}

std::string metrics_csv(const ScenarioSpec& spec, std::uint64_t seed,
                        const qpmix::RunResult& r) {
    std::ostringstream o;
    o << "scenario,seed,station,throughput,sent,collided,collision_rate,drops,mean_delay_s,"
         "jitter_s2,final_throughput,final_jfi,mean_reward_final\n";
    const auto tp = metrics::throughput(r.stats);
    const int n = static_cast<int>(r.stats.stations.size());
    for (int i = 0; i < n; ++i) {
        const auto& c = r.stats.stations[static_cast<std::size_t>(i)];
        metrics::RunStats one;
        one.stations = {c};
        one.total_slots = r.stats.total_slots;
        one.slot_us = r.stats.slot_us;
        double mean_delay = 0.0, jitter = 0.0;
        if (!c.delays.empty()) {
            const auto d = metrics::delay_stats(one);
            mean_delay = d.mean_s;
            jitter = d.jitter_s2;
        }
        o << spec.scenario << ',' << seed << ',' << i << ','
          << fmt(tp.per_station[static_cast<std::size_t>(i)]) << ',' << c.sent << ','
          << c.collided << ',' << fmt(c.sent > 0 ? static_cast<double>(c.collided) / c.sent : 0.0)
          << ',' << c.drops << ',' << fmt(mean_delay) << ',' << fmt(jitter) << ",,,\n";
    }
    double mean_delay = 0.0, jitter = 0.0;
    bool any = false;
    for (const auto& c : r.stats.stations) any = any || !c.delays.empty();
    if (any) {
        const auto d = metrics::delay_stats(r.stats);
        mean_delay = d.mean_s;
        jitter = d.jitter_s2;
    }
    long long sent = 0, collided = 0, drops = 0;
    for (const auto& c : r.stats.stations) {
        sent += c.sent;
        collided += c.collided;
        drops += c.drops;
    }
    o << spec.scenario << ',' << seed << ",all," << fmt(tp.total) << ',' << sent << ','
      << collided << ',' << fmt(sent > 0 ? static_cast<double>(collided) / sent : 0.0) << ','
      << drops << ',' << fmt(mean_delay) << ',' << fmt(jitter) << ','
      << fmt(r.final_throughput) << ',' << fmt(r.final_jfi) << ','
      << fmt(r.mean_reward_final) << "\n";
    return o.str();
}

std::string curve_csv(const qpmix::RunResult& r, double slot_us) {
    std::ostringstream o;
    o << "slot_end,time_s,throughput,mean_reward,epsilon,l_qtot,l_v,l_actor\n";
    for (const auto& w : r.curve)
        o << w.slot_end << ',' << fmt(w.slot_end * slot_us * 1e-6) << ','
          << fmt(w.throughput_total) << ',' << fmt(w.mean_reward) << ',' << fmt(w.epsilon)
          << ',' << fmt(w.losses.l_qtot) << ',' << fmt(w.losses.l_v) << ','
          << fmt(w.losses.l_actor) << "\n";
    return o.str();
}

std::string cdf_csv(const qpmix::RunResult& r) {
    std::ostringstream o;
    o << "delay_s,fraction\n";
    bool any = false;
    for (const auto& c : r.stats.stations) any = any || !c.delays.empty();
    if (any)
        for (const auto& [d, f] : metrics::delay_stats(r.stats).cdf)
            o << fmt(d) << ',' << fmt(f) << "\n";
    return o.str();
}

std::string lab_trace_csv(const convlab::LabResult& r) {
    std::ostringstream o;
    o << "iter,disagreement,omega_err,actor_grad_norm\n";
    for (const auto& row : r.trace)
        o << row.iter << ',' << fmt(row.disagreement) << ',' << fmt(row.omega_err) << ','
          << fmt(row.actor_grad_norm) << "\n";
    return o.str();
}

}  // namespace

ScenarioResult run_scenario(const ScenarioSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);
    ScenarioResult res;
    const std::string resolved = (fs::path(spec.out_dir) / "config.resolved").string();
    write_file(resolved, emit_config(spec));
    res.files.push_back(resolved);

    struct SeedOutcome {
        bool ok = false;
        std::string error;
        qpmix::RunResult run;
        convlab::LabResult lab;
    };
    std::vector<SeedOutcome> outcomes(spec.seeds.size());
    std::atomic<std::size_t> next{0};
    std::mutex io_mu;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= spec.seeds.size()) return;
            const std::uint64_t seed = spec.seeds[i];
            auto& out = outcomes[i];
            const std::string prefix =
                (fs::path(spec.out_dir) / ("seed" + std::to_string(seed))).string();
            try {
                if (spec.scenario == "convlab") {
                    convlab::LabConfig lc = spec.lab;
                    lc.seed = seed;
                    out.lab = convlab::run_convergence(lc);
                    write_file(prefix + "_lab.csv", lab_trace_csv(out.lab));
                } else {
                    qpmix::TrainConfig tc = spec.train;
                    tc.sim.rng_seed = seed;
                    if (spec.eval_only) tc.train = false;
                    qpmix::Simulation sim(tc);
                    if (!spec.checkpoint.empty()) sim.load_checkpoint(spec.checkpoint);
                    out.run = sim.run();
                    write_file(prefix + "_metrics.csv", metrics_csv(spec, seed, out.run));
                    write_file(prefix + "_curve.csv", curve_csv(out.run, tc.sim.slot_us));
                    write_file(prefix + "_delay_cdf.csv", cdf_csv(out.run));
                    if (tc.train && tc.n_learning() > 0) sim.save_checkpoint(prefix + ".ckpt");
                }
                out.ok = true;
                std::lock_guard<std::mutex> lk(io_mu);
                res.files.push_back(prefix);
            } catch (const std::exception& e) {
                out.error = e.what();
                std::lock_guard<std::mutex> lk(io_mu);
                std::fprintf(stderr, "seed %llu failed: %s\n",
                             static_cast<unsigned long long>(seed), e.what());
            }
        }
    };

    const int nw = worker_count(spec.seeds.size());
    if (nw <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::ostringstream agg;
    if (spec.scenario == "convlab") {
        agg << "scenario,seed,omega_err,omega_err_best,disagreement,disagreement_best,"
               "stationarity,empirical_tv\n";
        for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
            if (!outcomes[i].ok) continue;
            const auto& r = outcomes[i].lab;
            agg << spec.scenario << ',' << spec.seeds[i] << ',' << fmt(r.omega_err) << ','
                << fmt(r.omega_err_best) << ',' << fmt(r.disagreement) << ','
                << fmt(r.disagreement_best) << ',' << fmt(r.stationarity) << ','
                << fmt(r.empirical_tv) << "\n";
        }
    } else {
        agg << "scenario,seed,throughput,collision_rate,jfi,final_throughput,final_jfi,"
               "mean_reward_final\n";
        for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
            if (!outcomes[i].ok) continue;
            const auto& r = outcomes[i].run;
            const auto tp = metrics::throughput(r.stats);
            long long sent = 0, collided = 0;
            for (const auto& c : r.stats.stations) {
                sent += c.sent;
                collided += c.collided;
            }
            bool any = false;
            for (double v : tp.per_station) any = any || v > 0.0;
            agg << spec.scenario << ',' << spec.seeds[i] << ',' << fmt(tp.total) << ','
                << fmt(sent > 0 ? static_cast<double>(collided) / sent : 0.0) << ','
                << fmt(any ? metrics::jfi(tp.per_station) : 0.0) << ',' << fmt(r.final_throughput) << ','
                << fmt(r.final_jfi) << ',' << fmt(r.mean_reward_final) << "\n";
        }
    }
    const std::string agg_path = (fs::path(spec.out_dir) / "aggregate.csv").string();
    write_file(agg_path, agg.str());
    res.files.push_back(agg_path);

    for (const auto& o : outcomes) (o.ok ? res.seeds_ok : res.seeds_failed) += 1;
    return res;
}

}  // namespace dca::cli
