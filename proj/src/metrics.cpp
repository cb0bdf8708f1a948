#include "dca/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dca/errors.hpp"

namespace dca::metrics {

RunStats RunStats::from_bss(const env::Bss& bss) {
    RunStats s;
    const auto& cfg = bss.config();
    s.total_slots = bss.slot();
    s.slot_us = cfg.slot_us;
    s.stations.reserve(static_cast<std::size_t>(cfg.n_stations));
    for (int i = 0; i < cfg.n_stations; ++i) s.stations.push_back(bss.counters(i));
    return s;
}

Throughput throughput(const RunStats& stats) {
    if (stats.total_slots <= 0) throw MetricsError("throughput: no slots simulated");
    Throughput t;
    for (const auto& sc : stats.stations) {
        const double e = static_cast<double>(sc.success_slots) /
                         static_cast<double>(stats.total_slots);
        t.per_station.push_back(e);
        t.total += e;
    }
    return t;
}

DelayStats delay_stats(const RunStats& stats) {
    std::vector<long long> delays;
    for (const auto& sc : stats.stations)
        delays.insert(delays.end(), sc.delays.begin(), sc.delays.end());
    if (delays.empty()) throw MetricsError("delay_stats: no successful packets");

    const double slot_s = stats.slot_us * 1e-6;
    double mean = 0.0;
    for (long long d : delays) mean += static_cast<double>(d);
    mean /= static_cast<double>(delays.size());

    double var = 0.0;
    for (long long d : delays) {
        const double dd = static_cast<double>(d) - mean;
        var += dd * dd;
    }
    var /= static_cast<double>(delays.size());

    DelayStats out;
    out.mean_s = mean * slot_s;
    out.jitter_s2 = var * slot_s * slot_s;
    std::sort(delays.begin(), delays.end());
    out.cdf.reserve(delays.size());
    for (std::size_t i = 0; i < delays.size(); ++i)
        out.cdf.emplace_back(static_cast<double>(delays[i]) * slot_s,
                             static_cast<double>(i + 1) / static_cast<double>(delays.size()));
    return out;
}

double collision_rate(const RunStats& stats) {
    long long sent = 0, collided = 0;
    for (const auto& sc : stats.stations) {
        sent += sc.sent;
        collided += sc.collided;
    }
    if (sent == 0) throw MetricsError("collision_rate: nothing sent");
    return static_cast<double>(collided) / static_cast<double>(sent);
}

double jfi(const std::vector<double>& e) {
    if (e.empty()) throw MetricsError("jfi: empty input");
    double sum = 0.0, sq = 0.0;
    for (double x : e) {
        if (x < 0.0) throw MetricsError("jfi: negative throughput");
        sum += x;
        sq += x * x;
    }
    if (sq == 0.0) throw MetricsError("jfi: all throughputs zero");
    return sum * sum / (static_cast<double>(e.size()) * sq);
}

}  // namespace dca::metrics
