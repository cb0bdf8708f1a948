#pragma once

#include <vector>

#include "dca/env.hpp"

namespace dca::metrics {

// Aggregated run statistics consumed by the metric functions.
struct RunStats {
    std::vector<env::StationCounters> stations;
    long long total_slots = 0;
    double slot_us = 9.0;

    static RunStats from_bss(const env::Bss& bss);
};

struct Throughput {
    double total = 0.0;
    std::vector<double> per_station;
};
Throughput throughput(const RunStats& stats);

struct DelayStats {
    double mean_s = 0.0;
    double jitter_s2 = 0.0;  // population variance
    // Sorted (delay_s, cumulative fraction) pairs.
    std::vector<std::pair<double, double>> cdf;
};
DelayStats delay_stats(const RunStats& stats);

double collision_rate(const RunStats& stats);

// Jain fairness index over per-station throughputs, in [1/N, 1].
double jfi(const std::vector<double>& per_station_throughput);

}  // namespace dca::metrics
