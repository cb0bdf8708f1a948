#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "dca/errors.hpp"
#include "dca/rng.hpp"

namespace dca::env {

enum class Action : int { Wait = 0, Transmit = 1 };

struct TrafficModel {
    enum class Kind { Saturated, Poisson, Periodic };
    Kind kind = Kind::Saturated;
    double lambda_pps = 0.0;  // Poisson arrival rate, packets/s
    double period_ms = 0.0;   // Periodic generation period
};

struct SimConfig {
    int n_stations = 4;
    double slot_us = 9.0;
    int sifs_slots = 2;    // 18 us
    int difs_slots = 36;   // post-busy deferral before the backoff countdown
    int packet_slots = 120;  // 1080 us
    int buffer_capacity = 10;
    std::vector<TrafficModel> traffic;  // size 1 (shared) or n_stations
    std::uint64_t rng_seed = 1;

    void validate() const;
    const TrafficModel& traffic_for(int station) const;
    // Busy slots per transmission: payload, then SIFS, then the one-slot
    // ACK (or its missed deadline, which reveals a collision).
    int cycle_slots() const { return packet_slots + sifs_slots + 1; }
};

struct Packet {
    long long arrival_slot = 0;
    int station = 0;
};

struct ChannelOutcome {
    enum class Kind { Idle, BusyOngoing, Success, Collision };
    Kind kind = Kind::Idle;
    int station = -1;            // Success only
    std::vector<int> colliders;  // Collision only, >= 2 ids
};

// Delay from generation to successful delivery; the transmission itself
// takes at least packet_slots.
long long measure_delay(const Packet& packet, long long success_slot, int packet_slots);

// Per-station counters accumulated by the simulator; consumed by metrics.
struct StationCounters {
    long long arrivals = 0;
    long long drops = 0;
    long long sent = 0;      // transmission attempts
    long long collided = 0;  // attempts that ended in a collision
    long long success_slots = 0;
    std::vector<long long> delays;  // successful packets only, slots
};

// Single-channel time-slotted BSS. One instance per simulation; callers
// drive it slot by slot with the joint action of all stations.
class Bss {
public:
    explicit Bss(const SimConfig& cfg);

    // Traffic arrivals for the current slot (call once per slot, before step).
    void generate_arrivals(Rng& rng);

    // Advance one slot under the joint action. Validates the transmit gate:
    // a station may start transmitting only if the previous slot was idle
    // and its buffer is non-empty.
    ChannelOutcome step(const std::vector<Action>& joint);

    long long slot() const { return slot_; }
    bool sensed_idle(int station) const;  // channel state of the previous slot
    bool channel_busy() const { return busy_left_ > 0; }
    bool transmitting(int station) const;     // mid-payload this slot
    bool tx_pending_ack(int station) const;   // in SIFS/ACK tail of own cycle
    int buffer_size(int station) const { return static_cast<int>(buffers_[station].size()); }

    const StationCounters& counters(int station) const { return counters_[station]; }
    const SimConfig& config() const { return cfg_; }

    // Optional per-slot trace: "slot kind [ids]".
    std::function<void(long long, const ChannelOutcome&)> trace;

private:
    SimConfig cfg_;
    long long slot_ = 0;
    bool prev_slot_busy_ = false;
    int busy_left_ = 0;           // remaining busy slots including none
    int busy_elapsed_ = 0;        // slots into the current busy period
    std::vector<int> transmitters_;
    std::vector<std::deque<Packet>> buffers_;
    std::vector<StationCounters> counters_;
};

// Per-category contention parameters.
enum class AccessCategory { AC_VO, AC_VI, AC_BE };
struct EdcaParams {
    int cw_min = 31;
    int cw_max = 1023;
};
EdcaParams edca_params(AccessCategory ac);

// Rule-based CSMA/CA (EDCA) station: DIFS wait plus uniform backoff in
// [0, cw], counted down only while the channel stays idle.
class EdcaStation {
public:
    EdcaStation(AccessCategory ac, int difs_slots, Rng& rng);

    Action decide(bool prev_slot_idle, bool buffer_nonempty, Rng& rng);
    void on_success(Rng& rng);    // cw <- cw_min, fresh backoff
    void on_collision(Rng& rng);  // cw <- min(2(cw+1)-1, cw_max), fresh backoff

    int cw() const { return cw_; }
    int backoff() const { return backoff_; }
    AccessCategory category() const { return ac_; }

private:
    AccessCategory ac_;
    EdcaParams params_;
    int difs_slots_ = 36;
    int cw_ = 0;
    int backoff_ = 0;
    int idle_run_ = 0;  // consecutive idle slots observed
};

}  // namespace dca::env
