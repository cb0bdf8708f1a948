#include "dca/env.hpp"

#include <algorithm>
#include <cmath>

namespace dca::env {

void SimConfig::validate() const {
    if (n_stations < 1) throw ConfigError("n_stations must be >= 1");
    if (packet_slots < 1) throw ConfigError("packet_slots must be >= 1");
    if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
    if (sifs_slots < 0 || difs_slots < 0) throw ConfigError("slot counts must be >= 0");
    if (slot_us <= 0.0) throw ConfigError("slot_us must be positive");
    if (!traffic.empty() && traffic.size() != 1 &&
        traffic.size() != static_cast<std::size_t>(n_stations))
        throw ConfigError("traffic models: need 1 or n_stations entries");
    for (const auto& t : traffic) {
        if (t.kind == TrafficModel::Kind::Poisson && t.lambda_pps < 0.0)
            throw ConfigError("lambda must be >= 0");
        if (t.kind == TrafficModel::Kind::Periodic && t.period_ms <= 0.0)
            throw ConfigError("period_ms must be positive");
    }
}

const TrafficModel& SimConfig::traffic_for(int station) const {
    static const TrafficModel kSaturated{};
    if (traffic.empty()) return kSaturated;
    if (traffic.size() == 1) return traffic.front();
    return traffic[static_cast<std::size_t>(station)];
}

long long measure_delay(const Packet& packet, long long success_slot, int packet_slots) {
    if (success_slot < packet.arrival_slot)
        throw Error("measure_delay: success before arrival");
    return std::max<long long>(success_slot - packet.arrival_slot, packet_slots);
}

Bss::Bss(const SimConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    buffers_.resize(cfg_.n_stations);
    counters_.resize(cfg_.n_stations);
}

bool Bss::sensed_idle(int station) const {
    (void)station;  // single shared channel, no hidden nodes
    return !prev_slot_busy_;
}

bool Bss::transmitting(int station) const {
    if (busy_left_ == 0 || busy_elapsed_ >= cfg_.packet_slots) return false;
    return std::find(transmitters_.begin(), transmitters_.end(), station) != transmitters_.end();
}

bool Bss::tx_pending_ack(int station) const {
    if (busy_left_ == 0 || busy_elapsed_ < cfg_.packet_slots) return false;
    return std::find(transmitters_.begin(), transmitters_.end(), station) != transmitters_.end();
}

void Bss::generate_arrivals(Rng& rng) {
    for (int i = 0; i < cfg_.n_stations; ++i) {
        const TrafficModel& t = cfg_.traffic_for(i);
        int n = 0;
        switch (t.kind) {
            case TrafficModel::Kind::Saturated:
                n = cfg_.buffer_capacity - static_cast<int>(buffers_[i].size());
                break;
            case TrafficModel::Kind::Poisson:
                n = rng.poisson(t.lambda_pps * cfg_.slot_us * 1e-6);
                break;
            case TrafficModel::Kind::Periodic: {
                const long long period =
                    std::max<long long>(1, std::llround(t.period_ms * 1000.0 / cfg_.slot_us));
                n = (slot_ % period == 0) ? 1 : 0;
                break;
            }
        }
        for (int k = 0; k < n; ++k) {
            ++counters_[i].arrivals;
            if (static_cast<int>(buffers_[i].size()) < cfg_.buffer_capacity)
                buffers_[i].push_back(Packet{slot_, i});
            else
                ++counters_[i].drops;
        }
    }
}

ChannelOutcome Bss::step(const std::vector<Action>& joint) {
    if (static_cast<int>(joint.size()) != cfg_.n_stations)
        throw ConfigError("Bss::step: joint action size mismatch");
    ChannelOutcome out;

    if (busy_left_ > 0) {
        // Ongoing cycle: transmitters keep sending until the payload is
        // done; everyone else must hold off.
        for (int i = 0; i < cfg_.n_stations; ++i) {
            if (joint[i] == Action::Transmit && !transmitting(i)) throw TransmitWhileBusy(i);
        }
        --busy_left_;
        ++busy_elapsed_;
        if (busy_left_ == 0) {
            if (transmitters_.size() == 1) {
                const int sta = transmitters_.front();
                out.kind = ChannelOutcome::Kind::Success;
                out.station = sta;
                Packet pkt = buffers_[sta].front();
                buffers_[sta].pop_front();
                counters_[sta].success_slots += cfg_.packet_slots;
                counters_[sta].delays.push_back(measure_delay(pkt, slot_, cfg_.packet_slots));
            } else {
                out.kind = ChannelOutcome::Kind::Collision;
                out.colliders = transmitters_;
                for (int sta : transmitters_) ++counters_[sta].collided;
            }
            transmitters_.clear();
        } else {
            out.kind = ChannelOutcome::Kind::BusyOngoing;
        }
        prev_slot_busy_ = busy_left_ > 0;
    } else {
        std::vector<int> txs;
        for (int i = 0; i < cfg_.n_stations; ++i) {
            if (joint[i] != Action::Transmit) continue;
            if (prev_slot_busy_) throw TransmitWhileBusy(i);
            if (buffers_[i].empty()) throw TransmitWithEmptyBuffer(i);
            txs.push_back(i);
        }
        if (txs.empty()) {
            out.kind = ChannelOutcome::Kind::Idle;
            prev_slot_busy_ = false;
        } else {
            transmitters_ = std::move(txs);
            for (int sta : transmitters_) ++counters_[sta].sent;
            busy_left_ = cfg_.cycle_slots() - 1;  // this slot is the first
            busy_elapsed_ = 1;
            out.kind = ChannelOutcome::Kind::BusyOngoing;
            prev_slot_busy_ = true;
            if (busy_left_ == 0) {
                // Degenerate 1-slot cycle cannot happen (ACK adds a slot),
                // but keep the invariant airtight.
                out.kind = ChannelOutcome::Kind::Collision;
                out.colliders = transmitters_;
                transmitters_.clear();
                prev_slot_busy_ = false;
            }
        }
    }

    if (trace) trace(slot_, out);
    ++slot_;
    return out;
}

EdcaParams edca_params(AccessCategory ac) {
    switch (ac) {
        case AccessCategory::AC_VO: return {7, 15};
        case AccessCategory::AC_VI: return {15, 31};
        case AccessCategory::AC_BE: return {31, 1023};
    }
    return {31, 1023};
}

EdcaStation::EdcaStation(AccessCategory ac, int difs_slots, Rng& rng)
    : ac_(ac), params_(edca_params(ac)), difs_slots_(difs_slots) {
    cw_ = params_.cw_min;
    backoff_ = rng.uniform_int(0, cw_);
}

Action EdcaStation::decide(bool prev_slot_idle, bool buffer_nonempty, Rng& rng) {
    (void)rng;
    if (!prev_slot_idle) {
        idle_run_ = 0;
        return Action::Wait;
    }
    ++idle_run_;
    if (!buffer_nonempty) return Action::Wait;
    // DIFS must fully elapse before the backoff counts down; the counter
    // freezes whenever the channel goes busy.
    if (idle_run_ <= difs_slots_) return Action::Wait;
    if (backoff_ > 0) {
        --backoff_;
        return Action::Wait;
    }
    return Action::Transmit;
}

void EdcaStation::on_success(Rng& rng) {
    cw_ = params_.cw_min;
    backoff_ = rng.uniform_int(0, cw_);
    idle_run_ = 0;
}

void EdcaStation::on_collision(Rng& rng) {
    cw_ = std::min(2 * (cw_ + 1) - 1, params_.cw_max);
    backoff_ = rng.uniform_int(0, cw_);
    idle_run_ = 0;
}

}  // namespace dca::env
