#pragma once

#include <deque>
#include <vector>

#include "dca/env.hpp"

namespace dca::obs {

// Slots since the agent's own last success / any other agent's success.
struct DelayCounters {
    long long v_own = 0;
    long long v_other = 0;
};

DelayCounters update_counters(const DelayCounters& c, const env::ChannelOutcome& outcome,
                              int agent_id);

struct ObservationRecord {
    int z = 0;       // 1 if channel sensed busy
    int a_prev = 0;  // previous own action, 0 Wait / 1 Transmit
    long long run_len = 1;
    double d_own = 0.5;
    double d_other = 0.5;
};

ObservationRecord build_observation(const DelayCounters& c, int z, int a_prev,
                                    long long run_len);

struct GlobalState {
    std::vector<int> joint_prev_action;
    std::vector<double> D;  // normalized delays, sums to 1 when any v > 0
};

GlobalState build_global_state(const std::vector<DelayCounters>& counters,
                               const std::vector<int>& joint_prev_action);

// Lowest agent id wins ties.
int argmax_delay(const std::vector<double>& D);

// Shared reward: +1 iff the largest-delay agent delivered, 0 on an idle
// slot (or mid-transmission slot), -1 otherwise.
int compute_reward(const std::vector<double>& D, const env::ChannelOutcome& outcome);

// Rolling window of the last M records, oldest first; encodes to a flat
// 5*M feature vector, zero-padded at the old end while shorter than M.
class HistoryWindow {
public:
    explicit HistoryWindow(int m, long long l_max = 64) : m_(m), l_max_(l_max) {}

    void push(const ObservationRecord& rec);
    void clear() { records_.clear(); }
    int size() const { return static_cast<int>(records_.size()); }
    int capacity() const { return m_; }
    const std::deque<ObservationRecord>& records() const { return records_; }

    int feature_size() const { return 5 * m_; }
    std::vector<double> encode() const;

private:
    int m_;
    long long l_max_;
    std::deque<ObservationRecord> records_;
};

// Flat [a_prev..., D...] encoding of the global state, length 2N.
std::vector<double> encode_global_state(const GlobalState& s);

// Per-agent observation bookkeeping. Each slot: observe() with the fresh
// carrier-sense result to extend the history (before acting), then after
// the channel resolves, commit() with the outcome and the action taken.
class ObservationTracker {
public:
    ObservationTracker(int agent_id, int history_len, long long l_max = 64);

    const HistoryWindow& observe(int z);
    void commit(const env::ChannelOutcome& outcome, int action_taken);

    const DelayCounters& counters() const { return counters_; }
    const HistoryWindow& history() const { return history_; }
    int last_action() const { return last_action_; }

private:
    int agent_id_;
    DelayCounters counters_;
    HistoryWindow history_;
    int last_action_ = 0;
    int last_z_ = -1;
    long long run_len_ = 0;
};

}  // namespace dca::obs
