#include "dca/obs.hpp"

#include <algorithm>

namespace dca::obs {

DelayCounters update_counters(const DelayCounters& c, const env::ChannelOutcome& outcome,
                              int agent_id) {
    DelayCounters next;
    const bool own_ack = outcome.kind == env::ChannelOutcome::Kind::Success &&
                         outcome.station == agent_id;
    const bool other_ack = outcome.kind == env::ChannelOutcome::Kind::Success &&
                           outcome.station != agent_id;
    next.v_own = own_ack ? 0 : c.v_own + 1;
    next.v_other = other_ack ? 0 : c.v_other + 1;
    return next;
}

ObservationRecord build_observation(const DelayCounters& c, int z, int a_prev,
                                    long long run_len) {
    ObservationRecord rec;
    rec.z = z;
    rec.a_prev = a_prev;
    rec.run_len = std::max<long long>(run_len, 1);
    const long long total = c.v_own + c.v_other;
    if (total > 0) {
        rec.d_own = static_cast<double>(c.v_own) / static_cast<double>(total);
        rec.d_other = static_cast<double>(c.v_other) / static_cast<double>(total);
    } else {
        rec.d_own = 0.5;
        rec.d_other = 0.5;
    }
    return rec;
}

GlobalState build_global_state(const std::vector<DelayCounters>& counters,
                               const std::vector<int>& joint_prev_action) {
    GlobalState s;
    s.joint_prev_action = joint_prev_action;
    const int n = static_cast<int>(counters.size());
    s.D.resize(n);
    long long total = 0;
    for (const auto& c : counters) total += c.v_own;
    for (int i = 0; i < n; ++i)
        s.D[i] = total > 0 ? static_cast<double>(counters[i].v_own) / static_cast<double>(total)
                           : 1.0 / n;
    return s;
}

int argmax_delay(const std::vector<double>& D) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(D.size()); ++i)
        if (D[i] > D[best]) best = i;
    return best;
}

int compute_reward(const std::vector<double>& D, const env::ChannelOutcome& outcome) {
    switch (outcome.kind) {
        case env::ChannelOutcome::Kind::Idle:
        case env::ChannelOutcome::Kind::BusyOngoing:
            return 0;
        case env::ChannelOutcome::Kind::Success:
            return outcome.station == argmax_delay(D) ? 1 : -1;
        case env::ChannelOutcome::Kind::Collision:
            return -1;
    }
    return 0;
}

void HistoryWindow::push(const ObservationRecord& rec) {
    records_.push_back(rec);
    while (static_cast<int>(records_.size()) > m_) records_.pop_front();
}

std::vector<double> HistoryWindow::encode() const {
    std::vector<double> out(static_cast<std::size_t>(feature_size()), 0.0);
    const int pad = m_ - static_cast<int>(records_.size());
    for (int i = 0; i < static_cast<int>(records_.size()); ++i) {
        const auto& r = records_[static_cast<std::size_t>(i)];
        double* f = out.data() + static_cast<std::size_t>(5) * (pad + i);
        f[0] = static_cast<double>(r.z);
        f[1] = static_cast<double>(r.a_prev);
        f[2] = std::min(static_cast<double>(r.run_len) / static_cast<double>(l_max_), 1.0);
        f[3] = r.d_own;
        f[4] = r.d_other;
    }
    return out;
}

std::vector<double> encode_global_state(const GlobalState& s) {
    std::vector<double> out;
    out.reserve(s.joint_prev_action.size() + s.D.size());
    for (int a : s.joint_prev_action) out.push_back(static_cast<double>(a));
    for (double d : s.D) out.push_back(d);
    return out;
}

ObservationTracker::ObservationTracker(int agent_id, int history_len, long long l_max)
    : agent_id_(agent_id), history_(history_len, l_max) {}

const HistoryWindow& ObservationTracker::observe(int z) {
    if (z == last_z_ && !history_.records().empty() &&
        last_action_ == history_.records().back().a_prev)
        ++run_len_;
    else
        run_len_ = 1;
    last_z_ = z;
    history_.push(build_observation(counters_, z, last_action_, run_len_));
    return history_;
}

void ObservationTracker::commit(const env::ChannelOutcome& outcome, int action_taken) {
    counters_ = update_counters(counters_, outcome, agent_id_);
    last_action_ = action_taken;
}

}  // namespace dca::obs
