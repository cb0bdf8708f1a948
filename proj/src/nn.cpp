#include "dca/nn.hpp"

#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dca/errors.hpp"

namespace dca::nn {

namespace {

double apply_act(Activation a, double x) {
    switch (a) {
        case Activation::ReLU: return x > 0.0 ? x : 0.0;
        case Activation::Abs: return std::fabs(x);
        case Activation::Identity: return x;
    }
    return x;
}

double act_grad(Activation a, double pre) {
    switch (a) {
        case Activation::ReLU: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::Abs: return pre > 0.0 ? 1.0 : (pre < 0.0 ? -1.0 : 0.0);
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

}  // namespace

Mlp::Mlp(std::vector<int> widths, std::vector<Activation> acts)
    : widths_(std::move(widths)), acts_(std::move(acts)) {
    if (widths_.size() < 2 || acts_.size() != widths_.size() - 1)
        throw ConfigError("Mlp: widths/activations mismatch");
    if (acts_.back() != Activation::Identity)
        throw ConfigError("Mlp: final layer must be Identity");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(total);
        total += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    params_.assign(total, 0.0);
}

void Mlp::init_params(Rng& rng) {
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int in = widths_[l], out = widths_[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        double* p = params_.data() + offsets_[l];
        for (int i = 0; i < out * in; ++i) p[i] = (2.0 * rng.uniform() - 1.0) * bound;
        for (int i = 0; i < out; ++i) p[out * in + i] = 0.0;
    }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
    Cache scratch;
    return forward(x, scratch);
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache& cache) const {
    if (static_cast<int>(x.size()) != widths_.front())
        throw ConfigError("Mlp::forward: input width mismatch");
    cache.input.assign(x.begin(), x.end());
    cache.pre.assign(acts_.size(), {});
    cache.post.assign(acts_.size(), {});
    const std::vector<double>* cur = &cache.input;
    for (std::size_t l = 0; l < acts_.size(); ++l) {
        const int in = widths_[l], out = widths_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + static_cast<std::size_t>(out) * in;
        auto& pre = cache.pre[l];
        pre.assign(out, 0.0);
        for (int i = 0; i < out; ++i) {
            double s = b[i];
            const double* wi = w + static_cast<std::size_t>(i) * in;
            for (int j = 0; j < in; ++j) s += wi[j] * (*cur)[j];
            pre[i] = s;
        }
        auto& post = cache.post[l];
        post.resize(out);
        for (int i = 0; i < out; ++i) post[i] = apply_act(acts_[l], pre[i]);
        cur = &post;
    }
    return cache.post.back();
}

void Mlp::backward(const Cache& cache, std::span<const double> dout,
                   std::vector<double>& grads, std::vector<double>* dx) const {
    if (cache.pre.size() != acts_.size() || cache.input.size() != static_cast<std::size_t>(widths_.front()))
        throw ConfigError("Mlp::backward: stale or mismatched cache");
    if (grads.size() != params_.size()) grads.assign(params_.size(), 0.0);
    std::vector<double> delta(dout.begin(), dout.end());
    for (int l = static_cast<int>(acts_.size()) - 1; l >= 0; --l) {
        const int in = widths_[l], out = widths_[l + 1];
        if (static_cast<int>(delta.size()) != out)
            throw ConfigError("Mlp::backward: output gradient width mismatch");
        for (int i = 0; i < out; ++i) delta[i] *= act_grad(acts_[l], cache.pre[l][i]);
        const double* w = params_.data() + offsets_[l];
        double* gw = grads.data() + offsets_[l];
        double* gb = gw + static_cast<std::size_t>(out) * in;
        const std::vector<double>& below =
            (l == 0) ? cache.input : cache.post[static_cast<std::size_t>(l) - 1];
        for (int i = 0; i < out; ++i) {
            const double d = delta[i];
            double* gwi = gw + static_cast<std::size_t>(i) * in;
            for (int j = 0; j < in; ++j) gwi[j] += d * below[j];
            gb[i] += d;
        }
        if (l > 0 || dx != nullptr) {
            std::vector<double> next(in, 0.0);
            for (int i = 0; i < out; ++i) {
                const double d = delta[i];
                const double* wi = w + static_cast<std::size_t>(i) * in;
                for (int j = 0; j < in; ++j) next[j] += d * wi[j];
            }
            delta = std::move(next);
        }
    }
    if (dx != nullptr) *dx = std::move(delta);
}

RmsProp::RmsProp(std::size_t n, double lr, double rho, double eps)
    : lr_(lr), rho_(rho), eps_(eps), acc_(n, 0.0) {}

void RmsProp::step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != acc_.size() || grads.size() != acc_.size())
        throw ConfigError("RmsProp::step: layout mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) throw NumericalError("RmsProp: non-finite gradient");
    for (std::size_t i = 0; i < acc_.size(); ++i) {
        const double g = grads[i];
        acc_[i] = rho_ * acc_[i] + (1.0 - rho_) * g * g;
        params[i] -= lr_ * g / (std::sqrt(acc_[i]) + eps_);
    }
}

void clip_global_norm(std::vector<double>& grads, double max_norm) {
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (double& g : grads) g *= scale;
    }
}

namespace {
constexpr char kMagic[4] = {'D', 'C', 'A', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        write_pod(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_pod(os, static_cast<std::uint64_t>(e.values.size()));
        os.write(reinterpret_cast<const char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    }
    if (!os) throw Error("checkpoint write failed: " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("bad checkpoint magic: " + path);
    std::uint32_t version = 0, count = 0;
    read_pod(is, version);
    if (version != kVersion) throw Error("unsupported checkpoint version");
    read_pod(is, count);
    std::vector<CheckpointEntry> out(count);
    for (auto& e : out) {
        std::uint32_t len = 0;
        read_pod(is, len);
        e.name.resize(len);
        is.read(e.name.data(), len);
        std::uint64_t n = 0;
        read_pod(is, n);
        e.values.resize(n);
        is.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw Error("truncated checkpoint: " + path);
    }
    return out;
}

}  // namespace dca::nn
