#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dca/rng.hpp"

namespace dca::nn {

enum class Activation { ReLU, Abs, Identity };

// Fully connected network over flat double storage. Layer l maps
// widths[l] -> widths[l+1] with weights stored row-major (out x in)
// followed by biases. The final layer must be Identity.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> widths, std::vector<Activation> acts);

    void init_params(Rng& rng);  // uniform in +-1/sqrt(fan_in)

    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }
    std::size_t param_count() const { return params_.size(); }
    int num_layers() const { return static_cast<int>(acts_.size()); }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    struct Cache {
        std::vector<double> input;
        std::vector<std::vector<double>> pre;   // pre-activation per layer
        std::vector<std::vector<double>> post;  // post-activation per layer
    };

    std::vector<double> forward(std::span<const double> x) const;
    std::vector<double> forward(std::span<const double> x, Cache& cache) const;

    // Accumulates exact parameter gradients into `grads` (layout identical
    // to params()); if dx is non-null also returns the input gradient.
    void backward(const Cache& cache, std::span<const double> dout,
                  std::vector<double>& grads, std::vector<double>* dx = nullptr) const;

    const std::vector<int>& widths() const { return widths_; }
    const std::vector<Activation>& activations() const { return acts_; }

private:
    std::vector<int> widths_;
    std::vector<Activation> acts_;       // one per layer
    std::vector<std::size_t> offsets_;   // param offset per layer
    std::vector<double> params_;
};

// RMSProp with a squared-gradient accumulator per parameter.
//   acc <- rho*acc + (1-rho)*g^2;  p <- p - lr*g/(sqrt(acc) + eps)
// Rejects non-finite gradients with NumericalError, leaving params intact.
class RmsProp {
public:
    RmsProp(std::size_t n, double lr, double rho = 0.99, double eps = 1e-5);
    void step(std::vector<double>& params, const std::vector<double>& grads);
    double learning_rate() const { return lr_; }

private:
    double lr_, rho_, eps_;
    std::vector<double> acc_;
};

// Scales grads in place so the global L2 norm is at most max_norm.
void clip_global_norm(std::vector<double>& grads, double max_norm);

// Versioned binary checkpoint: magic, version, then named raw double blobs.
struct CheckpointEntry {
    std::string name;
    std::vector<double> values;
};
void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

}  // namespace dca::nn
