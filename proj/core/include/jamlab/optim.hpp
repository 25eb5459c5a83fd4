#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jamlab/graph.hpp"
#include "jamlab/tensor.hpp"

namespace jamlab::nn {

// Trainable tensor with AdamW state.
struct Parameter {
    std::string name;
    TensorF value;
    TensorF grad;
    TensorF m;  // first moment
    TensorF v;  // second moment
    std::int64_t step = 0;

    explicit Parameter(std::string n, TensorF init)
        : name(std::move(n)),
          value(std::move(init)),
          grad(TensorF::zeros(value.shape)),
          m(TensorF::zeros(value.shape)),
          v(TensorF::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0f); }
};

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 0.05;
    int warmup_epochs = 10;
    int max_epochs = 50;
    int batch_size = 16;
    int patience = 15;
    std::uint64_t seed = 0;
    double aux_weight = 0.01;  // lambda on the load-balance term

    void validate() const;  // throws std::invalid_argument
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Decoupled-weight-decay Adam step at learning rate lr_t: decay is applied
// directly to the value, never through the moments.
void adamw_step(const std::vector<Parameter*>& params, const TrainConfig& cfg, double lr_t);

// Linear ramp lr = lr*(epoch+1)/warmup for the warm-up epochs, then cosine
// annealing that reaches 0 exactly at the final epoch.
double lr_at(int epoch, const TrainConfig& cfg);

// Index of the best entry (earliest on ties).
int best_epoch(const std::vector<double>& history);

// True when the last `patience` entries never exceeded the best value seen
// before them.
bool should_stop(const std::vector<double>& history, int patience);

// ---- gradient verification -------------------------------------------------

// Builds a scalar loss in a 64-bit graph from mounted parameter leaves
// (same order as the parameter list passed to grad_check).
using LossBuilder = std::function<Graph<double>::Id(
    Graph<double>&, const std::vector<Graph<double>::Id>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double ad_value = 0.0;
    double fd_value = 0.0;
};

// Compares reverse-mode gradients against central finite differences, both
// evaluated in double. Samples up to max_elems_per_param elements of each
// parameter (0 = all). The error metric is |ad - fd| / max(|ad|, |fd|, 1e-3);
// the denominator floor turns the ratio into an absolute bound for
// near-zero gradients.
GradCheckReport grad_check(const LossBuilder& build, const std::vector<Parameter*>& params,
                           int max_elems_per_param = 0, std::uint64_t seed = 0,
                           double fd_step = 1e-5);

}  // namespace jamlab::nn
