#include "jamlab/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "jamlab/rng.hpp"

namespace jamlab::nn {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("train config: negative weight decay");
    if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (aux_weight < 0.0) throw std::invalid_argument("train config: negative aux weight");
    if (warmup_epochs < 0 || max_epochs < 1 || warmup_epochs >= max_epochs) {
        throw std::invalid_argument("train config: need 0 <= warmup < max_epochs");
    }
}

void adamw_step(const std::vector<Parameter*>& params, const TrainConfig& cfg, double lr_t) {
    for (Parameter* p : params) {
        p->step += 1;
        const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(p->step));
        const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double g = p->grad.data[i];
            double m = p->m.data[i];
            double v = p->v.data[i];
            m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
            v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
            p->m.data[i] = static_cast<float>(m);
            p->v.data[i] = static_cast<float>(v);
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            double x = p->value.data[i];
            x -= lr_t * (m_hat / (std::sqrt(v_hat) + kAdamEps) + cfg.weight_decay * x);
            p->value.data[i] = static_cast<float>(x);
        }
    }
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.max_epochs) {
        throw std::invalid_argument("lr_at: epoch out of range");
    }
    if (epoch < cfg.warmup_epochs) {
        return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
    }
    const int span = cfg.max_epochs - 1 - cfg.warmup_epochs;
    const double progress =
        span > 0 ? static_cast<double>(epoch - cfg.warmup_epochs) / static_cast<double>(span)
                 : 1.0;
    return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 * progress));
}

int best_epoch(const std::vector<double>& history) {
    if (history.empty()) return -1;
    int best = 0;
    for (int i = 1; i < static_cast<int>(history.size()); ++i) {
        if (history[static_cast<std::size_t>(i)] > history[static_cast<std::size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

bool should_stop(const std::vector<double>& history, int patience) {
    if (patience < 1) throw std::invalid_argument("should_stop: patience must be >= 1");
    const int best = best_epoch(history);
    if (best < 0) return false;
    return static_cast<int>(history.size()) - 1 - best >= patience;
}

GradCheckReport grad_check(const LossBuilder& build, const std::vector<Parameter*>& params,
                           int max_elems_per_param, std::uint64_t seed, double fd_step) {
    // analytic gradients from one 64-bit forward/backward pass
    std::vector<TensorD> values;
    values.reserve(params.size());
    for (const Parameter* p : params) values.push_back(p->value.cast<double>());

    auto run = [&](const std::vector<TensorD>& vals, bool want_grads,
                   std::vector<TensorD>* grads) -> double {
        Graph<double> g;
        std::vector<Graph<double>::Id> ids;
        ids.reserve(vals.size());
        for (const TensorD& v : vals) ids.push_back(want_grads ? g.leaf(v) : g.constant(v));
        const auto loss = build(g, ids);
        if (g.val(loss).numel() != 1) throw std::invalid_argument("grad_check: loss not scalar");
        const double out = g.val(loss).data[0];
        if (want_grads) {
            g.backward(loss);
            grads->clear();
            for (auto id : ids) grads->push_back(g.grad(id));
        }
        return out;
    };

    std::vector<TensorD> ad_grads;
    run(values, true, &ad_grads);

    GradCheckReport report;
    Rng rng(derive_stream(seed, 0x67636b));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const std::int64_t n = values[pi].numel();
        std::vector<std::int64_t> picks;
        if (max_elems_per_param <= 0 || n <= max_elems_per_param) {
            picks.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) picks[static_cast<std::size_t>(i)] = i;
        } else {
            for (int i = 0; i < max_elems_per_param; ++i) {
                picks.push_back(rng.uniform_int(0, n - 1));
            }
        }
        for (std::int64_t idx : picks) {
            const double saved = values[pi].data[static_cast<std::size_t>(idx)];
            values[pi].data[static_cast<std::size_t>(idx)] = saved + fd_step;
            const double hi = run(values, false, nullptr);
            values[pi].data[static_cast<std::size_t>(idx)] = saved - fd_step;
            const double lo = run(values, false, nullptr);
            values[pi].data[static_cast<std::size_t>(idx)] = saved;
            const double fd = (hi - lo) / (2.0 * fd_step);
            const double ad = ad_grads[pi].data[static_cast<std::size_t>(idx)];
            const double denom = std::max({std::abs(ad), std::abs(fd), 1e-3});
            const double err = std::abs(ad - fd) / denom;
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_param = params[pi]->name;
                report.worst_index = idx;
                report.ad_value = ad;
                report.fd_value = fd;
            }
        }
    }
    return report;
}

}  // namespace jamlab::nn
