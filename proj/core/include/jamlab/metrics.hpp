#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace jamlab::moe {
class MoEModel;
}

namespace jamlab::metrics {

// Row = ground truth, column = prediction; labels are 1-based class ids.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void accumulate(int truth, int pred);  // throws on out-of-range labels
    void merge(const ConfusionMatrix& other);

    int num_classes() const { return c_; }
    std::int64_t at(int truth, int pred) const;
    std::int64_t row_sum(int truth) const;
    std::int64_t col_sum(int pred) const;
    std::int64_t trace() const;
    std::int64_t total() const;

    std::string to_csv(const std::vector<std::string>& class_names = {}) const;

private:
    int c_;
    std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(const std::vector<int>& truths, const std::vector<int>& preds,
                          int num_classes);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Percent of correct predictions.
double overall_accuracy(const ConfusionMatrix& cm);

// Per-class precision/recall/F1; zero denominators yield 0.
std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm);

// ---- complexity ledger ----------------------------------------------------

// Static description of one layer, filled in by the model.
struct LayerDesc {
    std::string name;
    std::string kind;   // conv2d | dwconv2d | conv1d | dense | attn_matmul
    std::string group;  // encoder | router | expert_heavy | expert_mid | expert_light
    std::int64_t out_h = 1, out_w = 1;  // output spatial dims (conv kinds)
    std::int64_t k = 1;                 // kernel size
    std::int64_t c_in = 1, c_out = 1;
    std::int64_t n_in = 0, n_out = 0;   // dense dims
    std::int64_t mults = 0;             // attn_matmul multiply count
    std::int64_t params = 0;
};

struct FlopsRecord {
    std::string name, kind, group;
    std::int64_t out_h = 1, out_w = 1, k = 1, c_in = 1, c_out = 1;
    std::int64_t n_in = 0, n_out = 0;
    std::int64_t flops = 0;
    std::int64_t params = 0;
};

struct FlopsLedger {
    std::vector<FlopsRecord> records;

    std::int64_t total_flops() const;
    std::int64_t total_params() const;
    std::int64_t group_flops(const std::string& group) const;
    std::int64_t group_params(const std::string& group) const;
    // encoder + router + one expert
    std::int64_t hard_route_flops(int expert) const;

    std::string to_csv() const;
};

// Conv layers charge 2*H*W*k^2*Cin*Cout, dense 2*Nin*Nout, attention
// matmuls 2*(multiply count).
FlopsLedger flops_of_model(const moe::MoEModel& model);

// ---- routing usage ----------------------------------------------------------

// Rows = complexity tier (1..3 components), columns = expert fractions;
// every row with samples sums to 1.
struct UsageHistogram {
    std::array<std::array<double, 3>, 3> fractions{};
    std::array<std::int64_t, 3> tier_counts{};

    std::string to_csv() const;
};

UsageHistogram usage_histogram(const std::vector<int>& chosen_expert,
                               const std::vector<int>& tiers);

}  // namespace jamlab::metrics
