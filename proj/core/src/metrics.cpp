#include "jamlab/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include "jamlab/moe.hpp"

namespace jamlab::metrics {

ConfusionMatrix::ConfusionMatrix(int num_classes) : c_(num_classes) {
    if (num_classes < 1) throw std::invalid_argument("confusion: need >= 1 class");
    counts_.assign(static_cast<std::size_t>(c_) * c_, 0);
}

void ConfusionMatrix::accumulate(int truth, int pred) {
    if (truth < 1 || truth > c_ || pred < 1 || pred > c_) {
        throw std::invalid_argument("confusion: label out of range");
    }
    counts_[static_cast<std::size_t>((truth - 1) * c_ + (pred - 1))] += 1;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.c_ != c_) throw std::invalid_argument("confusion: merge size mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>((truth - 1) * c_ + (pred - 1))];
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
    std::int64_t s = 0;
    for (int j = 1; j <= c_; ++j) s += at(truth, j);
    return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
    std::int64_t s = 0;
    for (int i = 1; i <= c_; ++i) s += at(i, pred);
    return s;
}

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t s = 0;
    for (int i = 1; i <= c_; ++i) s += at(i, i);
    return s;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t s = 0;
    for (std::int64_t v : counts_) s += v;
    return s;
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& class_names) const {
    std::ostringstream out;
    out << "truth\\pred";
    for (int j = 0; j < c_; ++j) {
        out << "," << (j < static_cast<int>(class_names.size()) ? class_names[j]
                                                                : std::to_string(j + 1));
    }
    out << "\n";
    for (int i = 1; i <= c_; ++i) {
        out << (i - 1 < static_cast<int>(class_names.size()) ? class_names[i - 1]
                                                             : std::to_string(i));
        for (int j = 1; j <= c_; ++j) out << "," << at(i, j);
        out << "\n";
    }
    return out.str();
}

ConfusionMatrix confusion(const std::vector<int>& truths, const std::vector<int>& preds,
                          int num_classes) {
    if (truths.size() != preds.size()) throw std::invalid_argument("confusion: length mismatch");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truths.size(); ++i) cm.accumulate(truths[i], preds[i]);
    return cm;
}

double overall_accuracy(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("overall_accuracy: empty matrix");
    return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<ClassMetrics> precision_recall_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("precision_recall_f1: empty matrix");
    std::vector<ClassMetrics> out(static_cast<std::size_t>(cm.num_classes()));
    for (int c = 1; c <= cm.num_classes(); ++c) {
        const auto tp = static_cast<double>(cm.at(c, c));
        const auto fp = static_cast<double>(cm.col_sum(c)) - tp;
        const auto fn = static_cast<double>(cm.row_sum(c)) - tp;
        ClassMetrics& m = out[static_cast<std::size_t>(c - 1)];
        m.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        m.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        m.f1 = m.precision + m.recall > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
    }
    return out;
}

// ---- ledger -----------------------------------------------------------------

std::int64_t FlopsLedger::total_flops() const {
    std::int64_t s = 0;
    for (const auto& r : records) s += r.flops;
    return s;
}

std::int64_t FlopsLedger::total_params() const {
    std::int64_t s = 0;
    for (const auto& r : records) s += r.params;
    return s;
}

std::int64_t FlopsLedger::group_flops(const std::string& group) const {
    std::int64_t s = 0;
    for (const auto& r : records) {
        if (r.group == group) s += r.flops;
    }
    return s;
}

std::int64_t FlopsLedger::group_params(const std::string& group) const {
    std::int64_t s = 0;
    for (const auto& r : records) {
        if (r.group == group) s += r.params;
    }
    return s;
}

std::int64_t FlopsLedger::hard_route_flops(int expert) const {
    static const char* kExpertGroup[] = {"expert_heavy", "expert_mid", "expert_light"};
    if (expert < 0 || expert > 2) throw std::invalid_argument("hard_route_flops: expert index");
    return group_flops("encoder") + group_flops("router") + group_flops(kExpertGroup[expert]);
}

std::string FlopsLedger::to_csv() const {
    std::ostringstream out;
    out << "name,kind,group,out_h,out_w,k,c_in,c_out,n_in,n_out,flops,params\n";
    for (const auto& r : records) {
        out << r.name << "," << r.kind << "," << r.group << "," << r.out_h << "," << r.out_w
            << "," << r.k << "," << r.c_in << "," << r.c_out << "," << r.n_in << "," << r.n_out
            << "," << r.flops << "," << r.params << "\n";
    }
    return out.str();
}

FlopsLedger flops_of_model(const moe::MoEModel& model) {
    FlopsLedger ledger;
    for (const LayerDesc& d : moe::describe_layers(model)) {
        FlopsRecord r;
        r.name = d.name;
        r.kind = d.kind;
        r.group = d.group;
        r.out_h = d.out_h;
        r.out_w = d.out_w;
        r.k = d.k;
        r.c_in = d.c_in;
        r.c_out = d.c_out;
        r.n_in = d.n_in;
        r.n_out = d.n_out;
        r.params = d.params;
        if (d.kind == "conv2d") {
            r.flops = 2 * d.out_h * d.out_w * d.k * d.k * d.c_in * d.c_out;
        } else if (d.kind == "dwconv2d") {
            r.flops = 2 * d.out_h * d.out_w * d.k * d.k * d.c_out;
        } else if (d.kind == "conv1d") {
            r.flops = 2 * d.out_w * d.k * d.c_in * d.c_out;
        } else if (d.kind == "dense") {
            r.flops = 2 * d.n_in * d.n_out;
        } else if (d.kind == "attn_matmul") {
            r.flops = 2 * d.mults;
        } else {
            throw std::invalid_argument("flops_of_model: unknown layer kind " + d.kind);
        }
        ledger.records.push_back(std::move(r));
    }
    return ledger;
}

// ---- usage ------------------------------------------------------------------

UsageHistogram usage_histogram(const std::vector<int>& chosen_expert,
                               const std::vector<int>& tiers) {
    if (chosen_expert.size() != tiers.size()) {
        throw std::invalid_argument("usage_histogram: length mismatch");
    }
    UsageHistogram out;
    std::array<std::array<std::int64_t, 3>, 3> counts{};
    for (std::size_t i = 0; i < tiers.size(); ++i) {
        const int t = tiers[i], e = chosen_expert[i];
        if (t < 1 || t > 3 || e < 0 || e > 2) {
            throw std::invalid_argument("usage_histogram: tier or expert out of range");
        }
        counts[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(e)] += 1;
        out.tier_counts[static_cast<std::size_t>(t - 1)] += 1;
    }
    for (std::size_t t = 0; t < 3; ++t) {
        if (out.tier_counts[t] == 0) continue;
        for (std::size_t e = 0; e < 3; ++e) {
            out.fractions[t][e] = static_cast<double>(counts[t][e]) /
                                  static_cast<double>(out.tier_counts[t]);
        }
    }
    return out;
}

std::string UsageHistogram::to_csv() const {
    std::ostringstream out;
    out << "tier,expert_heavy,expert_mid,expert_light,samples\n";
    for (std::size_t t = 0; t < 3; ++t) {
        out << (t + 1) << "," << fractions[t][0] << "," << fractions[t][1] << ","
            << fractions[t][2] << "," << tier_counts[t] << "\n";
    }
    return out.str();
}

}  // namespace jamlab::metrics
