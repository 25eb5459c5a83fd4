#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "jamlab/metrics.hpp"
#include "jamlab/nn_kernels.hpp"
#include "jamlab/optim.hpp"
#include "jamlab/rng.hpp"

namespace jamlab::moe {

using nn::Graph;
using nn::Parameter;
using nn::TensorF;
using nn::TensorT;

inline constexpr int kNumExperts = 3;

// ---- parameter registry ---------------------------------------------------

class ParamStore {
public:
    int add(std::string name, TensorF init) {
        items_.push_back(std::make_unique<Parameter>(std::move(name), std::move(init)));
        return static_cast<int>(items_.size()) - 1;
    }

    Parameter& at(int i) { return *items_[static_cast<std::size_t>(i)]; }
    const Parameter& at(int i) const { return *items_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return items_.size(); }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(items_.size());
        for (auto& p : items_) out.push_back(p.get());
        return out;
    }

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

    // Mounts every parameter into the graph, in index order.
    template <typename S>
    std::vector<typename Graph<S>::Id> mount(Graph<S>& g, bool trainable) const {
        std::vector<typename Graph<S>::Id> ids;
        ids.reserve(items_.size());
        for (const auto& p : items_) {
            auto t = p->value.template cast<S>();
            ids.push_back(trainable ? g.leaf(std::move(t)) : g.constant(std::move(t)));
        }
        return ids;
    }

    // fan-in-scaled uniform weights
    TensorF init_uniform(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
        TensorF t = TensorF::zeros(std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (float& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
        return t;
    }

private:
    std::vector<std::unique_ptr<Parameter>> items_;
};

// ---- primitive layers -------------------------------------------------------

struct Conv2dLayer {
    int w = -1, b = -1;
    std::int64_t stride = 1, pad = 0;

    static Conv2dLayer make(ParamStore& ps, const std::string& name, std::int64_t ci,
                            std::int64_t co, std::int64_t k, std::int64_t stride,
                            std::int64_t pad, Rng& rng) {
        Conv2dLayer l;
        l.w = ps.add(name + ".w", ps.init_uniform({co, ci, k, k}, ci * k * k, rng));
        l.b = ps.add(name + ".b", TensorF::zeros({co}));
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    template <typename S>
    typename Graph<S>::Id apply(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                typename Graph<S>::Id x) const {
        return nn::conv2d(g, x, m[static_cast<std::size_t>(w)], m[static_cast<std::size_t>(b)],
                          stride, pad);
    }
};

struct DwConv2dLayer {
    int w = -1, b = -1;
    std::int64_t stride = 1, pad = 1;

    static DwConv2dLayer make(ParamStore& ps, const std::string& name, std::int64_t c,
                              std::int64_t k, std::int64_t stride, std::int64_t pad, Rng& rng) {
        DwConv2dLayer l;
        l.w = ps.add(name + ".w", ps.init_uniform({c, k, k}, k * k, rng));
        l.b = ps.add(name + ".b", TensorF::zeros({c}));
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    template <typename S>
    typename Graph<S>::Id apply(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                typename Graph<S>::Id x) const {
        return nn::dwconv2d(g, x, m[static_cast<std::size_t>(w)], m[static_cast<std::size_t>(b)],
                            stride, pad);
    }
};

struct Conv1dLayer {
    int w = -1, b = -1;
    std::int64_t stride = 1, pad = 0;

    static Conv1dLayer make(ParamStore& ps, const std::string& name, std::int64_t ci,
                            std::int64_t co, std::int64_t k, std::int64_t stride,
                            std::int64_t pad, Rng& rng) {
        Conv1dLayer l;
        l.w = ps.add(name + ".w", ps.init_uniform({co, ci, k}, ci * k, rng));
        l.b = ps.add(name + ".b", TensorF::zeros({co}));
        l.stride = stride;
        l.pad = pad;
        return l;
    }

    template <typename S>
    typename Graph<S>::Id apply(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                typename Graph<S>::Id x) const {
        return nn::conv1d(g, x, m[static_cast<std::size_t>(w)], m[static_cast<std::size_t>(b)],
                          stride, pad);
    }
};

struct DenseLayer {
    int w = -1, b = -1;

    static DenseLayer make(ParamStore& ps, const std::string& name, std::int64_t fi,
                           std::int64_t fo, Rng& rng, bool zero_init = false) {
        DenseLayer l;
        l.w = ps.add(name + ".w",
                     zero_init ? TensorF::zeros({fi, fo}) : ps.init_uniform({fi, fo}, fi, rng));
        l.b = ps.add(name + ".b", TensorF::zeros({fo}));
        return l;
    }

    template <typename S>
    typename Graph<S>::Id apply(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                typename Graph<S>::Id x) const {
        return nn::dense(g, x, m[static_cast<std::size_t>(w)], m[static_cast<std::size_t>(b)]);
    }
};

// ---- mechanism blocks --------------------------------------------------------

// Half the output channels from a primary convolution, the other half from
// a cheap per-channel 3x3 transform of those intrinsic maps.
struct GhostModule {
    Conv2dLayer primary;   // ci -> co/2
    DwConv2dLayer cheap;   // 3x3 depthwise on the intrinsic half
    std::int64_t c_out = 0;

    static GhostModule make(ParamStore& ps, const std::string& name, std::int64_t ci,
                            std::int64_t co, std::int64_t primary_k, Rng& rng);

    template <typename S>
    typename Graph<S>::Id forward(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                  typename Graph<S>::Id x) const {
        const auto intrinsic = primary.apply(g, m, x);
        const auto ghost = cheap.apply(g, m, intrinsic);
        return nn::concat_chan(g, intrinsic, ghost);
    }
};

// Split-Fuse-Select over two ghost branches with 3x3 and 5x5 receptive
// fields; per-channel branch attention via softmax over branches.
struct SkSelect {
    GhostModule branch3, branch5;
    DenseLayer att3, att5;  // z -> per-channel branch logits
    std::int64_t channels = 0;

    static SkSelect make(ParamStore& ps, const std::string& name, std::int64_t ci,
                         std::int64_t co, Rng& rng);

    template <typename S>
    typename Graph<S>::Id forward(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                  typename Graph<S>::Id x) const {
        const auto u1 = branch3.forward(g, m, x);
        const auto u2 = branch5.forward(g, m, x);
        const auto fused = nn::add(g, u1, u2);
        const auto z = nn::global_avg_pool2d(g, fused);           // [B,C]
        const auto l1 = att3.apply(g, m, z);                      // [B,C]
        const auto l2 = att5.apply(g, m, z);
        const std::int64_t b = g.val(z).shape[0];
        auto s1 = nn::reshape(g, l1, {b, channels, 1});
        auto s2 = nn::reshape(g, l2, {b, channels, 1});
        auto att = nn::softmax_last(g, nn::concat_last(g, s1, s2));  // [B,C,2]
        auto a1 = nn::reshape(g, nn::slice_last(g, att, 0, 1), {b, channels});
        auto a2 = nn::reshape(g, nn::slice_last(g, att, 1, 2), {b, channels});
        return nn::add(g, nn::scale_chan(g, u1, a1), nn::scale_chan(g, u2, a2));
    }
};

// Multi-query attention: per-head queries, one shared key/value head
// computed from a stride-2 depthwise spatial reduction.
struct MobileMqa {
    Conv2dLayer wq, wk, wv, wo;  // 1x1 projections
    DwConv2dLayer sr;            // stride-2 spatial reduction
    std::int64_t heads = 2, dk = 8;

    static MobileMqa make(ParamStore& ps, const std::string& name, std::int64_t c,
                          std::int64_t heads, std::int64_t dk, Rng& rng);

    template <typename S>
    typename Graph<S>::Id forward(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                  typename Graph<S>::Id x) const {
        const auto& xs = g.val(x).shape;
        const std::int64_t h = xs[2], w = xs[3];
        const auto q = wq.apply(g, m, x);                       // [B, heads*dk, H, W]
        const auto red = sr.apply(g, m, x);                     // [B, C, H/2, W/2]
        const auto k = wk.apply(g, m, red);                     // [B, dk, H', W']
        const auto v = wv.apply(g, m, red);
        const auto qt = nn::chw_to_tokens(g, q, heads);         // [B*heads, N, dk]
        const auto kt = nn::chw_to_tokens(g, k, 1);             // [B, N', dk]
        const auto vt = nn::chw_to_tokens(g, v, 1);
        auto scores = nn::bmm(g, qt, kt, true, heads);          // [B*heads, N, N']
        scores = nn::scale_const(g, scores, 1.0 / std::sqrt(static_cast<double>(dk)));
        const auto att = nn::softmax_last(g, scores);
        const auto ctx = nn::bmm(g, att, vt, false, heads);     // [B*heads, N, dk]
        const auto maps = nn::tokens_to_chw(g, ctx, heads, h, w);
        return wo.apply(g, m, maps);                            // back to C channels
    }
};

// Dual-path attention: per-pixel similarity against a 3x3 local key window
// and against globally pooled keys, concatenated into one row softmax.
struct AggAttention {
    Conv2dLayer wq, wk, wv, wo;  // 1x1 projections, d attention channels
    int qe = -1;                 // learnable query bias [d]
    int alpha = -1;              // learnable temperature scalar
    int bias = -1;               // per key-slot bias [9 + n_global]
    std::int64_t d = 16;
    std::int64_t pool = 2;       // global keys from pool x pool mean pooling

    static AggAttention make(ParamStore& ps, const std::string& name, std::int64_t c,
                             std::int64_t d, std::int64_t pool, Rng& rng);

    template <typename S>
    typename Graph<S>::Id forward(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                  typename Graph<S>::Id x) const {
        const auto& xs = g.val(x).shape;
        const std::int64_t h = xs[2], w = xs[3];
        nn::detail::require(h >= 1 && w >= 1, "agg attention: empty map");
        const std::int64_t gh = std::max<std::int64_t>(h / pool, 1);
        const std::int64_t gw = std::max<std::int64_t>(w / pool, 1);
        const std::int64_t n_global = gh * gw;
        const std::int64_t n_keys = 9 + n_global;

        auto q = wq.apply(g, m, x);                             // [B,d,H,W]
        q = nn::add_bias_chan(g, q, m[static_cast<std::size_t>(qe)]);
        const auto k = wk.apply(g, m, x);
        const auto v = wv.apply(g, m, x);

        // local path: unfolded 3x3 keys/values
        const auto kl = nn::unfold3x3(g, k);                    // [B,9d,H,W]
        const auto s_local = nn::win_scores(g, q, kl, 9);       // [B,9,H,W]

        // global path: pooled keys/values
        const auto kg = h / pool >= 1 && w / pool >= 1 ? nn::avg_pool2d(g, k, pool) : k;
        const auto vg = h / pool >= 1 && w / pool >= 1 ? nn::avg_pool2d(g, v, pool) : v;
        const auto qt = nn::chw_to_tokens(g, q, 1);             // [B,N,d]
        const auto kgt = nn::chw_to_tokens(g, kg, 1);           // [B,Ng,d]
        const auto s_glob_t = nn::bmm(g, qt, kgt, true);        // [B,N,Ng]
        const auto s_glob = nn::tokens_to_chw(g, s_glob_t, 1, h, w);  // [B,Ng,H,W]

        auto scores = nn::concat_chan(g, s_local, s_glob);      // [B,9+Ng,H,W]
        scores = nn::scale_by_scalar(g, scores, m[static_cast<std::size_t>(alpha)]);
        scores = nn::scale_const(g, scores, std::log(static_cast<double>(n_keys)));
        scores = nn::add_bias_chan(g, scores, m[static_cast<std::size_t>(bias)]);
        const auto att = nn::softmax_chan(g, scores);           // rows sum to 1 per pixel

        const auto a_local = nn::slice_chan(g, att, 0, 9);
        const auto a_glob = nn::slice_chan(g, att, 9, n_keys);
        const auto vl = nn::unfold3x3(g, v);
        const auto out_local = nn::win_apply(g, a_local, vl, d);   // [B,d,H,W]
        const auto agt = nn::chw_to_tokens(g, a_glob, 1);          // [B,N,Ng]
        const auto vgt = nn::chw_to_tokens(g, vg, 1);              // [B,Ng,d]
        const auto out_glob_t = nn::bmm(g, agt, vgt);              // [B,N,d]
        const auto out_glob = nn::tokens_to_chw(g, out_glob_t, 1, h, w);
        return wo.apply(g, m, nn::add(g, out_local, out_glob));
    }
};

// Channel split into content and gate halves; coordinate attention from
// per-axis mean pools re-weights the content before the gated projection.
struct CoordAttGlu {
    Conv2dLayer proj;   // 1x1, C -> C
    Conv1dLayer fconv;  // shared transform on concatenated pools, C/2 -> C/2r
    Conv1dLayer fh, fw; // back to C/2, per axis
    Conv2dLayer out;    // 1x1, C/2 -> C
    std::int64_t channels = 0;

    static CoordAttGlu make(ParamStore& ps, const std::string& name, std::int64_t c,
                            std::int64_t reduction, Rng& rng);

    template <typename S>
    typename Graph<S>::Id forward(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                  typename Graph<S>::Id z) const {
        const auto& zs = g.val(z).shape;
        nn::detail::require(zs[1] == channels && channels % 2 == 0,
                            "coord att glu: even channel count required");
        const std::int64_t half = channels / 2;
        const std::int64_t h = zs[2], w = zs[3];
        const auto p = proj.apply(g, m, z);
        const auto z1 = nn::slice_chan(g, p, 0, half);
        const auto z2 = nn::slice_chan(g, p, half, channels);
        const auto zh = nn::avg_pool_w(g, z1);   // [B,C/2,H]
        const auto zw = nn::avg_pool_h(g, z1);   // [B,C/2,W]
        const auto joint = nn::relu(g, fconv.apply(g, m, nn::concat_last(g, zh, zw)));
        const auto f_h = nn::slice_last(g, joint, 0, h);
        const auto f_w = nn::slice_last(g, joint, h, h + w);
        const auto gate_h = nn::sigmoid(g, fh.apply(g, m, f_h));  // [B,C/2,H]
        const auto gate_w = nn::sigmoid(g, fw.apply(g, m, f_w));  // [B,C/2,W]
        auto y_att = nn::scale_rows_hw(g, z1, gate_h);
        y_att = nn::scale_cols_hw(g, y_att, gate_w);
        const auto gated = nn::mul(g, nn::gelu(g, y_att), z2);
        return out.apply(g, m, gated);
    }
};

// Sigmoid channel gate derived from the shared PSD embedding.
struct SeFusion {
    DenseLayer gate;

    static SeFusion make(ParamStore& ps, const std::string& name, std::int64_t emb_dim,
                         std::int64_t channels, Rng& rng);

    template <typename S>
    typename Graph<S>::Id forward(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                  typename Graph<S>::Id features,
                                  typename Graph<S>::Id emb) const {
        const auto gv = nn::sigmoid(g, gate.apply(g, m, emb));  // [B,C]
        return nn::scale_chan(g, features, gv);
    }
};

// ---- model -------------------------------------------------------------------

struct ModelConfig {
    int num_classes = 21;
    int image_h = 64, image_w = 64;
    int psd_bins = 128;
    // shared PSD encoder
    int enc_c1 = 8, enc_c2 = 16;
    int fusion_dim = 32;
    // expert widths
    int light_c1 = 6, light_c2 = 12;
    int light_heads = 2, light_dk = 8;
    int mid_c1 = 8, mid_c2 = 12;
    int mid_branch_half = 6;  // SK branch primary output channels
    int heavy_c1 = 12, heavy_c2 = 48;
    int heavy_attn_d = 32;

    static ModelConfig desk(int classes = 21);
    static ModelConfig full(int classes = 21);

    int encoder_flat_dim() const { return enc_c2 * (psd_bins / 4); }
    bool operator==(const ModelConfig&) const = default;
};

struct GateOutput {
    std::vector<std::array<double, kNumExperts>> probs;  // per sample
    std::vector<int> argmax;                             // lowest index on ties
    std::array<double, kNumExperts> f;                   // hard assignment fractions
    std::array<double, kNumExperts> g_bar;               // mean soft probabilities
};

struct HardResult {
    std::vector<double> class_probs;
    int chosen_expert = 0;
    std::array<double, kNumExperts> gate_probs{};
    std::int64_t flops_charged = 0;
};

struct LossBreakdown {
    double ce = 0.0;
    double aux = 0.0;
    double total = 0.0;
    double lambda = 0.0;
};

class MoEModel {
public:
    MoEModel(const ModelConfig& cfg, std::uint64_t init_seed);

    ModelConfig config;
    ParamStore params;

    // encoder + router
    Conv1dLayer enc1, enc2;
    DenseLayer fusion_proj;
    DenseLayer router_head;  // zero-initialized

    // light expert
    Conv2dLayer light_stem1, light_stem2;
    MobileMqa light_mqa;
    SeFusion light_se;
    DenseLayer light_head;

    // mid expert
    Conv2dLayer mid_stem1, mid_stem2;
    GhostModule mid_ghost;
    SkSelect mid_sk;
    SeFusion mid_se;
    DenseLayer mid_head;

    // heavy expert
    Conv2dLayer heavy_stem1, heavy_stem2;
    AggAttention heavy_attn;
    CoordAttGlu heavy_glu;
    SeFusion heavy_se;
    DenseLayer heavy_head;

    std::int64_t expert_param_count(int e) const;

    template <typename S>
    struct Shared {
        typename Graph<S>::Id flat;  // encoder features [B,F]
        typename Graph<S>::Id emb;   // fusion embedding [B,fusion_dim]
        typename Graph<S>::Id gate;  // softmax router probabilities [B,E]
    };

    template <typename S>
    Shared<S> forward_shared(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                             typename Graph<S>::Id psd) const {
        auto x = nn::relu(g, enc1.apply(g, m, psd));
        x = nn::avg_pool1d(g, x, 2);
        x = nn::relu(g, enc2.apply(g, m, x));
        x = nn::avg_pool1d(g, x, 2);
        const std::int64_t b = g.val(x).shape[0];
        const auto flat = nn::reshape(g, x, {b, g.val(x).numel() / b});
        const auto emb = nn::relu(g, fusion_proj.apply(g, m, flat));
        const auto gate = nn::softmax_last(g, router_head.apply(g, m, flat));
        return {flat, emb, gate};
    }

    // Per-class probability vector of one expert (0 = heavy, 1 = mid, 2 = light).
    template <typename S>
    typename Graph<S>::Id forward_expert(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                                         int expert, typename Graph<S>::Id image,
                                         typename Graph<S>::Id emb) const {
        typename Graph<S>::Id feat;
        const DenseLayer* head = nullptr;
        if (expert == 0) {
            auto x = nn::relu(g, heavy_stem1.apply(g, m, image));
            x = nn::relu(g, heavy_stem2.apply(g, m, x));
            x = nn::add(g, x, heavy_attn.forward(g, m, x));
            x = nn::add(g, x, heavy_glu.forward(g, m, x));
            feat = heavy_se.forward(g, m, nn::global_avg_pool2d(g, x), emb);
            head = &heavy_head;
        } else if (expert == 1) {
            auto x = nn::relu(g, mid_stem1.apply(g, m, image));
            x = nn::relu(g, mid_stem2.apply(g, m, x));
            x = nn::relu(g, mid_ghost.forward(g, m, x));
            x = nn::avg_pool2d(g, x, 2);
            x = nn::relu(g, mid_sk.forward(g, m, x));
            feat = mid_se.forward(g, m, nn::global_avg_pool2d(g, x), emb);
            head = &mid_head;
        } else {
            auto x = nn::relu(g, light_stem1.apply(g, m, image));
            x = nn::relu(g, light_stem2.apply(g, m, x));
            x = nn::avg_pool2d(g, x, 2);
            x = nn::add(g, x, light_mqa.forward(g, m, x));
            feat = light_se.forward(g, m, nn::global_avg_pool2d(g, x), emb);
            head = &light_head;
        }
        return nn::softmax_last(g, head->apply(g, m, feat));
    }

    template <typename S>
    struct SoftOut {
        typename Graph<S>::Id gate;
        std::array<typename Graph<S>::Id, kNumExperts> expert_probs;
        typename Graph<S>::Id mixture;  // [B,C]
    };

    // Soft-gated mixture: convex combination of the experts' probability
    // vectors, weighted by the router.
    template <typename S>
    SoftOut<S> forward_soft(Graph<S>& g, const std::vector<typename Graph<S>::Id>& m,
                            typename Graph<S>::Id image, typename Graph<S>::Id psd) const {
        const auto shared = forward_shared(g, m, psd);
        SoftOut<S> out;
        out.gate = shared.gate;
        const std::int64_t b = g.val(shared.gate).shape[0];
        typename Graph<S>::Id mix = -1;
        for (int e = 0; e < kNumExperts; ++e) {
            out.expert_probs[static_cast<std::size_t>(e)] =
                forward_expert(g, m, e, image, shared.emb);
            auto ge = nn::reshape(g, nn::slice_last(g, shared.gate, e, e + 1), {b});
            auto term = nn::scale_rows(g, out.expert_probs[static_cast<std::size_t>(e)], ge);
            mix = e == 0 ? term : nn::add(g, mix, term);
        }
        out.mixture = mix;
        return out;
    }
};

// ---- routing and losses --------------------------------------------------------

// Router evaluation on a batch of standardized PSD vectors [B, bins].
GateOutput route(const MoEModel& model, const std::vector<std::vector<float>>& psd_vecs);

// Hard top-1 inference on one sample; charged FLOPs cover the shared
// encoder, the router head and the chosen expert only.
HardResult moe_forward_hard(const MoEModel& model, const std::vector<float>& spec,
                            const std::vector<float>& psd);

// Soft-gated class probabilities for one sample (no gradients).
std::vector<double> moe_forward_soft(const MoEModel& model, const std::vector<float>& spec,
                                     const std::vector<float>& psd);

// L_aux = N_E * sum_e f_e * g_bar_e from per-sample soft gate rows; f from
// hard argmax counts (lowest index on ties).
double load_balance_stat(const std::vector<std::array<double, kNumExperts>>& gate_rows);

// Graph version: f is computed from the gate values and enters the loss as
// a constant; gradients flow through the mean soft probabilities.
template <typename S>
typename Graph<S>::Id load_balance_loss(Graph<S>& g, typename Graph<S>::Id gate) {
    const auto& gv = g.val(gate);
    nn::detail::require(gv.rank() == 2, "load_balance_loss: expects [B,E]");
    const std::int64_t b = gv.shape[0], e = gv.shape[1];
    TensorT<S> f = TensorT<S>::zeros({e});
    for (std::int64_t i = 0; i < b; ++i) {
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < e; ++j) {
            if (gv.data[i * e + j] > gv.data[i * e + arg]) arg = j;
        }
        f.data[static_cast<std::size_t>(arg)] += S(1) / static_cast<S>(b);
    }
    const auto f_const = g.constant(std::move(f));
    const auto g_bar = nn::mean_axis0(g, gate);
    return nn::scale_const(g, nn::sum_all(g, nn::mul(g, f_const, g_bar)),
                           static_cast<double>(e));
}

// CE of the mixture at the true class plus lambda times the balance term.
template <typename S>
struct TotalLoss {
    typename Graph<S>::Id ce;
    typename Graph<S>::Id aux;
    typename Graph<S>::Id total;
};

template <typename S>
TotalLoss<S> total_loss(Graph<S>& g, typename Graph<S>::Id mixture_probs,
                        const std::vector<int>& labels, typename Graph<S>::Id aux,
                        double lambda) {
    TotalLoss<S> out;
    out.ce = nn::cross_entropy_from_probs(g, mixture_probs, labels);
    out.aux = aux;
    out.total = nn::add_scaled(g, out.ce, aux, lambda);
    return out;
}

// ---- training -------------------------------------------------------------------

struct TrainSet {
    int image_h = 0, image_w = 0, psd_bins = 0;
    std::vector<std::vector<float>> spec;  // image_h*image_w each
    std::vector<std::vector<float>> psd;   // psd_bins each
    std::vector<int> labels;               // 0-based model class index
    std::vector<int> tiers;                // component count of the source class
    std::vector<std::int64_t> ids;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_ce = 0.0;
    double train_aux = 0.0;  // batch-mean L_aux
    double val_oa = 0.0;     // percent, hard-routed
};

struct FitResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_oa = 0.0;
    std::vector<std::size_t> train_idx, val_idx;
};

class TrainDivergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mini-batch AdamW on the soft-gated mixture loss with the warm-up/cosine
// schedule and early stopping; the model is left at its best-epoch weights.
// Throws TrainDivergence on a non-finite loss.
FitResult fit(MoEModel& model, const TrainSet& data, const nn::TrainConfig& cfg);

// ---- checkpoints ------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const MoEModel& model, const std::string& path,
                     const std::vector<std::string>& class_names);

struct Checkpoint {
    ModelConfig config;
    std::vector<std::string> class_names;
    std::unique_ptr<MoEModel> model;
};

Checkpoint load_checkpoint(const std::string& path);

// Layer inventory for the FLOPs ledger.
std::vector<metrics::LayerDesc> describe_layers(const MoEModel& model);

}  // namespace jamlab::moe
