#include "jamlab/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "jamlab/container.hpp"
#include "jamlab/metrics.hpp"

namespace jamlab::moe {

// ---- block builders ---------------------------------------------------------

GhostModule GhostModule::make(ParamStore& ps, const std::string& name, std::int64_t ci,
                              std::int64_t co, std::int64_t primary_k, Rng& rng) {
    if (co % 2 != 0) throw std::invalid_argument("ghost module: output channels must be even");
    GhostModule m;
    m.primary = Conv2dLayer::make(ps, name + ".primary", ci, co / 2, primary_k, 1,
                                  primary_k / 2, rng);
    m.cheap = DwConv2dLayer::make(ps, name + ".cheap", co / 2, 3, 1, 1, rng);
    m.c_out = co;
    return m;
}

SkSelect SkSelect::make(ParamStore& ps, const std::string& name, std::int64_t ci,
                        std::int64_t co, Rng& rng) {
    SkSelect s;
    s.branch3 = GhostModule::make(ps, name + ".branch3", ci, co, 3, rng);
    s.branch5 = GhostModule::make(ps, name + ".branch5", ci, co, 5, rng);
    s.att3 = DenseLayer::make(ps, name + ".att3", co, co, rng);
    s.att5 = DenseLayer::make(ps, name + ".att5", co, co, rng);
    s.channels = co;
    return s;
}

MobileMqa MobileMqa::make(ParamStore& ps, const std::string& name, std::int64_t c,
                          std::int64_t heads, std::int64_t dk, Rng& rng) {
    MobileMqa m;
    m.wq = Conv2dLayer::make(ps, name + ".wq", c, heads * dk, 1, 1, 0, rng);
    m.wk = Conv2dLayer::make(ps, name + ".wk", c, dk, 1, 1, 0, rng);
    m.wv = Conv2dLayer::make(ps, name + ".wv", c, dk, 1, 1, 0, rng);
    m.wo = Conv2dLayer::make(ps, name + ".wo", heads * dk, c, 1, 1, 0, rng);
    m.sr = DwConv2dLayer::make(ps, name + ".sr", c, 3, 2, 1, rng);
    m.heads = heads;
    m.dk = dk;
    return m;
}

AggAttention AggAttention::make(ParamStore& ps, const std::string& name, std::int64_t c,
                                std::int64_t d, std::int64_t pool, Rng& rng) {
    AggAttention a;
    a.wq = Conv2dLayer::make(ps, name + ".wq", c, d, 1, 1, 0, rng);
    a.wk = Conv2dLayer::make(ps, name + ".wk", c, d, 1, 1, 0, rng);
    a.wv = Conv2dLayer::make(ps, name + ".wv", c, d, 1, 1, 0, rng);
    a.wo = Conv2dLayer::make(ps, name + ".wo", d, c, 1, 1, 0, rng);
    a.qe = ps.add(name + ".qe", TensorF::zeros({d}));
    a.alpha = ps.add(name + ".alpha",
                     TensorF::full({1}, static_cast<float>(1.0 / std::sqrt(double(d)))));
    a.d = d;
    a.pool = pool;
    a.bias = -1;  // sized per feature map below
    return a;
}

CoordAttGlu CoordAttGlu::make(ParamStore& ps, const std::string& name, std::int64_t c,
                              std::int64_t reduction, Rng& rng) {
    if (c % 2 != 0) throw std::invalid_argument("coord att glu: channel count must be even");
    CoordAttGlu b;
    const std::int64_t half = c / 2;
    const std::int64_t mid = std::max<std::int64_t>(half / reduction, 1);
    b.proj = Conv2dLayer::make(ps, name + ".proj", c, c, 1, 1, 0, rng);
    b.fconv = Conv1dLayer::make(ps, name + ".fconv", half, mid, 1, 1, 0, rng);
    b.fh = Conv1dLayer::make(ps, name + ".fh", mid, half, 1, 1, 0, rng);
    b.fw = Conv1dLayer::make(ps, name + ".fw", mid, half, 1, 1, 0, rng);
    b.out = Conv2dLayer::make(ps, name + ".out", half, c, 1, 1, 0, rng);
    b.channels = c;
    return b;
}

SeFusion SeFusion::make(ParamStore& ps, const std::string& name, std::int64_t emb_dim,
                        std::int64_t channels, Rng& rng) {
    SeFusion s;
    s.gate = DenseLayer::make(ps, name + ".gate", emb_dim, channels, rng);
    return s;
}

// ---- model -------------------------------------------------------------------

ModelConfig ModelConfig::desk(int classes) {
    ModelConfig c;
    c.num_classes = classes;
    return c;
}

ModelConfig ModelConfig::full(int classes) {
    ModelConfig c;
    c.num_classes = classes;
    c.image_h = 224;
    c.image_w = 224;
    return c;
}

namespace {

struct Dims {
    std::int64_t h = 0, w = 0;
    Dims down(std::int64_t stride) const { return {h / stride, w / stride}; }
};

Dims conv_out(Dims in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    return {(in.h + 2 * pad - k) / stride + 1, (in.w + 2 * pad - k) / stride + 1};
}

}  // namespace

MoEModel::MoEModel(const ModelConfig& cfg, std::uint64_t init_seed) : config(cfg) {
    if (cfg.num_classes < 2) throw std::invalid_argument("model: need >= 2 classes");
    if (cfg.psd_bins % 4 != 0) throw std::invalid_argument("model: psd_bins must divide by 4");
    if (cfg.image_h % 8 != 0 || cfg.image_w % 8 != 0) {
        throw std::invalid_argument("model: image dims must divide by 8");
    }
    Rng rng(derive_stream(init_seed, 0x6d6f65));

    enc1 = Conv1dLayer::make(params, "enc.conv1", 1, cfg.enc_c1, 3, 1, 1, rng);
    enc2 = Conv1dLayer::make(params, "enc.conv2", cfg.enc_c1, cfg.enc_c2, 3, 1, 1, rng);
    const std::int64_t flat = cfg.encoder_flat_dim();
    fusion_proj = DenseLayer::make(params, "enc.fusion", flat, cfg.fusion_dim, rng);
    // zero-initialized so training starts from uniform gating
    router_head = DenseLayer::make(params, "router.head", flat, kNumExperts, rng, true);

    const int c = cfg.num_classes;

    heavy_stem1 = Conv2dLayer::make(params, "heavy.stem1", 1, cfg.heavy_c1, 3, 2, 1, rng);
    heavy_stem2 = Conv2dLayer::make(params, "heavy.stem2", cfg.heavy_c1, cfg.heavy_c2, 3, 2, 1, rng);
    heavy_attn = AggAttention::make(params, "heavy.attn", cfg.heavy_c2, cfg.heavy_attn_d, 2, rng);
    {
        const Dims map = conv_out(conv_out({cfg.image_h, cfg.image_w}, 3, 2, 1), 3, 2, 1);
        const std::int64_t n_global = (map.h / heavy_attn.pool) * (map.w / heavy_attn.pool);
        heavy_attn.bias = params.add("heavy.attn.bias", TensorF::zeros({9 + n_global}));
    }
    heavy_glu = CoordAttGlu::make(params, "heavy.glu", cfg.heavy_c2, 2, rng);
    heavy_se = SeFusion::make(params, "heavy.se", cfg.fusion_dim, cfg.heavy_c2, rng);
    heavy_head = DenseLayer::make(params, "heavy.head", cfg.heavy_c2, c, rng);

    mid_stem1 = Conv2dLayer::make(params, "mid.stem1", 1, cfg.mid_c1, 3, 2, 1, rng);
    mid_stem2 = Conv2dLayer::make(params, "mid.stem2", cfg.mid_c1, cfg.mid_c2, 3, 2, 1, rng);
    mid_ghost = GhostModule::make(params, "mid.ghost", cfg.mid_c2, 2 * cfg.mid_c2, 1, rng);
    mid_sk = SkSelect::make(params, "mid.sk", 2 * cfg.mid_c2, 2 * cfg.mid_branch_half, rng);
    mid_se = SeFusion::make(params, "mid.se", cfg.fusion_dim, 2 * cfg.mid_branch_half, rng);
    mid_head = DenseLayer::make(params, "mid.head", 2 * cfg.mid_branch_half, c, rng);

    light_stem1 = Conv2dLayer::make(params, "light.stem1", 1, cfg.light_c1, 3, 2, 1, rng);
    light_stem2 = Conv2dLayer::make(params, "light.stem2", cfg.light_c1, cfg.light_c2, 3, 2, 1, rng);
    light_mqa = MobileMqa::make(params, "light.mqa", cfg.light_c2, cfg.light_heads,
                                cfg.light_dk, rng);
    light_se = SeFusion::make(params, "light.se", cfg.fusion_dim, cfg.light_c2, rng);
    light_head = DenseLayer::make(params, "light.head", cfg.light_c2, c, rng);

    const std::int64_t heavy_n = expert_param_count(0);
    const std::int64_t mid_n = expert_param_count(1);
    const std::int64_t light_n = expert_param_count(2);
    if (!(heavy_n > mid_n && mid_n > light_n)) {
        throw std::logic_error("model: expert capacity ordering violated");
    }
}

std::int64_t MoEModel::expert_param_count(int e) const {
    static const char* kPrefix[] = {"heavy.", "mid.", "light."};
    if (e < 0 || e > 2) throw std::invalid_argument("expert index out of range");
    std::int64_t n = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = params.at(static_cast<int>(i));
        if (p.name.rfind(kPrefix[e], 0) == 0) n += p.value.numel();
    }
    return n;
}

// ---- inference -----------------------------------------------------------------

namespace {

TensorF batch_tensor(const std::vector<const std::vector<float>*>& rows,
                     std::vector<std::int64_t> inner_shape) {
    std::vector<std::int64_t> shape{static_cast<std::int64_t>(rows.size())};
    shape.insert(shape.end(), inner_shape.begin(), inner_shape.end());
    TensorF t = TensorF::zeros(shape);
    const std::int64_t inner = t.numel() / static_cast<std::int64_t>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<std::int64_t>(rows[i]->size()) != inner) {
            throw std::invalid_argument("batch: feature length mismatch");
        }
        std::copy(rows[i]->begin(), rows[i]->end(),
                  t.data.begin() + static_cast<std::ptrdiff_t>(i) * inner);
    }
    return t;
}

int argmax_row(const float* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

}  // namespace

GateOutput route(const MoEModel& model, const std::vector<std::vector<float>>& psd_vecs) {
    if (psd_vecs.empty()) throw std::invalid_argument("route: empty batch");
    Graph<float> g;
    const auto m = model.params.mount(g, false);
    std::vector<const std::vector<float>*> rows;
    rows.reserve(psd_vecs.size());
    for (const auto& v : psd_vecs) rows.push_back(&v);
    const auto psd = g.constant(batch_tensor(rows, {1, model.config.psd_bins}));
    const auto shared = model.forward_shared(g, m, psd);
    const auto& gate = g.val(shared.gate);

    GateOutput out;
    const auto b = static_cast<std::size_t>(gate.shape[0]);
    out.probs.resize(b);
    out.argmax.resize(b);
    out.f.fill(0.0);
    out.g_bar.fill(0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const float* row = gate.data.data() + i * kNumExperts;
        for (int e = 0; e < kNumExperts; ++e) {
            out.probs[i][static_cast<std::size_t>(e)] = row[e];
            out.g_bar[static_cast<std::size_t>(e)] += row[e] / static_cast<double>(b);
        }
        out.argmax[i] = argmax_row(row, kNumExperts);
        out.f[static_cast<std::size_t>(out.argmax[i])] += 1.0 / static_cast<double>(b);
    }
    return out;
}

HardResult moe_forward_hard(const MoEModel& model, const std::vector<float>& spec,
                            const std::vector<float>& psd) {
    Graph<float> g;
    const auto m = model.params.mount(g, false);
    const auto image =
        g.constant(TensorF({1, 1, model.config.image_h, model.config.image_w},
                           std::vector<float>(spec.begin(), spec.end())));
    const auto psd_t =
        g.constant(TensorF({1, 1, model.config.psd_bins},
                           std::vector<float>(psd.begin(), psd.end())));
    const auto shared = model.forward_shared(g, m, psd_t);
    const auto& gate = g.val(shared.gate);

    HardResult out;
    for (int e = 0; e < kNumExperts; ++e) {
        out.gate_probs[static_cast<std::size_t>(e)] = gate.data[static_cast<std::size_t>(e)];
    }
    out.chosen_expert = argmax_row(gate.data.data(), kNumExperts);

    const auto probs = model.forward_expert(g, m, out.chosen_expert, image, shared.emb);
    const auto& pv = g.val(probs);
    out.class_probs.assign(pv.data.begin(), pv.data.end());

    const metrics::FlopsLedger ledger = metrics::flops_of_model(model);
    out.flops_charged = ledger.hard_route_flops(out.chosen_expert);
    return out;
}

std::vector<double> moe_forward_soft(const MoEModel& model, const std::vector<float>& spec,
                                     const std::vector<float>& psd) {
    Graph<float> g;
    const auto m = model.params.mount(g, false);
    const auto image =
        g.constant(TensorF({1, 1, model.config.image_h, model.config.image_w},
                           std::vector<float>(spec.begin(), spec.end())));
    const auto psd_t = g.constant(
        TensorF({1, 1, model.config.psd_bins}, std::vector<float>(psd.begin(), psd.end())));
    const auto soft = model.forward_soft(g, m, image, psd_t);
    const auto& mv = g.val(soft.mixture);
    return std::vector<double>(mv.data.begin(), mv.data.end());
}

double load_balance_stat(const std::vector<std::array<double, kNumExperts>>& gate_rows) {
    if (gate_rows.empty()) throw std::invalid_argument("load_balance_stat: empty batch");
    std::array<double, kNumExperts> f{}, g_bar{};
    const double inv_b = 1.0 / static_cast<double>(gate_rows.size());
    for (const auto& row : gate_rows) {
        int arg = 0;
        for (int e = 1; e < kNumExperts; ++e) {
            if (row[static_cast<std::size_t>(e)] > row[static_cast<std::size_t>(arg)]) arg = e;
        }
        f[static_cast<std::size_t>(arg)] += inv_b;
        for (int e = 0; e < kNumExperts; ++e) g_bar[static_cast<std::size_t>(e)] += inv_b * row[static_cast<std::size_t>(e)];
    }
    double s = 0.0;
    for (int e = 0; e < kNumExperts; ++e) s += f[static_cast<std::size_t>(e)] * g_bar[static_cast<std::size_t>(e)];
    return static_cast<double>(kNumExperts) * s;
}

// ---- training --------------------------------------------------------------------

FitResult fit(MoEModel& model, const TrainSet& data, const nn::TrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = data.labels.size();
    if (n < 5 || data.spec.size() != n || data.psd.size() != n) {
        throw std::invalid_argument("fit: inconsistent or too-small dataset");
    }
    if (data.image_h != model.config.image_h || data.image_w != model.config.image_w ||
        data.psd_bins != model.config.psd_bins) {
        throw std::invalid_argument("fit: feature dims do not match the model");
    }

    // deterministic 80/20 split
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    Rng split_rng(derive_stream(cfg.seed, 0x73706c69));
    for (std::size_t i = n; i-- > 1;) {
        const auto j = static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(order[i], order[j]);
    }
    const std::size_t n_val = std::max<std::size_t>(1, n / 5);
    FitResult res;
    res.val_idx.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    res.train_idx.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

    const auto param_ptrs = model.params.all();
    std::vector<std::vector<float>> best_values;
    std::vector<double> oa_history;

    auto gather = [&](const std::vector<std::size_t>& idx, std::size_t from, std::size_t count,
                      TensorF& spec_t, TensorF& psd_t, std::vector<int>& labels) {
        std::vector<const std::vector<float>*> spec_rows, psd_rows;
        labels.clear();
        for (std::size_t i = from; i < from + count; ++i) {
            spec_rows.push_back(&data.spec[idx[i]]);
            psd_rows.push_back(&data.psd[idx[i]]);
            labels.push_back(data.labels[idx[i]]);
        }
        spec_t = batch_tensor(spec_rows, {1, model.config.image_h, model.config.image_w});
        psd_t = batch_tensor(psd_rows, {1, model.config.psd_bins});
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = nn::lr_at(epoch, cfg);

        std::vector<std::size_t> train = res.train_idx;
        Rng epoch_rng(derive_stream(cfg.seed, 0x65706f63, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = train.size(); i-- > 1;) {
            const auto j =
                static_cast<std::size_t>(epoch_rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(train[i], train[j]);
        }

        double sum_ce = 0.0, sum_aux = 0.0, sum_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < train.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count =
                std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), train.size() - off);
            TensorF spec_t, psd_t;
            std::vector<int> labels;
            gather(train, off, count, spec_t, psd_t, labels);

            Graph<float> g;
            const auto m = model.params.mount(g, true);
            const auto image = g.constant(std::move(spec_t));
            const auto psd = g.constant(std::move(psd_t));
            const auto soft = model.forward_soft(g, m, image, psd);
            const auto aux = load_balance_loss(g, soft.gate);
            const auto losses = total_loss(g, soft.mixture, labels, aux, cfg.aux_weight);

            const double total_val = g.val(losses.total).data[0];
            if (!std::isfinite(total_val)) {
                throw TrainDivergence("fit: non-finite loss at epoch " + std::to_string(epoch));
            }
            sum_ce += g.val(losses.ce).data[0];
            sum_aux += g.val(losses.aux).data[0];
            sum_total += total_val;
            ++batches;

            g.backward(losses.total);
            for (std::size_t i = 0; i < param_ptrs.size(); ++i) {
                param_ptrs[i]->zero_grad();
                const auto id = m[i];
                if (g.has_grad(id)) {
                    const auto& gd = g.grad(id).data;
                    std::copy(gd.begin(), gd.end(), param_ptrs[i]->grad.data.begin());
                }
            }
            nn::adamw_step(param_ptrs, cfg, lr);
        }

        // hard-routed validation accuracy
        std::size_t correct = 0;
        for (std::size_t off = 0; off < res.val_idx.size();
             off += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min<std::size_t>(
                static_cast<std::size_t>(cfg.batch_size), res.val_idx.size() - off);
            TensorF spec_t, psd_t;
            std::vector<int> labels;
            gather(res.val_idx, off, count, spec_t, psd_t, labels);
            Graph<float> g;
            const auto m = model.params.mount(g, false);
            const auto image = g.constant(std::move(spec_t));
            const auto psd = g.constant(std::move(psd_t));
            const auto soft = model.forward_soft(g, m, image, psd);
            const auto& gate = g.val(soft.gate);
            const int c = model.config.num_classes;
            for (std::size_t i = 0; i < count; ++i) {
                const int e = argmax_row(gate.data.data() + i * kNumExperts, kNumExperts);
                const auto& probs = g.val(soft.expert_probs[static_cast<std::size_t>(e)]);
                const int pred = argmax_row(probs.data.data() + i * static_cast<std::size_t>(c), c);
                if (pred == labels[i]) ++correct;
            }
        }
        const double val_oa = 100.0 * static_cast<double>(correct) /
                              static_cast<double>(res.val_idx.size());

        EpochStats st;
        st.epoch = epoch;
        st.lr = lr;
        st.train_loss = sum_total / static_cast<double>(batches);
        st.train_ce = sum_ce / static_cast<double>(batches);
        st.train_aux = sum_aux / static_cast<double>(batches);
        st.val_oa = val_oa;
        res.history.push_back(st);
        oa_history.push_back(val_oa);

        if (res.best_epoch < 0 || val_oa > res.best_val_oa) {
            res.best_epoch = epoch;
            res.best_val_oa = val_oa;
            best_values.clear();
            for (Parameter* p : param_ptrs) best_values.push_back(p->value.data);
        }
        if (nn::should_stop(oa_history, cfg.patience)) break;
    }

    for (std::size_t i = 0; i < param_ptrs.size(); ++i) {
        param_ptrs[i]->value.data = best_values[i];
    }
    return res;
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const MoEModel& model, const std::string& path,
                     const std::vector<std::string>& class_names) {
    std::vector<io::NamedTensor> tensors;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const Parameter& p = model.params.at(static_cast<int>(i));
        io::NamedTensor t;
        t.name = p.name;
        t.dims = p.value.shape;
        t.data = p.value.data;
        tensors.push_back(std::move(t));
    }
    io::Meta meta;
    meta.entries = {
        {"kind", "checkpoint"},
        {"version", std::to_string(kCheckpointVersion)},
        {"num_classes", std::to_string(model.config.num_classes)},
        {"image_h", std::to_string(model.config.image_h)},
        {"image_w", std::to_string(model.config.image_w)},
        {"psd_bins", std::to_string(model.config.psd_bins)},
        {"enc_c1", std::to_string(model.config.enc_c1)},
        {"enc_c2", std::to_string(model.config.enc_c2)},
        {"fusion_dim", std::to_string(model.config.fusion_dim)},
        {"light_c1", std::to_string(model.config.light_c1)},
        {"light_c2", std::to_string(model.config.light_c2)},
        {"light_heads", std::to_string(model.config.light_heads)},
        {"light_dk", std::to_string(model.config.light_dk)},
        {"mid_c1", std::to_string(model.config.mid_c1)},
        {"mid_c2", std::to_string(model.config.mid_c2)},
        {"mid_branch_half", std::to_string(model.config.mid_branch_half)},
        {"heavy_c1", std::to_string(model.config.heavy_c1)},
        {"heavy_c2", std::to_string(model.config.heavy_c2)},
        {"heavy_attn_d", std::to_string(model.config.heavy_attn_d)},
    };
    std::string names;
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (i) names += ";";
        names += class_names[i];
    }
    meta.entries.push_back({"class_names", names});
    io::write_container(path, tensors, meta);
}

Checkpoint load_checkpoint(const std::string& path) {
    const io::Container c = io::read_container(path);
    auto get = [&](const std::string& key) -> std::string {
        for (const auto& [k, v] : c.meta.entries) {
            if (k == key) return v;
        }
        throw std::runtime_error("checkpoint: missing meta key " + key);
    };
    if (get("kind") != "checkpoint") throw std::runtime_error("checkpoint: wrong container kind");
    if (std::stoi(get("version")) != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version");
    }
    ModelConfig cfg;
    cfg.num_classes = std::stoi(get("num_classes"));
    cfg.image_h = std::stoi(get("image_h"));
    cfg.image_w = std::stoi(get("image_w"));
    cfg.psd_bins = std::stoi(get("psd_bins"));
    cfg.enc_c1 = std::stoi(get("enc_c1"));
    cfg.enc_c2 = std::stoi(get("enc_c2"));
    cfg.fusion_dim = std::stoi(get("fusion_dim"));
    cfg.light_c1 = std::stoi(get("light_c1"));
    cfg.light_c2 = std::stoi(get("light_c2"));
    cfg.light_heads = std::stoi(get("light_heads"));
    cfg.light_dk = std::stoi(get("light_dk"));
    cfg.mid_c1 = std::stoi(get("mid_c1"));
    cfg.mid_c2 = std::stoi(get("mid_c2"));
    cfg.mid_branch_half = std::stoi(get("mid_branch_half"));
    cfg.heavy_c1 = std::stoi(get("heavy_c1"));
    cfg.heavy_c2 = std::stoi(get("heavy_c2"));
    cfg.heavy_attn_d = std::stoi(get("heavy_attn_d"));

    Checkpoint out;
    out.config = cfg;
    const std::string names = get("class_names");
    std::size_t pos = 0;
    while (pos <= names.size() && !names.empty()) {
        const std::size_t next = names.find(';', pos);
        out.class_names.push_back(names.substr(pos, next == std::string::npos ? std::string::npos
                                                                              : next - pos));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    out.model = std::make_unique<MoEModel>(cfg, 0);
    for (std::size_t i = 0; i < out.model->params.size(); ++i) {
        Parameter& p = out.model->params.at(static_cast<int>(i));
        const io::NamedTensor* t = nullptr;
        for (const auto& nt : c.tensors) {
            if (nt.name == p.name) {
                t = &nt;
                break;
            }
        }
        if (t == nullptr) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        if (t->dims != p.value.shape) {
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        }
        p.value.data = t->data;
    }
    return out;
}

// ---- ledger description ----------------------------------------------------------

namespace {

using metrics::LayerDesc;

std::int64_t conv_params(const ParamStore& ps, const Conv2dLayer& l) {
    return ps.at(l.w).value.numel() + ps.at(l.b).value.numel();
}
std::int64_t conv_params(const ParamStore& ps, const Conv1dLayer& l) {
    return ps.at(l.w).value.numel() + ps.at(l.b).value.numel();
}
std::int64_t conv_params(const ParamStore& ps, const DwConv2dLayer& l) {
    return ps.at(l.w).value.numel() + ps.at(l.b).value.numel();
}
std::int64_t dense_params(const ParamStore& ps, const DenseLayer& l) {
    return ps.at(l.w).value.numel() + ps.at(l.b).value.numel();
}

LayerDesc conv2d_desc(const ParamStore& ps, const std::string& name, const std::string& group,
                      const Conv2dLayer& l, Dims out) {
    const auto& w = ps.at(l.w).value.shape;  // [co, ci, k, k]
    LayerDesc d;
    d.name = name;
    d.kind = "conv2d";
    d.group = group;
    d.out_h = out.h;
    d.out_w = out.w;
    d.k = w[2];
    d.c_in = w[1];
    d.c_out = w[0];
    d.params = conv_params(ps, l);
    return d;
}

LayerDesc dw_desc(const ParamStore& ps, const std::string& name, const std::string& group,
                  const DwConv2dLayer& l, Dims out) {
    const auto& w = ps.at(l.w).value.shape;  // [c, k, k]
    LayerDesc d;
    d.name = name;
    d.kind = "dwconv2d";
    d.group = group;
    d.out_h = out.h;
    d.out_w = out.w;
    d.k = w[1];
    d.c_in = w[0];
    d.c_out = w[0];
    d.params = conv_params(ps, l);
    return d;
}

LayerDesc conv1d_desc(const ParamStore& ps, const std::string& name, const std::string& group,
                      const Conv1dLayer& l, std::int64_t out_len) {
    const auto& w = ps.at(l.w).value.shape;  // [co, ci, k]
    LayerDesc d;
    d.name = name;
    d.kind = "conv1d";
    d.group = group;
    d.out_w = out_len;
    d.k = w[2];
    d.c_in = w[1];
    d.c_out = w[0];
    d.params = conv_params(ps, l);
    return d;
}

LayerDesc dense_desc(const ParamStore& ps, const std::string& name, const std::string& group,
                     const DenseLayer& l) {
    const auto& w = ps.at(l.w).value.shape;  // [fi, fo]
    LayerDesc d;
    d.name = name;
    d.kind = "dense";
    d.group = group;
    d.n_in = w[0];
    d.n_out = w[1];
    d.params = dense_params(ps, l);
    return d;
}

LayerDesc attn_desc(const std::string& name, const std::string& group, std::int64_t mults,
                    std::int64_t params = 0) {
    LayerDesc d;
    d.name = name;
    d.kind = "attn_matmul";
    d.group = group;
    d.mults = mults;
    d.params = params;
    return d;
}

}  // namespace

std::vector<metrics::LayerDesc> describe_layers(const MoEModel& model) {
    const ModelConfig& cfg = model.config;
    const ParamStore& ps = model.params;
    std::vector<LayerDesc> out;

    // shared encoder
    const std::int64_t l1 = cfg.psd_bins;
    out.push_back(conv1d_desc(ps, "enc.conv1", "encoder", model.enc1, l1));
    const std::int64_t l2 = l1 / 2;
    out.push_back(conv1d_desc(ps, "enc.conv2", "encoder", model.enc2, l2));
    out.push_back(dense_desc(ps, "enc.fusion", "encoder", model.fusion_proj));
    out.push_back(dense_desc(ps, "router.head", "router", model.router_head));

    const Dims in{cfg.image_h, cfg.image_w};

    // heavy expert
    {
        const std::string gr = "expert_heavy";
        Dims d1 = conv_out(in, 3, 2, 1);
        out.push_back(conv2d_desc(ps, "heavy.stem1", gr, model.heavy_stem1, d1));
        Dims d2 = conv_out(d1, 3, 2, 1);
        out.push_back(conv2d_desc(ps, "heavy.stem2", gr, model.heavy_stem2, d2));
        const AggAttention& a = model.heavy_attn;
        out.push_back(conv2d_desc(ps, "heavy.attn.wq", gr, a.wq, d2));
        out.push_back(conv2d_desc(ps, "heavy.attn.wk", gr, a.wk, d2));
        out.push_back(conv2d_desc(ps, "heavy.attn.wv", gr, a.wv, d2));
        const std::int64_t n = d2.h * d2.w;
        const std::int64_t ng = (d2.h / a.pool) * (d2.w / a.pool);
        out.push_back(attn_desc("heavy.attn.local_qk", gr, n * 9 * a.d,
                                ps.at(a.qe).value.numel() + ps.at(a.alpha).value.numel()));
        out.push_back(attn_desc("heavy.attn.global_qk", gr, n * ng * a.d,
                                ps.at(a.bias).value.numel()));
        out.push_back(attn_desc("heavy.attn.local_av", gr, n * 9 * a.d));
        out.push_back(attn_desc("heavy.attn.global_av", gr, n * ng * a.d));
        out.push_back(conv2d_desc(ps, "heavy.attn.wo", gr, a.wo, d2));
        const CoordAttGlu& cg = model.heavy_glu;
        out.push_back(conv2d_desc(ps, "heavy.glu.proj", gr, cg.proj, d2));
        out.push_back(conv1d_desc(ps, "heavy.glu.fconv", gr, cg.fconv, d2.h + d2.w));
        out.push_back(conv1d_desc(ps, "heavy.glu.fh", gr, cg.fh, d2.h));
        out.push_back(conv1d_desc(ps, "heavy.glu.fw", gr, cg.fw, d2.w));
        out.push_back(conv2d_desc(ps, "heavy.glu.out", gr, cg.out, d2));
        out.push_back(dense_desc(ps, "heavy.se.gate", gr, model.heavy_se.gate));
        out.push_back(dense_desc(ps, "heavy.head", gr, model.heavy_head));
    }

    // mid expert
    {
        const std::string gr = "expert_mid";
        Dims d1 = conv_out(in, 3, 2, 1);
        out.push_back(conv2d_desc(ps, "mid.stem1", gr, model.mid_stem1, d1));
        Dims d2 = conv_out(d1, 3, 2, 1);
        out.push_back(conv2d_desc(ps, "mid.stem2", gr, model.mid_stem2, d2));
        out.push_back(conv2d_desc(ps, "mid.ghost.primary", gr, model.mid_ghost.primary, d2));
        out.push_back(dw_desc(ps, "mid.ghost.cheap", gr, model.mid_ghost.cheap, d2));
        Dims d3 = d2.down(2);
        out.push_back(conv2d_desc(ps, "mid.sk.branch3.primary", gr,
                                  model.mid_sk.branch3.primary, d3));
        out.push_back(dw_desc(ps, "mid.sk.branch3.cheap", gr, model.mid_sk.branch3.cheap, d3));
        out.push_back(conv2d_desc(ps, "mid.sk.branch5.primary", gr,
                                  model.mid_sk.branch5.primary, d3));
        out.push_back(dw_desc(ps, "mid.sk.branch5.cheap", gr, model.mid_sk.branch5.cheap, d3));
        out.push_back(dense_desc(ps, "mid.sk.att3", gr, model.mid_sk.att3));
        out.push_back(dense_desc(ps, "mid.sk.att5", gr, model.mid_sk.att5));
        out.push_back(dense_desc(ps, "mid.se.gate", gr, model.mid_se.gate));
        out.push_back(dense_desc(ps, "mid.head", gr, model.mid_head));
    }

    // light expert
    {
        const std::string gr = "expert_light";
        Dims d1 = conv_out(in, 3, 2, 1);
        out.push_back(conv2d_desc(ps, "light.stem1", gr, model.light_stem1, d1));
        Dims d2 = conv_out(d1, 3, 2, 1);
        out.push_back(conv2d_desc(ps, "light.stem2", gr, model.light_stem2, d2));
        Dims d3 = d2.down(2);
        const MobileMqa& q = model.light_mqa;
        out.push_back(conv2d_desc(ps, "light.mqa.wq", gr, q.wq, d3));
        Dims dr = conv_out(d3, 3, 2, 1);
        out.push_back(dw_desc(ps, "light.mqa.sr", gr, q.sr, dr));
        out.push_back(conv2d_desc(ps, "light.mqa.wk", gr, q.wk, dr));
        out.push_back(conv2d_desc(ps, "light.mqa.wv", gr, q.wv, dr));
        const std::int64_t n = d3.h * d3.w, np = dr.h * dr.w;
        out.push_back(attn_desc("light.mqa.qk", gr, q.heads * n * np * q.dk));
        out.push_back(attn_desc("light.mqa.av", gr, q.heads * n * np * q.dk));
        out.push_back(conv2d_desc(ps, "light.mqa.wo", gr, q.wo, d3));
        out.push_back(dense_desc(ps, "light.se.gate", gr, model.light_se.gate));
        out.push_back(dense_desc(ps, "light.head", gr, model.light_head));
    }

    return out;
}

}  // namespace jamlab::moe
