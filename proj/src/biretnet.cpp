#include "retc/biretnet.hpp"

#include <cmath>

#include "retc/rng.hpp"

namespace retc {

void ModelConfig::validate() const {
    RETC_CHECK(heads >= 1 && dim >= 1 && layers >= 0 && side >= 1 && palette >= 2,
               ErrorKind::Usage, "model config: all extents must be positive (palette >= 2)");
    RETC_CHECK(dim % heads == 0, ErrorKind::Dimension,
               "model config: embedding dim must be divisible by head count");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"h", heads}, {"d", dim}, {"layers", layers}, {"side", side}, {"palette", palette}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.heads = j.at("h").get<std::int64_t>();
    cfg.dim = j.at("d").get<std::int64_t>();
    cfg.layers = j.at("layers").get<std::int64_t>();
    cfg.side = j.at("side").get<std::int64_t>();
    cfg.palette = j.at("palette").get<std::int64_t>();
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::celeba_hq() { return {8, 512, 30, 48, 512}; }
ModelConfig ModelConfig::imagenet() { return {8, 1024, 35, 32, 512}; }

namespace {

void snap_tensor(Tensor& t) {
    for (auto& v : t.data) v = snap_f32(v);
}

BlockParams make_block(const ModelConfig& cfg) {
    const std::int64_t d = cfg.dim, dh = cfg.d_head();
    BlockParams b;
    b.ln1_g = Tensor({d});
    b.ln1_b = Tensor({d});
    b.msr.heads.resize(static_cast<std::size_t>(cfg.heads));
    for (std::int64_t h = 0; h < cfg.heads; ++h) {
        auto& hp = b.msr.heads[static_cast<std::size_t>(h)];
        hp.wq = Tensor({dh, dh});
        hp.wk = Tensor({dh, dh});
        hp.wv = Tensor({dh, dh});
        hp.gamma = head_decay(h);
        hp.theta = head_theta(dh);
    }
    b.msr.gn_gamma = Tensor({d});
    b.msr.gn_beta = Tensor({d});
    b.msr.wg = Tensor({d, d});
    b.msr.wo = Tensor({d, d});
    b.ln2_g = Tensor({d});
    b.ln2_b = Tensor({d});
    b.ffn.w1 = Tensor({d, 4 * d});
    b.ffn.b1 = Tensor({4 * d});
    b.ffn.w2 = Tensor({4 * d, d});
    b.ffn.b2 = Tensor({d});
    return b;
}

template <typename Net, typename Fn>
void visit_impl(Net& net, Fn&& fn) {
    fn("fe", net.fe);
    fn("pe", net.pe);
    const char* dirs[2] = {"f", "b"};
    for (int di = 0; di < 2; ++di) {
        auto& blocks = di == 0 ? net.fwd : net.bwd;
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            auto& blk = blocks[l];
            const std::string pre = std::string(dirs[di]) + "." + std::to_string(l) + ".";
            fn(pre + "ln1.g", blk.ln1_g);
            fn(pre + "ln1.b", blk.ln1_b);
            for (std::size_t h = 0; h < blk.msr.heads.size(); ++h) {
                const std::string hp = pre + "msr." + std::to_string(h) + ".";
                fn(hp + "wq", blk.msr.heads[h].wq);
                fn(hp + "wk", blk.msr.heads[h].wk);
                fn(hp + "wv", blk.msr.heads[h].wv);
            }
            fn(pre + "msr.gn.g", blk.msr.gn_gamma);
            fn(pre + "msr.gn.b", blk.msr.gn_beta);
            fn(pre + "msr.wg", blk.msr.wg);
            fn(pre + "msr.wo", blk.msr.wo);
            fn(pre + "ln2.g", blk.ln2_g);
            fn(pre + "ln2.b", blk.ln2_b);
            fn(pre + "ffn.w1", blk.ffn.w1);
            fn(pre + "ffn.b1", blk.ffn.b1);
            fn(pre + "ffn.w2", blk.ffn.w2);
            fn(pre + "ffn.b2", blk.ffn.b2);
        }
    }
    fn("head.ln.g", net.head_ln_g);
    fn("head.ln.b", net.head_ln_b);
    fn("head.fc.w", net.head_fc_w);
    fn("head.fc.b", net.head_fc_b);
}

bool is_gain(const std::string& name) {
    return name.ends_with("ln1.g") || name.ends_with("ln2.g") || name.ends_with("gn.g") ||
           name.ends_with("ln.g");
}

bool is_bias(const std::string& name) {
    return name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
}

}  // namespace

void visit_params(BiRetNet& net, const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_impl(net, fn);
}

void visit_params(const BiRetNet& net,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_impl(net, fn);
}

std::int64_t param_count(const ModelConfig& cfg) {
    const std::int64_t d = cfg.dim, h = cfg.heads, dh = cfg.d_head();
    const std::int64_t per_block = 2 * d                 // ln1
                                   + 3 * h * dh * dh     // wq/wk/wv
                                   + 2 * d               // groupnorm affine
                                   + 2 * d * d           // wg, wo
                                   + 2 * d               // ln2
                                   + 8 * d * d + 5 * d;  // ffn
    return (cfg.palette + 1) * d + cfg.seq_len() * d + 2 * cfg.layers * per_block + 2 * d +
           d * cfg.palette + cfg.palette;
}

BiRetNet init_biretnet(const ModelConfig& cfg, const Palette& palette, std::uint64_t seed) {
    cfg.validate();
    RETC_CHECK(palette.k() == cfg.palette, ErrorKind::Usage,
               "init: palette size does not match model config");
    BiRetNet net;
    net.cfg = cfg;
    net.palette = palette;
    net.fe = Tensor({cfg.palette + 1, cfg.dim});
    net.pe = Tensor({cfg.seq_len(), cfg.dim});
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        net.fwd.push_back(make_block(cfg));
        net.bwd.push_back(make_block(cfg));
    }
    net.head_ln_g = Tensor({cfg.dim});
    net.head_ln_b = Tensor({cfg.dim});
    net.head_fc_w = Tensor({cfg.dim, cfg.palette});
    net.head_fc_b = Tensor({cfg.palette});

    visit_params(net, [&](const std::string& name, Tensor& t) {
        if (is_gain(name)) {
            t = Tensor::full(t.shape, 1.0);
            return;
        }
        if (is_bias(name)) return;  // zeros
        Rng rng = make_rng(seed, "init." + name);
        for (auto& v : t.data) v = rng.truncated_normal(0.02);
        snap_tensor(t);
    });
    return net;
}

TowerStates TowerStates::fresh(const ModelConfig& cfg) {
    TowerStates st;
    st.layers.assign(static_cast<std::size_t>(cfg.layers),
                     std::vector<RetentionState>(static_cast<std::size_t>(cfg.heads),
                                                 RetentionState::fresh(cfg.d_head())));
    return st;
}

namespace {

Tensor ffn_forward(const Tensor& x, const FfnParams& f) {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(x, f.w1), f.b1)), f.w2), f.b2);
}

Tensor block_forward(const Tensor& x, const BlockParams& blk, Paradigm paradigm, std::int64_t chunk,
                     std::vector<RetentionState>* states, std::int64_t start_pos) {
    const Tensor ln1 = layer_norm(x, blk.ln1_g, blk.ln1_b, kNormEps);
    const Tensor y = add(msr(ln1, blk.msr, paradigm, chunk, states, start_pos), x);
    const Tensor ln2 = layer_norm(y, blk.ln2_g, blk.ln2_b, kNormEps);
    return add(ffn_forward(ln2, blk.ffn), y);
}

}  // namespace

Tensor forward_tower(const Tensor& x, const std::vector<BlockParams>& blocks, Paradigm paradigm,
                     std::int64_t chunk, TowerStates* states, std::int64_t start_pos) {
    if (states)
        RETC_CHECK(states->layers.size() == blocks.size(), ErrorKind::Usage,
                   "forward_tower: state layer count mismatch");
    Tensor h = x;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        h = block_forward(h, blocks[l], paradigm, chunk,
                          states ? &states->layers[l] : nullptr, start_pos);
    }
    return h;
}

Tensor backward_tower(const Tensor& x, const std::vector<BlockParams>& blocks, Paradigm paradigm,
                      std::int64_t chunk) {
    return reverse_rows(forward_tower(reverse_rows(x), blocks, paradigm, chunk));
}

Tensor fuse_predict(const Tensor& xf, const Tensor& xb, const BiRetNet& net) {
    RETC_CHECK(xf.shape == xb.shape, ErrorKind::Dimension, "fuse_predict: tower shape mismatch");
    const Tensor fused = layer_norm(add(xf, xb), net.head_ln_g, net.head_ln_b, kNormEps);
    return softmax(add_rowvec(matmul(fused, net.head_fc_w), net.head_fc_b));
}

Tensor predict_all(const BiRetNet& net, const PixelSequence& seq, Paradigm paradigm,
                   std::int64_t chunk) {
    const Tensor x = embed(seq, net.tables());
    const Tensor xf = forward_tower(x, net.fwd, paradigm, chunk);
    const Tensor xb = backward_tower(x, net.bwd, paradigm, chunk);
    return fuse_predict(xf, xb, net);
}

GraphParams GraphParams::from(const BiRetNet& net) {
    GraphParams gp;
    visit_params(net, [&](const std::string& name, const Tensor& t) {
        Var v = leaf(t, true);
        gp.ordered.emplace_back(name, v);
        gp.by_name.emplace(name, v);
    });
    return gp;
}

const Var& GraphParams::at(const std::string& name) const {
    auto it = by_name.find(name);
    RETC_CHECK(it != by_name.end(), ErrorKind::Usage, "graph params: unknown name " + name);
    return it->second;
}

std::vector<Var> GraphParams::vars() const {
    std::vector<Var> out;
    out.reserve(ordered.size());
    for (const auto& [_, v] : ordered) out.push_back(v);
    return out;
}

namespace {

Var msr_graph(const Var& x, const GraphParams& gp, const std::string& pre, const ModelConfig& cfg,
              Paradigm paradigm, std::int64_t chunk) {
    const std::int64_t dh = cfg.d_head();
    std::vector<Var> heads;
    for (std::int64_t h = 0; h < cfg.heads; ++h) {
        const Var xs = slice_cols(x, h * dh, (h + 1) * dh);
        const std::string hp = pre + "msr." + std::to_string(h) + ".";
        const Real gamma = head_decay(h);
        const auto theta = head_theta(dh);
        if (paradigm == Paradigm::Chunkwise) {
            heads.push_back(retention_chunkwise(xs, chunk > 0 ? chunk : x->value.shape[0],
                                                gp.at(hp + "wq"), gp.at(hp + "wk"), gp.at(hp + "wv"),
                                                gamma, theta));
        } else {
            heads.push_back(retention_parallel(xs, gp.at(hp + "wq"), gp.at(hp + "wk"),
                                               gp.at(hp + "wv"), gamma, theta));
        }
    }
    const Var y = group_norm(concat_cols(heads), cfg.heads, gp.at(pre + "msr.gn.g"),
                             gp.at(pre + "msr.gn.b"), kNormEps);
    return matmul(mul(silu(matmul(x, gp.at(pre + "msr.wg"))), y), gp.at(pre + "msr.wo"));
}

Var block_graph(const Var& x, const GraphParams& gp, const std::string& pre, const ModelConfig& cfg,
                Paradigm paradigm, std::int64_t chunk) {
    const Var ln1 = layer_norm(x, gp.at(pre + "ln1.g"), gp.at(pre + "ln1.b"), kNormEps);
    const Var y = add(msr_graph(ln1, gp, pre, cfg, paradigm, chunk), x);
    const Var ln2 = layer_norm(y, gp.at(pre + "ln2.g"), gp.at(pre + "ln2.b"), kNormEps);
    const Var f = add_rowvec(
        matmul(gelu(add_rowvec(matmul(ln2, gp.at(pre + "ffn.w1")), gp.at(pre + "ffn.b1"))),
               gp.at(pre + "ffn.w2")),
        gp.at(pre + "ffn.b2"));
    return add(f, y);
}

}  // namespace

Var forward_tower(const Var& x, const GraphParams& gp, const std::string& dir,
                  const ModelConfig& cfg, Paradigm paradigm, std::int64_t chunk) {
    Var h = x;
    for (std::int64_t l = 0; l < cfg.layers; ++l)
        h = block_graph(h, gp, dir + "." + std::to_string(l) + ".", cfg, paradigm, chunk);
    return h;
}

Var backward_tower(const Var& x, const GraphParams& gp, const ModelConfig& cfg, Paradigm paradigm,
                   std::int64_t chunk) {
    return reverse_rows(forward_tower(reverse_rows(x), gp, "b", cfg, paradigm, chunk));
}

Var fuse_predict(const Var& xf, const Var& xb, const GraphParams& gp, const ModelConfig& cfg) {
    (void)cfg;
    const Var fused = layer_norm(add(xf, xb), gp.at("head.ln.g"), gp.at("head.ln.b"), kNormEps);
    return softmax(add_rowvec(matmul(fused, gp.at("head.fc.w")), gp.at("head.fc.b")));
}

Var predict_all(const GraphParams& gp, const ModelConfig& cfg, const PixelSequence& seq,
                Paradigm paradigm, std::int64_t chunk) {
    const Var x = embed(seq, gp.at("fe"), gp.at("pe"));
    const Var xf = forward_tower(x, gp, "f", cfg, paradigm, chunk);
    const Var xb = backward_tower(x, gp, cfg, paradigm, chunk);
    return fuse_predict(xf, xb, gp, cfg);
}

Checkpoint to_checkpoint(const BiRetNet& net, std::int64_t step) {
    Checkpoint ck;
    ck.meta = {{"format", 1},
               {"kind", "biretnet"},
               {"model", net.cfg.to_json()},
               {"palette_hash", palette_hash(net.palette)},
               {"step", step}};
    visit_params(net, [&](const std::string& name, const Tensor& t) { ck.add(name, t); });
    Tensor pal({net.palette.k(), 3});
    for (std::int64_t i = 0; i < net.palette.k(); ++i)
        for (int ch = 0; ch < 3; ++ch)
            pal.at(i, ch) = net.palette.centroids[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)];
    ck.add("palette.rgb", pal);
    return ck;
}

BiRetNet biretnet_from_checkpoint(const Checkpoint& ck) {
    RETC_CHECK(ck.meta.value("kind", "") == "biretnet", ErrorKind::Io,
               "checkpoint kind is not 'biretnet'");
    const ModelConfig cfg = ModelConfig::from_json(ck.meta.at("model"));

    const Tensor pal = ck.tensor("palette.rgb", {cfg.palette, 3});
    Palette palette;
    palette.centroids.resize(static_cast<std::size_t>(cfg.palette));
    for (std::int64_t i = 0; i < cfg.palette; ++i)
        for (int ch = 0; ch < 3; ++ch)
            palette.centroids[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)] = pal.at(i, ch);

    BiRetNet net = init_biretnet(cfg, palette, 0);
    visit_params(net, [&](const std::string& name, Tensor& t) { t = ck.tensor(name, t.shape); });
    const std::string want_hash = ck.meta.value("palette_hash", "");
    RETC_CHECK(want_hash.empty() || want_hash == palette_hash(net.palette), ErrorKind::Io,
               "checkpoint palette hash mismatch");
    return net;
}

}  // namespace retc
