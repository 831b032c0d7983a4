#pragma once

#include <array>

#include "cfci/core/nn.hpp"

namespace cfci {

struct MfciConfig {
    std::int64_t l1 = 4;          // single-modality layers
    std::int64_t l2 = 4;          // interaction layers
    std::int64_t heads = 8;
    std::int64_t embed_dim = 128; // E
    std::int64_t patch_size = 2;
    double alpha = 0.5, beta = 0.5;
    bool enable_mfc = true;
    bool enable_mfi = true;

    void validate() const {
        if (l1 < 1 || l2 < 1) throw std::invalid_argument("mfci: l1 and l2 must be >= 1");
        if (alpha < 0 || beta < 0) throw std::invalid_argument("mfci: alpha/beta must be >= 0");
        if (heads < 1 || embed_dim < 1 || patch_size < 1) throw std::invalid_argument("mfci: bad dims");
        if (embed_dim % (2 * heads) != 0)
            throw std::invalid_argument("mfci: embed_dim must be divisible by 2*heads");
    }
};

// ---------------------------------------------------------------------------
// patch <-> token movement
// ---------------------------------------------------------------------------

/// [B,C,D,H,W] -> [B, N, C*p^3], raster token order over (d,h,w).
inline Var patchify(const Var& x, std::int64_t p) {
    const Shape& s = x.shape();
    const std::int64_t B = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
    if (D % p || H % p || W % p)
        throw std::invalid_argument("patchify: spatial extents " + shape_str(s) +
                                    " not divisible by patch size " + std::to_string(p));
    Var r = reshape(x, {B, C, D / p, p, H / p, p, W / p, p});
    Var t = permute(r, {0, 2, 4, 6, 1, 3, 5, 7});
    return reshape(t, {B, (D / p) * (H / p) * (W / p), C * p * p * p});
}

/// Inverse of patchify for a known channel count and patch grid.
inline Var depatchify(const Var& tokens, std::int64_t c, std::array<std::int64_t, 3> grid, std::int64_t p) {
    const Shape& s = tokens.shape();
    const std::int64_t B = s[0];
    Var r = reshape(tokens, {B, grid[0], grid[1], grid[2], c, p, p, p});
    Var x = permute(r, {0, 4, 1, 5, 2, 6, 3, 7});
    return reshape(x, {B, c, grid[0] * p, grid[1] * p, grid[2] * p});
}

// ---------------------------------------------------------------------------
// tokenizer: patch embedding + projected channel average + learned PE
// ---------------------------------------------------------------------------

struct Tokenizer {
    std::int64_t c_in = 0, patch = 1, embed = 0, n_tokens = 0;
    Linear patch_embed; // [C*p^3, E]
    Linear chan_proj;   // [C, E]
    Var pos;            // [N, E]

    Tokenizer() = default;
    Tokenizer(std::int64_t c, std::int64_t p, std::int64_t e, std::int64_t n, std::mt19937_64& rng)
        : c_in(c), patch(p), embed(e), n_tokens(n),
          patch_embed(c * p * p * p, e, rng), chan_proj(c, e, rng),
          pos(Var::param(Tensor::randn({n, e}, rng, 0.02))) {}

    Var operator()(const Var& x) const {
        const Shape& s = x.shape();
        const std::int64_t B = s[0];
        if (s[1] != c_in) throw std::invalid_argument("tokenize: channel count mismatch");
        Var t = patch_embed(patchify(x, patch));
        if (t.shape()[1] != n_tokens)
            throw std::invalid_argument("tokenize: token count " + std::to_string(t.shape()[1]) +
                                        " does not match positional encoding " + std::to_string(n_tokens));
        Var ca = chan_proj(reshape(mean_axes(x, {2, 3, 4}, true), {B, c_in})); // [B,E]
        return add(add(t, reshape(ca, {B, 1, embed})), pos);
    }

    void params(const std::string& p, NamedVars& out) const {
        patch_embed.params(p + ".patch_embed", out);
        chan_proj.params(p + ".chan_proj", out);
        out.emplace_back(p + ".pos", pos);
    }
};

// ---------------------------------------------------------------------------
// attention building blocks
// ---------------------------------------------------------------------------

/// [B,N,E] -> [B*heads, N, E/heads]
inline Var split_heads(const Var& x, std::int64_t heads) {
    const Shape& s = x.shape();
    const std::int64_t B = s[0], N = s[1], E = s[2];
    Var r = reshape(x, {B, N, heads, E / heads});
    return reshape(permute(r, {0, 2, 1, 3}), {B * heads, N, E / heads});
}

/// [B*heads, N, d] -> [B, N, heads*d]
inline Var merge_heads(const Var& x, std::int64_t batch, std::int64_t heads) {
    const Shape& s = x.shape();
    const std::int64_t N = s[1], d = s[2];
    Var r = reshape(x, {batch, heads, N, d});
    return reshape(permute(r, {0, 2, 1, 3}), {batch, N, heads * d});
}

struct QkvTriple {
    Var q, k, v; // [B*heads, N, d]
    std::int64_t d_k = 0;
};

/// Per-stream Q/K/V projections; Q and K share an output width, V may differ.
struct QkvProjector {
    std::int64_t heads = 1;
    Linear wq, wk, wv;

    QkvProjector() = default;
    QkvProjector(std::int64_t e, std::int64_t heads_, std::int64_t dq, std::int64_t dv, std::mt19937_64& rng)
        : heads(heads_), wq(e, heads_ * dq, rng), wk(e, heads_ * dq, rng), wv(e, heads_ * dv, rng) {}

    QkvTriple operator()(const Var& tokens) const {
        QkvTriple t;
        t.q = split_heads(wq(tokens), heads);
        t.k = split_heads(wk(tokens), heads);
        t.v = split_heads(wv(tokens), heads);
        t.d_k = t.q.shape()[2];
        return t;
    }

    void params(const std::string& p, NamedVars& out) const {
        wq.params(p + ".wq", out);
        wk.params(p + ".wk", out);
        wv.params(p + ".wv", out);
    }
};

/// Two-layer GELU MLP (no internal residual).
struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(std::int64_t e, std::int64_t hidden, std::mt19937_64& rng) : fc1(e, hidden, rng), fc2(hidden, e, rng) {}
    Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
    void params(const std::string& p, NamedVars& out) const {
        fc1.params(p + ".fc1", out);
        fc2.params(p + ".fc2", out);
    }
};

/// x + Mlp(x); identity when the second linear is zero.
struct ResidualMlp {
    Mlp body;
    ResidualMlp() = default;
    ResidualMlp(std::int64_t e, std::mt19937_64& rng) : body(e, 2 * e, rng) {}
    Var operator()(const Var& x) const { return add(x, body(x)); }
    void params(const std::string& p, NamedVars& out) const { body.params(p, out); }
};

/// Standard pre-norm self-attention block for the single-modality stage.
struct TransformerBlock {
    std::int64_t heads = 1;
    LayerNorm ln1, ln2;
    QkvProjector qkv; // square E->E
    Linear out;
    Mlp mlp;

    TransformerBlock() = default;
    TransformerBlock(std::int64_t e, std::int64_t heads_, std::mt19937_64& rng)
        : heads(heads_), ln1(e), ln2(e),
          qkv(e, heads_, e / heads_, e / heads_, rng), out(e, e, rng), mlp(e, 4 * e, rng) {}

    Var operator()(const Var& x) const {
        const std::int64_t B = x.shape()[0];
        QkvTriple t = qkv(ln1(x));
        Var logits = mul_scalar(bmm(t.q, permute(t.k, {0, 2, 1})), 1.0 / std::sqrt(double(t.d_k)));
        Var mixed = bmm(softmax_last(logits), t.v);
        Var y = add(x, out(merge_heads(mixed, B, heads)));
        return add(y, mlp(ln2(y)));
    }

    void params(const std::string& p, NamedVars& out_v) const {
        ln1.params(p + ".ln1", out_v);
        ln2.params(p + ".ln2", out_v);
        qkv.params(p + ".qkv", out_v);
        out.params(p + ".out", out_v);
        mlp.params(p + ".mlp", out_v);
    }
};

// ---------------------------------------------------------------------------
// MFI: interactive multi-head attention over four modality streams plus the
// compressed stream. Modality Q/K concatenate along tokens (4N), modality V
// sum (N); Q is pooled back to N and mixed with the compressed projections
// via alpha/beta, so softmax(QK^T) is N x 4N applied to a bank built by
// tiling (alpha*F_V + beta*V) per modality group.
// ---------------------------------------------------------------------------

struct MfiAttnOut {
    Var tokens; // [B,N,E]
    Var attn;   // [B*heads, N, 4N]
    Var mixed;  // [B*heads, N, d_v] pre-projection
    Var bank;   // [B*heads, N, d_v] = alpha*F_V + beta*V
};

/// Elementwise sum of the four modality value streams.
inline Var modality_value_sum(const std::array<QkvTriple, 4>& mods) {
    return add(add(mods[0].v, mods[1].v), add(mods[2].v, mods[3].v));
}

/// Attention core: row-softmax(Q K^T / sqrt(d_k)) applied to the
/// per-modality tiling of the value bank. q [G,N,d_k], k [G,4N,d_k],
/// bank [G,N,d_v].
inline std::pair<Var, Var> scaled_bank_attention(const Var& q, const Var& k, const Var& bank) {
    const std::int64_t d_k = q.shape()[2];
    Var logits = mul_scalar(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(d_k)));
    Var attn = softmax_last(logits);
    Var bank4 = concat({bank, bank, bank, bank}, 1);
    return {attn, bmm(attn, bank4)};
}

struct MfiLayer {
    std::int64_t heads = 1, embed = 0, d_full = 0, d_k = 0, d_v = 0;
    double alpha = 0.5, beta = 0.5;
    std::array<QkvProjector, 4> mod_proj; // square per modality
    Linear q_reduce, k_reduce;            // d_full -> d_k
    ResidualMlp q_mlp, k_mlp;             // at d_k
    Linear v_raise;                       // d_full -> d_v
    ResidualMlp v_mlp;                    // at d_v
    Linear out_proj;                      // heads*d_v -> E
    LayerNorm ln_mod, ln_s, ln_ffn;
    Mlp ffn;

    MfiLayer() = default;
    MfiLayer(const MfciConfig& cfg, std::mt19937_64& rng)
        : heads(cfg.heads), embed(cfg.embed_dim),
          d_full(cfg.embed_dim / cfg.heads),
          d_k(cfg.embed_dim / (2 * cfg.heads)),
          d_v(2 * cfg.embed_dim / cfg.heads),
          alpha(cfg.alpha), beta(cfg.beta),
          q_reduce(cfg.embed_dim / cfg.heads, d_k, rng), k_reduce(cfg.embed_dim / cfg.heads, d_k, rng),
          q_mlp(d_k, rng), k_mlp(d_k, rng),
          v_raise(cfg.embed_dim / cfg.heads, d_v, rng), v_mlp(d_v, rng),
          out_proj(heads * d_v, cfg.embed_dim, rng),
          ln_mod(cfg.embed_dim), ln_s(cfg.embed_dim), ln_ffn(cfg.embed_dim),
          ffn(cfg.embed_dim, 4 * cfg.embed_dim, rng) {
        for (auto& p : mod_proj) p = QkvProjector(cfg.embed_dim, cfg.heads, d_full, d_full, rng);
    }

    /// Interaction core on already-projected streams.
    MfiAttnOut interactive_attention(const std::array<QkvTriple, 4>& mods, const QkvTriple& comp,
                                     std::int64_t batch) const {
        const std::int64_t n = mods[0].q.shape()[1];
        for (const auto& m : mods)
            if (m.q.shape()[1] != n || m.k.shape()[1] != n)
                throw std::invalid_argument("mfi: modality token counts differ");

        Var fq = concat({mods[0].q, mods[1].q, mods[2].q, mods[3].q}, 1); // [G,4N,d_full]
        Var fk = concat({mods[0].k, mods[1].k, mods[2].k, mods[3].k}, 1);
        Var fv = modality_value_sum(mods); // [G,N,d_full]

        // query/key path: add channel average, reduce width, MLP
        fq = q_mlp(q_reduce(add(fq, mean_axes(fq, {2}, true))));
        fk = k_mlp(k_reduce(add(fk, mean_axes(fk, {2}, true))));

        // pool Q back to N tokens: mean over the four modality groups
        Var q_pool = slice(fq, 1, 0, n);
        for (int m = 1; m < 4; ++m) q_pool = add(q_pool, slice(fq, 1, m * n, n));
        q_pool = mul_scalar(q_pool, 0.25);

        Var q = add(mul_scalar(q_pool, alpha), mul_scalar(comp.q, beta));
        Var k = add(mul_scalar(fk, alpha), mul_scalar(concat({comp.k, comp.k, comp.k, comp.k}, 1), beta));

        // value path: raise width, MLP
        Var fv_p = v_mlp(v_raise(fv));
        MfiAttnOut o;
        o.bank = add(mul_scalar(fv_p, alpha), mul_scalar(comp.v, beta));
        std::tie(o.attn, o.mixed) = scaled_bank_attention(q, k, o.bank);
        o.tokens = out_proj(merge_heads(o.mixed, batch, heads));
        return o;
    }

    /// One interaction layer: residual attention update of the compressed
    /// stream followed by a residual feed-forward.
    Var operator()(const std::array<Var, 4>& mod_seqs, const QkvProjector& comp_proj, const Var& s) const {
        const std::int64_t B = s.shape()[0];
        std::array<QkvTriple, 4> trips;
        for (int m = 0; m < 4; ++m) trips[m] = mod_proj[m](ln_mod(mod_seqs[m]));
        QkvTriple comp = comp_proj(ln_s(s));
        MfiAttnOut att = interactive_attention(trips, comp, B);
        Var y = add(s, att.tokens);
        return add(y, ffn(ln_ffn(y)));
    }

    void params(const std::string& p, NamedVars& out) const {
        for (int m = 0; m < 4; ++m) mod_proj[m].params(p + ".mod" + std::to_string(m), out);
        q_reduce.params(p + ".q_reduce", out);
        k_reduce.params(p + ".k_reduce", out);
        q_mlp.params(p + ".q_mlp", out);
        k_mlp.params(p + ".k_mlp", out);
        v_raise.params(p + ".v_raise", out);
        v_mlp.params(p + ".v_mlp", out);
        out_proj.params(p + ".out_proj", out);
        ln_mod.params(p + ".ln_mod", out);
        ln_s.params(p + ".ln_s", out);
        ln_ffn.params(p + ".ln_ffn", out);
        ffn.params(p + ".ffn", out);
    }
};

// ---------------------------------------------------------------------------
// MFC: channel compression of the concatenated bottleneck. The spatial path
// is a residual block 4C -> C_out; the sequence path projects tokens of the
// concatenation back onto the patch grid.
// ---------------------------------------------------------------------------

struct CompressedFeature {
    Var fc;     // [B, C_out, D, H, W]
    Var tokens; // [B, N, E] companion sequence
};

struct Mfc {
    std::int64_t c_out = 0, patch = 1;
    std::array<std::int64_t, 3> grid{};
    bool compress = true; // ablation: false uses a plain 1x1x1 projection
    ResBlock3d res;       // 4C -> C_out
    Conv3dLayer plain;    // 4C -> C_out when !compress
    Tokenizer tok;        // over the 4C concatenation
    Linear seq_to_patch;  // E -> C_out*p^3
    Tokenizer tok_c;      // over F_c
    QkvProjector comp_proj;

    Mfc() = default;
    Mfc(std::int64_t c4, std::int64_t c_out_, std::array<std::int64_t, 3> grid_, const MfciConfig& cfg,
        std::mt19937_64& rng, bool compress_)
        : c_out(c_out_), patch(cfg.patch_size), grid(grid_), compress(compress_) {
        const std::int64_t n = grid[0] * grid[1] * grid[2];
        if (compress) {
            res = ResBlock3d(c4, c_out, rng);
            tok = Tokenizer(c4, patch, cfg.embed_dim, n, rng);
            seq_to_patch = Linear(cfg.embed_dim, c_out * patch * patch * patch, rng);
        } else {
            plain = Conv3dLayer(c4, c_out, 1, 1, 0, rng);
        }
        tok_c = Tokenizer(c_out, patch, cfg.embed_dim, n, rng);
        comp_proj = QkvProjector(cfg.embed_dim, cfg.heads, cfg.embed_dim / (2 * cfg.heads),
                                 2 * cfg.embed_dim / cfg.heads, rng);
    }

    CompressedFeature operator()(const Var& concat_f, bool training) const {
        CompressedFeature out;
        if (compress) {
            Var seq = tok(concat_f);
            Var spatialised = depatchify(seq_to_patch(seq), c_out, grid, patch);
            out.fc = add(spatialised, res(concat_f, training));
        } else {
            out.fc = plain(concat_f);
        }
        out.tokens = tok_c(out.fc);
        return out;
    }

    void params(const std::string& p, NamedVars& out) const {
        if (compress) {
            res.params(p + ".res", out);
            tok.params(p + ".tok", out);
            seq_to_patch.params(p + ".seq_to_patch", out);
        } else {
            plain.params(p + ".plain", out);
        }
        tok_c.params(p + ".tok_c", out);
        comp_proj.params(p + ".comp_proj", out);
    }
    void buffers(const std::string& p, NamedBuffers& out) {
        if (compress) res.buffers(p + ".res", out);
    }
};

// ---------------------------------------------------------------------------
// full MFCI transformer
// ---------------------------------------------------------------------------

struct Mfci {
    MfciConfig cfg;
    std::int64_t c_in = 0, c_out = 0;
    std::array<std::int64_t, 3> grid{};
    std::array<Tokenizer, 4> mod_tok;
    std::vector<std::array<TransformerBlock, 4>> l1_blocks;
    Mfc mfc;
    std::vector<MfiLayer> l2_layers;
    Linear detok; // E -> c_out*p^3

    Mfci() = default;
    Mfci(std::int64_t c, std::int64_t c_out_, std::array<std::int64_t, 3> spatial, MfciConfig cfg_,
         std::mt19937_64& rng)
        : cfg(cfg_), c_in(c), c_out(c_out_) {
        cfg.validate();
        for (int a = 0; a < 3; ++a) {
            if (spatial[a] % cfg.patch_size)
                throw std::invalid_argument("mfci: bottleneck spatial extent not divisible by patch size");
            grid[a] = spatial[a] / cfg.patch_size;
        }
        if (c_out >= 4 * c)
            throw std::invalid_argument("mfci: output channels must compress the 4C concatenation");
        const std::int64_t n = grid[0] * grid[1] * grid[2];
        if (cfg.enable_mfi) {
            for (auto& t : mod_tok) t = Tokenizer(c, cfg.patch_size, cfg.embed_dim, n, rng);
            l1_blocks.resize(cfg.l1);
            for (auto& layer : l1_blocks)
                for (auto& block : layer) block = TransformerBlock(cfg.embed_dim, cfg.heads, rng);
        }
        mfc = Mfc(4 * c, c_out, grid, cfg, rng, cfg.enable_mfc);
        if (cfg.enable_mfi) {
            for (std::int64_t i = 0; i < cfg.l2; ++i) l2_layers.emplace_back(cfg, rng);
            detok = Linear(cfg.embed_dim, c_out * cfg.patch_size * cfg.patch_size * cfg.patch_size, rng);
        }
    }

    Var operator()(const Var& t1, const Var& t1ce, const Var& t2, const Var& flair, bool training) const {
        for (const Var* v : {&t1ce, &t2, &flair})
            if (v->shape() != t1.shape()) throw std::invalid_argument("mfci: bottleneck shapes differ");

        CompressedFeature comp = mfc(concat({t1, t1ce, t2, flair}, 1), training);
        if (!cfg.enable_mfi) return comp.fc;

        std::array<Var, 4> seqs = {mod_tok[0](t1), mod_tok[1](t1ce), mod_tok[2](t2), mod_tok[3](flair)};
        for (const auto& layer : l1_blocks)
            for (int m = 0; m < 4; ++m) seqs[m] = layer[m](seqs[m]);

        Var s = comp.tokens;
        for (const auto& layer : l2_layers) s = layer(seqs, mfc.comp_proj, s);
        return add(comp.fc, depatchify(detok(s), c_out, grid, cfg.patch_size));
    }

    void params(const std::string& p, NamedVars& out) const {
        if (cfg.enable_mfi) {
            for (int m = 0; m < 4; ++m) mod_tok[m].params(p + ".tok" + std::to_string(m), out);
            for (std::size_t i = 0; i < l1_blocks.size(); ++i)
                for (int m = 0; m < 4; ++m)
                    l1_blocks[i][m].params(p + ".l1_" + std::to_string(i) + "_m" + std::to_string(m), out);
        }
        mfc.params(p + ".mfc", out);
        if (cfg.enable_mfi) {
            for (std::size_t i = 0; i < l2_layers.size(); ++i)
                l2_layers[i].params(p + ".l2_" + std::to_string(i), out);
            detok.params(p + ".detok", out);
        }
    }
    void buffers(const std::string& p, NamedBuffers& out) { mfc.buffers(p + ".mfc", out); }
};

} // namespace cfci
