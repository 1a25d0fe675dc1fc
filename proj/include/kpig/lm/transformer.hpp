#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "kpig/common.hpp"
#include "kpig/lm/model.hpp"

namespace kpig::lm {

struct TransformerConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t context = 256;
    std::uint64_t init_seed = 0;
    double init_std = 0.02;

    bool operator==(const TransformerConfig&) const = default;
};

/// Decoder-only transformer (pre-LayerNorm, GELU MLP, learned positions,
/// output head tied to the token embedding) with hand-written backward pass.
/// All parameters live in one flat buffer.
class Transformer final : public LanguageModel {
public:
    /// Activations of one forward pass, kept for backward.
    struct Cache {
        std::vector<TokenId> tokens;
        std::size_t first_row = 0;
        struct Layer {
            std::vector<double> input;  // T x C residual stream entering the block
            std::vector<double> ln1, ln1_mean, ln1_rstd;
            std::vector<double> qkv;    // T x 3C
            std::vector<double> att;    // H x T x T
            std::vector<double> atty;   // T x C
            std::vector<double> resid_mid;
            std::vector<double> ln2, ln2_mean, ln2_rstd;
            std::vector<double> fch, fch_gelu;  // T x 4C
        };
        std::vector<Layer> layers;
        std::vector<double> final_resid;
        std::vector<double> lnf, lnf_mean, lnf_rstd;
    };

    explicit Transformer(TransformerConfig cfg) : cfg_(cfg) {
        if (cfg_.vocab_size == 0 || cfg_.d_model == 0 || cfg_.n_heads == 0 || cfg_.context == 0) {
            throw ContractError("Transformer: dimensions must be positive");
        }
        if (cfg_.d_model % cfg_.n_heads != 0) {
            throw ContractError("Transformer: d_model must be divisible by n_heads");
        }
        layout();
        initialize();
    }

    const TransformerConfig& config() const { return cfg_; }
    std::size_t vocab_size() const override { return cfg_.vocab_size; }
    std::size_t max_context() const override { return cfg_.context; }
    std::size_t parameter_count() const { return params_.size(); }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<Transformer>(*this); }

    Matrix next_token_log_probs(std::span<const TokenId> tokens, std::size_t first_row) const override {
        Cache cache;
        return forward(tokens, first_row, cache);
    }

    /// Forward pass returning log-probabilities for rows >= first_row and
    /// filling cache for backward.
    Matrix forward(std::span<const TokenId> tokens, std::size_t first_row, Cache& cache) const {
        const std::size_t T = tokens.size();
        const std::size_t C = cfg_.d_model;
        const std::size_t V = cfg_.vocab_size;
        if (T == 0 || first_row >= T) {
            throw ContractError("Transformer::forward: empty sequence or first_row out of range");
        }
        check_context(*this, T, "Transformer::forward");
        for (TokenId t : tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= V) {
                throw ContractError("Transformer::forward: token id out of range");
            }
        }
        cache.tokens.assign(tokens.begin(), tokens.end());
        cache.first_row = first_row;
        cache.layers.assign(cfg_.n_layers, {});

        std::vector<double> x(T * C);
        const double* wte = p(off_.wte);
        const double* wpe = p(off_.wpe);
        for (std::size_t t = 0; t < T; ++t) {
            const double* e = wte + static_cast<std::size_t>(tokens[t]) * C;
            const double* q = wpe + t * C;
            for (std::size_t c = 0; c < C; ++c) {
                x[t * C + c] = e[c] + q[c];
            }
        }
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            const LayerOffsets& o = off_.layers[l];
            Cache::Layer& L = cache.layers[l];
            L.input = x;
            layernorm_forward(x, p(o.ln1_g), p(o.ln1_b), T, C, L.ln1, L.ln1_mean, L.ln1_rstd);
            matmul_forward(L.ln1, p(o.qkv_w), p(o.qkv_b), T, C, 3 * C, L.qkv);
            attention_forward(L.qkv, T, L.att, L.atty);
            std::vector<double> proj;
            matmul_forward(L.atty, p(o.proj_w), p(o.proj_b), T, C, C, proj);
            L.resid_mid.resize(T * C);
            for (std::size_t i = 0; i < T * C; ++i) {
                L.resid_mid[i] = x[i] + proj[i];
            }
            layernorm_forward(L.resid_mid, p(o.ln2_g), p(o.ln2_b), T, C, L.ln2, L.ln2_mean, L.ln2_rstd);
            matmul_forward(L.ln2, p(o.fc_w), p(o.fc_b), T, C, 4 * C, L.fch);
            L.fch_gelu.resize(L.fch.size());
            for (std::size_t i = 0; i < L.fch.size(); ++i) {
                L.fch_gelu[i] = gelu(L.fch[i]);
            }
            std::vector<double> mlp;
            matmul_forward(L.fch_gelu, p(o.fcproj_w), p(o.fcproj_b), T, 4 * C, C, mlp);
            for (std::size_t i = 0; i < T * C; ++i) {
                x[i] = L.resid_mid[i] + mlp[i];
            }
        }
        cache.final_resid = x;
        layernorm_forward(x, p(off_.lnf_g), p(off_.lnf_b), T, C, cache.lnf, cache.lnf_mean, cache.lnf_rstd);

        Matrix out(T - first_row, V);
        for (std::size_t t = first_row; t < T; ++t) {
            const double* h = cache.lnf.data() + t * C;
            auto row = out.row(t - first_row);
            for (std::size_t v = 0; v < V; ++v) {
                const double* w = wte + v * C;
                double s = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    s += w[c] * h[c];
                }
                row[v] = s;
            }
            log_softmax_inplace(row);
        }
        return out;
    }

    /// Accumulates dLoss/dparams into grad given dLoss/dlogits for the rows
    /// produced by the cached forward pass.
    void backward(const Cache& cache, const Matrix& dlogits, std::span<double> grad) const {
        const std::size_t T = cache.tokens.size();
        const std::size_t C = cfg_.d_model;
        const std::size_t V = cfg_.vocab_size;
        if (grad.size() != params_.size()) {
            throw ContractError("Transformer::backward: gradient buffer has wrong size");
        }
        if (dlogits.rows != T - cache.first_row || dlogits.cols != V) {
            throw ContractError("Transformer::backward: dlogits shape mismatch");
        }
        const double* wte = p(off_.wte);
        double* gwte = grad.data() + off_.wte;

        std::vector<double> dlnf(T * C, 0.0);
        for (std::size_t t = cache.first_row; t < T; ++t) {
            auto drow = dlogits.row(t - cache.first_row);
            const double* h = cache.lnf.data() + t * C;
            double* dh = dlnf.data() + t * C;
            for (std::size_t v = 0; v < V; ++v) {
                const double d = drow[v];
                if (d == 0.0) {
                    continue;
                }
                const double* w = wte + v * C;
                double* gw = gwte + v * C;
                for (std::size_t c = 0; c < C; ++c) {
                    dh[c] += d * w[c];
                    gw[c] += d * h[c];
                }
            }
        }
        std::vector<double> dx(T * C, 0.0);
        layernorm_backward(dlnf, cache.final_resid, cache.lnf_mean, cache.lnf_rstd, p(off_.lnf_g),
                           grad.data() + off_.lnf_g, grad.data() + off_.lnf_b, T, C, dx);

        for (std::size_t li = cfg_.n_layers; li-- > 0;) {
            const LayerOffsets& o = off_.layers[li];
            const Cache::Layer& L = cache.layers[li];
            // MLP branch: dx flows into both the residual and fcproj output.
            std::vector<double> dfch_gelu(T * 4 * C, 0.0);
            matmul_backward(dx, L.fch_gelu, p(o.fcproj_w), T, 4 * C, C, dfch_gelu, grad.data() + o.fcproj_w,
                            grad.data() + o.fcproj_b);
            std::vector<double> dfch(dfch_gelu.size());
            for (std::size_t i = 0; i < dfch.size(); ++i) {
                dfch[i] = dfch_gelu[i] * gelu_grad(L.fch[i]);
            }
            std::vector<double> dln2(T * C, 0.0);
            matmul_backward(dfch, L.ln2, p(o.fc_w), T, C, 4 * C, dln2, grad.data() + o.fc_w, grad.data() + o.fc_b);
            std::vector<double> dresid_mid = dx;
            layernorm_backward(dln2, L.resid_mid, L.ln2_mean, L.ln2_rstd, p(o.ln2_g), grad.data() + o.ln2_g,
                               grad.data() + o.ln2_b, T, C, dresid_mid);
            // Attention branch.
            std::vector<double> datty(T * C, 0.0);
            matmul_backward(dresid_mid, L.atty, p(o.proj_w), T, C, C, datty, grad.data() + o.proj_w,
                            grad.data() + o.proj_b);
            std::vector<double> dqkv(T * 3 * C, 0.0);
            attention_backward(datty, L.qkv, L.att, T, dqkv);
            std::vector<double> dln1(T * C, 0.0);
            matmul_backward(dqkv, L.ln1, p(o.qkv_w), T, C, 3 * C, dln1, grad.data() + o.qkv_w,
                            grad.data() + o.qkv_b);
            dx = dresid_mid;
            layernorm_backward(dln1, L.input, L.ln1_mean, L.ln1_rstd, p(o.ln1_g), grad.data() + o.ln1_g,
                               grad.data() + o.ln1_b, T, C, dx);
        }
        double* gwpe = grad.data() + off_.wpe;
        for (std::size_t t = 0; t < T; ++t) {
            double* ge = gwte + static_cast<std::size_t>(cache.tokens[t]) * C;
            double* gp = gwpe + t * C;
            for (std::size_t c = 0; c < C; ++c) {
                ge[c] += dx[t * C + c];
                gp[c] += dx[t * C + c];
            }
        }
    }

private:
    struct LayerOffsets {
        std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc_w, fc_b, fcproj_w, fcproj_b;
    };
    struct Offsets {
        std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0;
        std::vector<LayerOffsets> layers;
    };

    const double* p(std::size_t offset) const { return params_.data() + offset; }

    void layout() {
        const std::size_t C = cfg_.d_model;
        std::size_t n = 0;
        auto take = [&n](std::size_t count) {
            std::size_t at = n;
            n += count;
            return at;
        };
        off_.wte = take(cfg_.vocab_size * C);
        off_.wpe = take(cfg_.context * C);
        off_.layers.clear();
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            LayerOffsets o{};
            o.ln1_g = take(C);
            o.ln1_b = take(C);
            o.qkv_w = take(3 * C * C);
            o.qkv_b = take(3 * C);
            o.proj_w = take(C * C);
            o.proj_b = take(C);
            o.ln2_g = take(C);
            o.ln2_b = take(C);
            o.fc_w = take(4 * C * C);
            o.fc_b = take(4 * C);
            o.fcproj_w = take(4 * C * C);
            o.fcproj_b = take(C);
            off_.layers.push_back(o);
        }
        off_.lnf_g = take(C);
        off_.lnf_b = take(C);
        params_.assign(n, 0.0);
    }

    void initialize() {
        const std::size_t C = cfg_.d_model;
        Rng rng = derive_rng(cfg_.init_seed, "transformer-init");
        // Box-Muller on our own uniform draws keeps init identical across standard libraries.
        auto normal = [&rng](double stddev) {
            double u1 = uniform_real(rng);
            double u2 = uniform_real(rng);
            if (u1 < 1e-300) {
                u1 = 1e-300;
            }
            return stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        };
        auto fill = [&](std::size_t at, std::size_t count, double stddev) {
            for (std::size_t i = 0; i < count; ++i) {
                params_[at + i] = normal(stddev);
            }
        };
        auto ones = [&](std::size_t at, std::size_t count) {
            std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(at), count, 1.0);
        };
        const double resid_std = cfg_.init_std / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, cfg_.n_layers)));
        fill(off_.wte, cfg_.vocab_size * C, cfg_.init_std);
        fill(off_.wpe, cfg_.context * C, cfg_.init_std);
        for (const auto& o : off_.layers) {
            ones(o.ln1_g, C);
            fill(o.qkv_w, 3 * C * C, cfg_.init_std);
            fill(o.proj_w, C * C, resid_std);
            ones(o.ln2_g, C);
            fill(o.fc_w, 4 * C * C, cfg_.init_std);
            fill(o.fcproj_w, 4 * C * C, resid_std);
        }
        ones(off_.lnf_g, C);
    }

    static constexpr double kLnEps = 1e-5;

    static double gelu(double x) {
        constexpr double s = 0.7978845608028654;  // sqrt(2/pi)
        return 0.5 * x * (1.0 + std::tanh(s * (x + 0.044715 * x * x * x)));
    }

    static double gelu_grad(double x) {
        constexpr double s = 0.7978845608028654;
        const double u = s * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * s * (1.0 + 3.0 * 0.044715 * x * x);
    }

    static void layernorm_forward(const std::vector<double>& in, const double* g, const double* b, std::size_t T,
                                  std::size_t C, std::vector<double>& out, std::vector<double>& mean,
                                  std::vector<double>& rstd) {
        out.resize(T * C);
        mean.resize(T);
        rstd.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            const double* x = in.data() + t * C;
            double m = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                m += x[c];
            }
            m /= static_cast<double>(C);
            double var = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                var += (x[c] - m) * (x[c] - m);
            }
            var /= static_cast<double>(C);
            const double rs = 1.0 / std::sqrt(var + kLnEps);
            for (std::size_t c = 0; c < C; ++c) {
                out[t * C + c] = (x[c] - m) * rs * g[c] + b[c];
            }
            mean[t] = m;
            rstd[t] = rs;
        }
    }

    static void layernorm_backward(const std::vector<double>& dout, const std::vector<double>& in,
                                   const std::vector<double>& mean, const std::vector<double>& rstd,
                                   const double* g, double* dg, double* db, std::size_t T, std::size_t C,
                                   std::vector<double>& dinp) {
        for (std::size_t t = 0; t < T; ++t) {
            const double* x = in.data() + t * C;
            const double* d = dout.data() + t * C;
            double dnorm_mean = 0.0;
            double dnorm_norm_mean = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double norm = (x[c] - mean[t]) * rstd[t];
                const double dnorm = d[c] * g[c];
                dnorm_mean += dnorm;
                dnorm_norm_mean += dnorm * norm;
            }
            dnorm_mean /= static_cast<double>(C);
            dnorm_norm_mean /= static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) {
                const double norm = (x[c] - mean[t]) * rstd[t];
                const double dnorm = d[c] * g[c];
                dg[c] += d[c] * norm;
                db[c] += d[c];
                dinp[t * C + c] += rstd[t] * (dnorm - dnorm_mean - norm * dnorm_norm_mean);
            }
        }
    }

    /// out[t] = W in[t] + b with W stored as (OC x IC).
    static void matmul_forward(const std::vector<double>& in, const double* w, const double* b, std::size_t T,
                               std::size_t IC, std::size_t OC, std::vector<double>& out) {
        out.assign(T * OC, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double* x = in.data() + t * IC;
            double* y = out.data() + t * OC;
            for (std::size_t o = 0; o < OC; ++o) {
                const double* wr = w + o * IC;
                double s = b[o];
                for (std::size_t i = 0; i < IC; ++i) {
                    s += wr[i] * x[i];
                }
                y[o] = s;
            }
        }
    }

    static void matmul_backward(const std::vector<double>& dout, const std::vector<double>& in, const double* w,
                                std::size_t T, std::size_t IC, std::size_t OC, std::vector<double>& dinp,
                                double* dw, double* db) {
        for (std::size_t t = 0; t < T; ++t) {
            const double* x = in.data() + t * IC;
            const double* d = dout.data() + t * OC;
            double* dx = dinp.data() + t * IC;
            for (std::size_t o = 0; o < OC; ++o) {
                const double dv = d[o];
                if (dv == 0.0) {
                    continue;
                }
                const double* wr = w + o * IC;
                double* dwr = dw + o * IC;
                for (std::size_t i = 0; i < IC; ++i) {
                    dx[i] += wr[i] * dv;
                    dwr[i] += x[i] * dv;
                }
                db[o] += dv;
            }
        }
    }

    void attention_forward(const std::vector<double>& qkv, std::size_t T, std::vector<double>& att,
                           std::vector<double>& out) const {
        const std::size_t C = cfg_.d_model;
        const std::size_t H = cfg_.n_heads;
        const std::size_t hs = C / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
        att.assign(H * T * T, 0.0);
        out.assign(T * C, 0.0);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const double* q = qkv.data() + t * 3 * C + h * hs;
                double* a = att.data() + (h * T + t) * T;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    const double* k = qkv.data() + t2 * 3 * C + C + h * hs;
                    double s = 0.0;
                    for (std::size_t i = 0; i < hs; ++i) {
                        s += q[i] * k[i];
                    }
                    a[t2] = s * scale;
                    mx = std::max(mx, a[t2]);
                }
                double sum = 0.0;
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    a[t2] = std::exp(a[t2] - mx);
                    sum += a[t2];
                }
                double* y = out.data() + t * C + h * hs;
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    a[t2] /= sum;
                    const double* v = qkv.data() + t2 * 3 * C + 2 * C + h * hs;
                    for (std::size_t i = 0; i < hs; ++i) {
                        y[i] += a[t2] * v[i];
                    }
                }
            }
        }
    }

    void attention_backward(const std::vector<double>& dout, const std::vector<double>& qkv,
                            const std::vector<double>& att, std::size_t T, std::vector<double>& dqkv) const {
        const std::size_t C = cfg_.d_model;
        const std::size_t H = cfg_.n_heads;
        const std::size_t hs = C / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
        std::vector<double> datt(T);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const double* a = att.data() + (h * T + t) * T;
                const double* dy = dout.data() + t * C + h * hs;
                double dot = 0.0;
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    const double* v = qkv.data() + t2 * 3 * C + 2 * C + h * hs;
                    double* dv = dqkv.data() + t2 * 3 * C + 2 * C + h * hs;
                    double s = 0.0;
                    for (std::size_t i = 0; i < hs; ++i) {
                        s += dy[i] * v[i];
                        dv[i] += a[t2] * dy[i];
                    }
                    datt[t2] = s;
                    dot += a[t2] * s;
                }
                const double* q = qkv.data() + t * 3 * C + h * hs;
                double* dq = dqkv.data() + t * 3 * C + h * hs;
                for (std::size_t t2 = 0; t2 <= t; ++t2) {
                    const double dpre = a[t2] * (datt[t2] - dot) * scale;
                    if (dpre == 0.0) {
                        continue;
                    }
                    const double* k = qkv.data() + t2 * 3 * C + C + h * hs;
                    double* dk = dqkv.data() + t2 * 3 * C + C + h * hs;
                    for (std::size_t i = 0; i < hs; ++i) {
                        dq[i] += dpre * k[i];
                        dk[i] += dpre * q[i];
                    }
                }
            }
        }
    }

    TransformerConfig cfg_;
    Offsets off_;
    std::vector<double> params_;
};

}  // namespace kpig::lm
