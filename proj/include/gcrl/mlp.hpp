#pragma once

/// Feed-forward ReLU networks with reverse-mode gradients.
///
/// An Mlp is a chain of affine layers with ReLU after every layer except the
/// last. Forward passes record a tape of intermediates; gradients with respect
/// to the input and to the parameters are recovered by reverse accumulation
/// over that tape. A forward pass may stop early at a hidden layer, which is
/// how layer-selective representation features are extracted, and the tape
/// remembers how deep it went so the matching backward pass starts there.
///
/// Everything is double precision. The ReLU subgradient at exactly 0 is 0.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gcrl/core.hpp"

namespace gcrl {

struct Tape {
    Vec input;
    std::vector<Vec> pre;   // pre[l] = W_l * act[l-1] + b_l
    std::vector<Vec> act;   // act[l] = relu(pre[l]) for hidden l, pre[l] for the last layer
    int top = 0;            // number of layers this tape covers
};

struct BatchTape {
    Matrix input;              // one sample per row
    std::vector<Matrix> pre;
    std::vector<Matrix> act;
    int top = 0;
};

/// Parameter-shaped gradient container.
struct MlpGrads {
    std::vector<Matrix> dw;
    std::vector<Vec> db;

    void add_scaled(const MlpGrads& o, double c) {
        for (size_t l = 0; l < dw.size(); ++l) {
            for (size_t i = 0; i < dw[l].a.size(); ++i) dw[l].a[i] += c * o.dw[l].a[i];
            for (size_t i = 0; i < db[l].size(); ++i) db[l][i] += c * o.db[l][i];
        }
    }
    void scale(double c) {
        for (auto& w : dw)
            for (auto& x : w.a) x *= c;
        for (auto& b : db)
            for (auto& x : b) x *= c;
    }
};

class Mlp {
public:
    Mlp() = default;

    /// Seeded construction; weights and biases uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    /// With freeze_biases the biases start at zero and never move.
    static Mlp make(const std::vector<int>& dims, uint64_t seed, bool freeze_biases = false) {
        require(dims.size() >= 2, "Mlp::make: need at least one layer");
        Mlp net;
        net.seed_lineage_ = seed;
        net.biases_frozen_ = freeze_biases;
        Rng rng(seed);
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            const int in = dims[l], out = dims[l + 1];
            require(in > 0 && out > 0, "Mlp::make: nonpositive dim at layer ", l + 1);
            Matrix w(out, in);
            const double k = 1.0 / std::sqrt(static_cast<double>(in));
            for (auto& x : w.a) x = rng.uniform(-k, k);
            Vec b(out, 0.0);
            if (!freeze_biases)
                for (auto& x : b) x = rng.uniform(-k, k);
            net.w_.push_back(std::move(w));
            net.b_.push_back(std::move(b));
        }
        net.refresh_transposes();
        return net;
    }

    int depth() const { return static_cast<int>(w_.size()); }
    int in_dim() const { return w_.front().cols; }
    int out_dim() const { return w_.back().rows; }
    int layer_out_dim(int l) const { return w_[l].rows; }
    bool biases_frozen() const { return biases_frozen_; }
    uint64_t seed_lineage() const { return seed_lineage_; }

    const Matrix& weights(int l) const { return w_[l]; }
    const Vec& biases(int l) const { return b_[l]; }
    Matrix& mutable_weights(int l) { return w_[l]; }
    Vec& mutable_biases(int l) { return b_[l]; }

    /// Must be called after touching parameters directly.
    void refresh_transposes() {
        wt_.clear();
        wt_.reserve(w_.size());
        for (const auto& w : w_) wt_.push_back(transpose(w));
    }

    MlpGrads zero_grads() const {
        MlpGrads g;
        for (size_t l = 0; l < w_.size(); ++l) {
            g.dw.emplace_back(w_[l].rows, w_[l].cols);
            g.db.emplace_back(b_[l].size(), 0.0);
        }
        return g;
    }

    /// Forward pass through the first `up_to` layers (default: all of them).
    /// The returned tape's feature vector carries ReLU when it stops at a
    /// hidden layer and is the raw affine output at the final layer.
    Tape forward(const Vec& input, int up_to = -1) const {
        const int top = up_to < 0 ? depth() : up_to;
        require(top >= 1 && top <= depth(), "Mlp::forward: bad layer index ", up_to);
        require(static_cast<int>(input.size()) == in_dim(), "Mlp::forward: layer 1 expects input dim ",
                in_dim(), ", got ", input.size());
        require(gcrl::all_finite(input), "Mlp::forward: non-finite input");
        Tape t;
        t.input = input;
        t.top = top;
        const Vec* cur = &t.input;
        for (int l = 0; l < top; ++l) {
            Vec pre = matvec(w_[l], *cur);
            for (size_t i = 0; i < pre.size(); ++i) pre[i] += b_[l][i];
            Vec act = pre;
            if (l < depth() - 1)
                for (auto& x : act) x = x > 0.0 ? x : 0.0;
            t.pre.push_back(std::move(pre));
            t.act.push_back(std::move(act));
            cur = &t.act.back();
        }
        return t;
    }

    /// Features the tape stopped at (output for a full pass).
    static const Vec& features(const Tape& t) { return t.act[t.top - 1]; }

    Vec output(const Vec& input) const { return features(forward(input)); }

    /// d(features . cotangent)/d(input) by reverse accumulation over the tape.
    Vec backward_input(const Tape& t, const Vec& cotangent) const {
        Vec d = seed_cotangent(t, cotangent);
        for (int l = t.top - 1;; --l) {
            Vec dx = matvec_t(w_[l], d);
            if (l == 0) return dx;
            mask_relu(dx, t.pre[l - 1]);
            d = std::move(dx);
        }
    }

    /// Parameter gradients of (features . cotangent). Layers above the tape's
    /// top stay zero.
    MlpGrads backward_params(const Tape& t, const Vec& cotangent) const {
        MlpGrads g = zero_grads();
        accumulate_params(t, cotangent, g, nullptr);
        return g;
    }

    /// One reverse sweep filling both parameter grads (accumulated into g) and,
    /// when grad_input is non-null, the input gradient.
    void accumulate_params(const Tape& t, const Vec& cotangent, MlpGrads& g, Vec* grad_input) const {
        Vec d = seed_cotangent(t, cotangent);
        for (int l = t.top - 1;; --l) {
            const Vec& below = l == 0 ? t.input : t.act[l - 1];
            for (int i = 0; i < w_[l].rows; ++i) {
                const double di = d[i];
                if (di == 0.0) continue;
                double* grow = g.dw[l].row(i);
                for (int j = 0; j < w_[l].cols; ++j) grow[j] += di * below[j];
                g.db[l][i] += di;
            }
            Vec dx = matvec_t(w_[l], d);
            if (l == 0) {
                if (grad_input) *grad_input = std::move(dx);
                return;
            }
            mask_relu(dx, t.pre[l - 1]);
            d = std::move(dx);
        }
    }

    // -- batched variants (one sample per row) ------------------------------

    BatchTape forward_batch(const Matrix& input, int up_to = -1) const {
        const int top = up_to < 0 ? depth() : up_to;
        require(top >= 1 && top <= depth(), "Mlp::forward_batch: bad layer index ", up_to);
        require(input.cols == in_dim(), "Mlp::forward_batch: layer 1 expects input dim ",
                in_dim(), ", got ", input.cols);
        BatchTape t;
        t.input = input;
        t.top = top;
        const Matrix* cur = &t.input;
        for (int l = 0; l < top; ++l) {
            Matrix pre(input.rows, w_[l].rows);
            for (int i = 0; i < pre.rows; ++i) std::copy(b_[l].begin(), b_[l].end(), pre.row(i));
            gemm_ab(*cur, wt_[l], pre);
            Matrix act = pre;
            if (l < depth() - 1)
                for (auto& x : act.a) x = x > 0.0 ? x : 0.0;
            t.pre.push_back(std::move(pre));
            t.act.push_back(std::move(act));
            cur = &t.act.back();
        }
        return t;
    }

    static const Matrix& features(const BatchTape& t) { return t.act[t.top - 1]; }

    /// Reverse sweep over a batch tape. Parameter grads sum over rows and are
    /// accumulated into g when non-null; grad_input gets one row per sample.
    void backward_batch(const BatchTape& t, const Matrix& cotangent, MlpGrads* g,
                        Matrix* grad_input) const {
        Matrix d = cotangent;
        if (t.top < depth()) mask_relu_batch(d, t.pre[t.top - 1]);
        for (int l = t.top - 1;; --l) {
            if (g) {
                const Matrix& below = l == 0 ? t.input : t.act[l - 1];
                gemm_atb(d, below, g->dw[l]);
                for (int r = 0; r < d.rows; ++r) {
                    const double* drow = d.row(r);
                    for (int j = 0; j < d.cols; ++j) g->db[l][j] += drow[j];
                }
            }
            if (l == 0) {
                if (grad_input) {
                    grad_input->rows = d.rows;
                    grad_input->cols = w_[0].cols;
                    grad_input->a.assign(static_cast<size_t>(d.rows) * w_[0].cols, 0.0);
                    gemm_ab(d, w_[0], *grad_input);
                }
                return;
            }
            Matrix dx(d.rows, w_[l].cols);
            gemm_ab(d, w_[l], dx);
            mask_relu_batch(dx, t.pre[l - 1]);
            d = std::move(dx);
        }
    }

    /// Copy of the first `l` layers as a standalone net (its last layer is
    /// then linear, i.e. it reproduces this net's pre-activation at layer l).
    Mlp prefix(int l) const {
        require(l >= 1 && l <= depth(), "Mlp::prefix: bad layer index ", l);
        Mlp net;
        net.seed_lineage_ = seed_lineage_;
        net.biases_frozen_ = biases_frozen_;
        net.w_.assign(w_.begin(), w_.begin() + l);
        net.b_.assign(b_.begin(), b_.begin() + l);
        net.refresh_transposes();
        return net;
    }

    void save(std::ostream& os) const {
        BinWriter w(os);
        w.u32(kMagic);
        w.u32(1);
        w.u64(seed_lineage_);
        w.u32(biases_frozen_ ? 1 : 0);
        w.u32(static_cast<uint32_t>(depth()));
        w.u32(static_cast<uint32_t>(in_dim()));
        for (const auto& m : w_) w.u32(static_cast<uint32_t>(m.rows));
        for (size_t l = 0; l < w_.size(); ++l) {
            w.u32(static_cast<uint32_t>(w_[l].rows));
            w.u32(static_cast<uint32_t>(w_[l].cols));
            for (double x : w_[l].a) w.f64(x);
            w.vec(b_[l]);
        }
    }

    static Mlp load(std::istream& is) {
        BinReader r(is);
        require(r.u32() == kMagic, "Mlp::load: bad magic");
        require(r.u32() == 1, "Mlp::load: unsupported version");
        Mlp net;
        net.seed_lineage_ = r.u64();
        net.biases_frozen_ = r.u32() != 0;
        const uint32_t depth = r.u32();
        r.u32();  // input dim, implied by layer shapes
        for (uint32_t l = 0; l < depth; ++l) r.u32();
        for (uint32_t l = 0; l < depth; ++l) {
            const int rows = static_cast<int>(r.u32());
            const int cols = static_cast<int>(r.u32());
            Matrix m(rows, cols);
            for (auto& x : m.a) x = r.f64();
            net.w_.push_back(std::move(m));
            net.b_.push_back(r.vec(rows));
        }
        net.refresh_transposes();
        return net;
    }

    bool same_shape(const Mlp& o) const {
        if (depth() != o.depth()) return false;
        for (int l = 0; l < depth(); ++l)
            if (w_[l].rows != o.w_[l].rows || w_[l].cols != o.w_[l].cols) return false;
        return true;
    }

private:
    static constexpr uint32_t kMagic = 0x504c4d47;  // "GMLP"

    Vec seed_cotangent(const Tape& t, const Vec& cotangent) const {
        require(static_cast<int>(cotangent.size()) == w_[t.top - 1].rows,
                "Mlp::backward: cotangent dim mismatch at layer ", t.top);
        Vec d = cotangent;
        if (t.top < depth()) mask_relu(d, t.pre[t.top - 1]);
        return d;
    }

    static void mask_relu(Vec& d, const Vec& pre) {
        for (size_t i = 0; i < d.size(); ++i)
            if (pre[i] <= 0.0) d[i] = 0.0;
    }
    static void mask_relu_batch(Matrix& d, const Matrix& pre) {
        for (size_t i = 0; i < d.a.size(); ++i)
            if (pre.a[i] <= 0.0) d.a[i] = 0.0;
    }

    std::vector<Matrix> w_;
    std::vector<Matrix> wt_;  // cached transposes for the batched forward
    std::vector<Vec> b_;
    bool biases_frozen_ = false;
    uint64_t seed_lineage_ = 0;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators shaped like one Mlp's parameters.
class AdamState {
public:
    AdamState() = default;
    AdamState(const Mlp& net, AdamConfig cfg) : cfg_(cfg) {
        for (int l = 0; l < net.depth(); ++l) {
            mw_.emplace_back(net.weights(l).rows, net.weights(l).cols);
            vw_.emplace_back(net.weights(l).rows, net.weights(l).cols);
            mb_.emplace_back(net.biases(l).size(), 0.0);
            vb_.emplace_back(net.biases(l).size(), 0.0);
        }
    }

    long step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.lr = lr; }

    /// Standard bias-corrected Adam update in place.
    void step(Mlp& net, const MlpGrads& g) {
        require(static_cast<int>(g.dw.size()) == net.depth(), "adam_step: grads/net depth mismatch");
        ++step_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (int l = 0; l < net.depth(); ++l) {
            check_block(g.dw[l].a, "w", l);
            update(net.mutable_weights(l).a, g.dw[l].a, mw_[l].a, vw_[l].a, c1, c2);
            if (!net.biases_frozen()) {
                check_block(g.db[l], "b", l);
                update(net.mutable_biases(l), g.db[l], mb_[l], vb_[l], c1, c2);
            }
        }
        net.refresh_transposes();
    }

private:
    static void check_block(const Vec& g, const char* kind, int layer) {
        for (double x : g)
            if (!std::isfinite(x))
                throw NumericalError(cat("adam_step: non-finite gradient in block ", kind, "[", layer, "]"));
    }

    template <class V>
    void update(V& p, const V& g, V& m, V& v, double c1, double c2) {
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }

    AdamConfig cfg_;
    long step_ = 0;
    std::vector<Matrix> mw_, vw_;
    std::vector<Vec> mb_, vb_;
};

/// target <- (1 - tau) * target + tau * online
inline void polyak_update(Mlp& target, const Mlp& online, double tau) {
    require(target.same_shape(online), "polyak_update: shape mismatch");
    for (int l = 0; l < target.depth(); ++l) {
        auto& tw = target.mutable_weights(l).a;
        const auto& ow = online.weights(l).a;
        for (size_t i = 0; i < tw.size(); ++i) tw[i] = (1.0 - tau) * tw[i] + tau * ow[i];
        auto& tb = target.mutable_biases(l);
        const auto& ob = online.biases(l);
        for (size_t i = 0; i < tb.size(); ++i) tb[i] = (1.0 - tau) * tb[i] + tau * ob[i];
    }
    target.refresh_transposes();
}

}  // namespace gcrl
