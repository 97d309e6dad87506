#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "types.hpp"

namespace sectordiff {

// ---------------------------------------------------------------------------
// parameter layout

struct ParamSegment {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
};

// Named, gap-free partition of the flat parameter vector.
struct ParamLayout {
    std::vector<ParamSegment> segments;
    size_t total = 0;

    size_t add(std::string name, size_t count) {
        const size_t off = total;
        segments.push_back({std::move(name), off, count});
        total += count;
        return off;
    }

    const ParamSegment& find(const std::string& name) const {
        for (const ParamSegment& s : segments)
            if (s.name == name) return s;
        fail("layout-error", "no parameter segment named " + name);
    }
};

// ---------------------------------------------------------------------------
// primitive layers (each pairs a forward with an exact reverse-mode backward)

// 3x3 convolution, zero padding 1, stride 1 or 2. Weights are laid out
// [out_ch][in_ch][3][3].
inline void conv3x3_forward(const Tensor3& x, const double* w, const double* b, int out_ch,
                            int stride, Tensor3& y) {
    const int oh = (x.h - 1) / stride + 1;
    const int ow = (x.w - 1) / stride + 1;
    y = Tensor3(out_ch, oh, ow);
    for (int oc = 0; oc < out_ch; ++oc) {
        double* yp = y.plane(oc);
        for (size_t i = 0; i < size_t(oh) * ow; ++i) yp[i] = b[oc];
        for (int ic = 0; ic < x.ch; ++ic) {
            const double* xp = x.plane(ic);
            const double* wk = w + (size_t(oc) * x.ch + ic) * 9;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * stride - 1;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix0 = ox * stride - 1;
                    double acc = 0.0;
                    for (int dy = 0; dy < 3; ++dy) {
                        const int iy = iy0 + dy;
                        if (iy < 0 || iy >= x.h) continue;
                        const double* row = xp + size_t(iy) * x.w;
                        for (int dx = 0; dx < 3; ++dx) {
                            const int ix = ix0 + dx;
                            if (ix < 0 || ix >= x.w) continue;
                            acc += wk[dy * 3 + dx] * row[ix];
                        }
                    }
                    yp[size_t(oy) * ow + ox] += acc;
                }
            }
        }
    }
}

inline void conv3x3_backward(const Tensor3& x, const double* w, const Tensor3& gy, int stride,
                             Tensor3& gx, double* gw, double* gb) {
    gx = Tensor3(x.ch, x.h, x.w);
    for (int oc = 0; oc < gy.ch; ++oc) {
        const double* gyp = gy.plane(oc);
        double acc_b = 0.0;
        for (size_t i = 0; i < size_t(gy.h) * gy.w; ++i) acc_b += gyp[i];
        gb[oc] += acc_b;
        for (int ic = 0; ic < x.ch; ++ic) {
            const double* xp = x.plane(ic);
            double* gxp = gx.plane(ic);
            const double* wk = w + (size_t(oc) * x.ch + ic) * 9;
            double* gwk = gw + (size_t(oc) * x.ch + ic) * 9;
            for (int oy = 0; oy < gy.h; ++oy) {
                const int iy0 = oy * stride - 1;
                for (int ox = 0; ox < gy.w; ++ox) {
                    const int ix0 = ox * stride - 1;
                    const double g = gyp[size_t(oy) * gy.w + ox];
                    for (int dy = 0; dy < 3; ++dy) {
                        const int iy = iy0 + dy;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int dx = 0; dx < 3; ++dx) {
                            const int ix = ix0 + dx;
                            if (ix < 0 || ix >= x.w) continue;
                            gwk[dy * 3 + dx] += g * xp[size_t(iy) * x.w + ix];
                            gxp[size_t(iy) * x.w + ix] += g * wk[dy * 3 + dx];
                        }
                    }
                }
            }
        }
    }
}

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

// Feature-wise modulation: y[c] = x[c] * (1 + scale[c]) + shift[c], with
// (scale, shift) produced per call by a linear head on the condition vector.
// The +1 keeps the block near-identity at init.
inline void film_forward(const Tensor3& x, const double* scale, const double* shift, Tensor3& y) {
    y = Tensor3(x.ch, x.h, x.w);
    const size_t plane = size_t(x.h) * x.w;
    for (int c = 0; c < x.ch; ++c) {
        const double* xp = x.plane(c);
        double* yp = y.plane(c);
        const double s = 1.0 + scale[c], t = shift[c];
        for (size_t i = 0; i < plane; ++i) yp[i] = xp[i] * s + t;
    }
}

inline void linear_forward(const double* w, const double* b, const double* x, int out_dim,
                           int in_dim, double* y) {
    for (int o = 0; o < out_dim; ++o) {
        double acc = b ? b[o] : 0.0;
        const double* row = w + size_t(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

inline void linear_backward(const double* w, const double* x, const double* gy, int out_dim,
                            int in_dim, double* gw, double* gb, double* gx) {
    if (gx)
        for (int i = 0; i < in_dim; ++i) gx[i] = 0.0;
    for (int o = 0; o < out_dim; ++o) {
        const double g = gy[o];
        if (gb) gb[o] += g;
        const double* row = w + size_t(o) * in_dim;
        double* grow = gw + size_t(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) {
            grow[i] += g * x[i];
            if (gx) gx[i] += g * row[i];
        }
    }
}

inline void nearest_up2_forward(const Tensor3& x, Tensor3& y) {
    y = Tensor3(x.ch, x.h * 2, x.w * 2);
    for (int c = 0; c < x.ch; ++c) {
        const double* xp = x.plane(c);
        double* yp = y.plane(c);
        for (int oy = 0; oy < y.h; ++oy) {
            const double* row = xp + size_t(oy / 2) * x.w;
            for (int ox = 0; ox < y.w; ++ox) yp[size_t(oy) * y.w + ox] = row[ox / 2];
        }
    }
}

inline void nearest_up2_backward(const Tensor3& gy, Tensor3& gx) {
    gx = Tensor3(gy.ch, gy.h / 2, gy.w / 2);
    for (int c = 0; c < gy.ch; ++c) {
        const double* gyp = gy.plane(c);
        double* gxp = gx.plane(c);
        for (int oy = 0; oy < gy.h; ++oy)
            for (int ox = 0; ox < gy.w; ++ox)
                gxp[size_t(oy / 2) * gx.w + ox / 2] += gyp[size_t(oy) * gy.w + ox];
    }
}

inline Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
    require(a.h == b.h && a.w == b.w, "shape-mismatch",
            "concat: " + a.shape_str() + " vs " + b.shape_str());
    Tensor3 y(a.ch + b.ch, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + ptrdiff_t(a.v.size()));
    return y;
}

// Sinusoidal position code for the integer step index.
inline void time_code(int t, int freqs, double* out) {
    for (int k = 0; k < freqs; ++k) {
        const double rate = std::exp(-std::log(10000.0) * k / std::max(1, freqs - 1));
        out[2 * k] = std::sin(t * rate);
        out[2 * k + 1] = std::cos(t * rate);
    }
}

// ---------------------------------------------------------------------------
// network

struct NetConfig {
    int in_channels = 3;   // data channels plus 2 flow channels
    int out_channels = 1;  // predicted noise channels
    int base_width = 12;
    int mid_depth = 1;  // conv blocks at the bottleneck resolution
    int emb_dim = 48;
    int classes = 3;     // embedding table gets one extra null row
    int time_freqs = 16;  // sinusoidal code dimension = 2 * time_freqs
    double flow_scale = 8.0;  // divisor applied to flow inputs (≈ H/2)
};

namespace detail {

struct BlockDef {
    int in_ch = 0, out_ch = 0, stride = 1;
    size_t w = 0, b = 0, fw = 0, fb = 0;  // conv kernel/bias, head weight/bias
};

struct BlockWs {
    Tensor3 in, conv, film, act;
    std::vector<double> scale_shift;
};

}  // namespace detail

struct NetWorkspace {
    std::vector<double> sin_code, mlp1_pre, mlp1_act, cond;
    std::vector<detail::BlockWs> blocks;
    Tensor3 input;
    int t = 0, class_row = 0;
    bool flow_null = false;
};

// Compact convolutional encoder–decoder with two downsampling stages.
// Every conv block is modulated per-channel by a linear head on the shared
// condition vector (time code MLP + class embedding + optional flow-null
// code); the temporal condition itself enters as extra input channels.
class DenoiserNet {
public:
    explicit DenoiserNet(NetConfig cfg) : cfg_(cfg) {
        require(cfg.in_channels > cfg.out_channels && cfg.out_channels >= 1, "invalid-range",
                "need at least one data channel plus the flow channels");
        require(cfg.base_width >= 2, "invalid-range", "base width too small");
        require(cfg.emb_dim >= 4 && cfg.time_freqs >= 2, "invalid-range",
                "embedding dimensions too small");
        require(cfg.classes >= 1, "invalid-range", "need at least one class");
        require(cfg.flow_scale > 0.0, "invalid-range", "flow scale must be positive");
        require(cfg.mid_depth >= 1 && cfg.mid_depth <= 8, "invalid-range",
                "bottleneck depth must be in [1, 8]");
        const int f = cfg.base_width, e = cfg.emb_dim, dt = 2 * cfg.time_freqs;

        layout_.add("time_mlp1.w", size_t(e) * dt);
        layout_.add("time_mlp1.b", size_t(e));
        layout_.add("time_mlp2.w", size_t(e) * e);
        layout_.add("time_mlp2.b", size_t(e));
        layout_.add("class_emb", size_t(cfg.classes + 1) * e);
        layout_.add("flow_null_emb", size_t(e));

        auto add_block = [&](const std::string& base, int in_ch, int out_ch, int stride) {
            detail::BlockDef d;
            d.in_ch = in_ch;
            d.out_ch = out_ch;
            d.stride = stride;
            d.w = layout_.add(base + ".conv.w", size_t(out_ch) * in_ch * 9);
            d.b = layout_.add(base + ".conv.b", size_t(out_ch));
            d.fw = layout_.add(base + ".film.w", size_t(2 * out_ch) * e);
            d.fb = layout_.add(base + ".film.b", size_t(2 * out_ch));
            blocks_.push_back(d);
        };
        add_block("enc0", cfg.in_channels, f, 1);  // full res
        add_block("enc1", f, 2 * f, 2);            // half res
        add_block("enc2", 2 * f, 2 * f, 1);
        add_block("enc3", 2 * f, 4 * f, 2);  // quarter res
        for (int k = 0; k < cfg.mid_depth; ++k) add_block("mid" + std::to_string(k), 4 * f, 4 * f, 1);
        up1_ = int(blocks_.size());
        add_block("up1", 4 * f + 2 * f, 2 * f, 1);  // upsampled bottleneck ++ enc2 skip
        add_block("up2", 2 * f + f, f, 1);          // upsampled up1 ++ enc0 skip
        out_w_ = layout_.add("out.w", size_t(cfg.out_channels) * f * 9);
        out_b_ = layout_.add("out.b", size_t(cfg.out_channels));
    }

    const NetConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    size_t param_count() const { return layout_.total; }

    // Truncated normal (std 0.02, clipped at two sigma) for weights and
    // embeddings, zeros for biases. Deterministic in the seed.
    std::vector<double> init_params(uint64_t seed) const {
        std::vector<double> theta(layout_.total, 0.0);
        Rng rng(seed, "init");
        for (const ParamSegment& s : layout_.segments) {
            const bool is_bias = s.name.ends_with(".b");
            if (is_bias) continue;
            for (size_t i = 0; i < s.count; ++i) {
                double z;
                do {
                    z = rng.normal();
                } while (std::fabs(z) > 2.0);
                theta[s.offset + i] = 0.02 * z;
            }
        }
        return theta;
    }

    // t is the schedule step index; class_row selects the embedding row
    // (row `classes` is the null label); flow_null adds the learned
    // null-temporal code to the condition vector.
    Tensor3 forward(const std::vector<double>& theta, const Tensor3& input, int t, int class_row,
                    bool flow_null, NetWorkspace* ws_out = nullptr) const {
        require(theta.size() == layout_.total, "shape-mismatch",
                "parameter vector has wrong length");
        require(input.ch == cfg_.in_channels, "shape-mismatch",
                "input has " + std::to_string(input.ch) + " channels, expected " +
                    std::to_string(cfg_.in_channels));
        require(input.h % 4 == 0 && input.w % 4 == 0 && input.h >= 8 && input.w >= 8,
                "shape-mismatch", "spatial size must be a multiple of 4 and at least 8");
        require(t >= 0, "index-out-of-range", "negative step index");
        require(class_row >= 0 && class_row <= cfg_.classes, "condition-mismatch",
                "class row out of range");

        NetWorkspace local;
        NetWorkspace& ws = ws_out ? *ws_out : local;
        ws.t = t;
        ws.class_row = class_row;
        ws.flow_null = flow_null;
        ws.input = input;

        const int e = cfg_.emb_dim, dt = 2 * cfg_.time_freqs;
        const double* th = theta.data();
        ws.sin_code.resize(size_t(dt));
        time_code(t, cfg_.time_freqs, ws.sin_code.data());
        ws.mlp1_pre.resize(size_t(e));
        linear_forward(th + layout_.segments[0].offset, th + layout_.segments[1].offset,
                       ws.sin_code.data(), e, dt, ws.mlp1_pre.data());
        ws.mlp1_act.resize(size_t(e));
        for (int i = 0; i < e; ++i) ws.mlp1_act[size_t(i)] = silu(ws.mlp1_pre[size_t(i)]);
        ws.cond.resize(size_t(e));
        linear_forward(th + layout_.segments[2].offset, th + layout_.segments[3].offset,
                       ws.mlp1_act.data(), e, e, ws.cond.data());
        const double* cls = th + layout_.segments[4].offset + size_t(class_row) * e;
        const double* nul = th + layout_.segments[5].offset;
        for (int i = 0; i < e; ++i) {
            ws.cond[size_t(i)] += cls[i];
            if (flow_null) ws.cond[size_t(i)] += nul[i];
        }

        ws.blocks.resize(blocks_.size());
        block_forward(0, theta, ws, input);
        block_forward(1, theta, ws, ws.blocks[0].act);
        block_forward(2, theta, ws, ws.blocks[1].act);
        block_forward(3, theta, ws, ws.blocks[2].act);
        for (int k = 4; k < up1_; ++k) block_forward(k, theta, ws, ws.blocks[size_t(k) - 1].act);
        Tensor3 up;
        nearest_up2_forward(ws.blocks[size_t(up1_) - 1].act, up);
        block_forward(up1_, theta, ws, concat_channels(up, ws.blocks[2].act));
        nearest_up2_forward(ws.blocks[size_t(up1_)].act, up);
        block_forward(up1_ + 1, theta, ws, concat_channels(up, ws.blocks[0].act));

        Tensor3 out;
        conv3x3_forward(ws.blocks.back().act, th + out_w_, th + out_b_, cfg_.out_channels, 1,
                        out);
        require(all_finite(out), "non-finite-output", "denoiser produced a non-finite value");
        return out;
    }

    // Accumulates d<loss>/d<theta> into grad, given the cotangent of the
    // output. The workspace must come from a forward pass over the same
    // (theta, inputs).
    void backward(const std::vector<double>& theta, const NetWorkspace& ws, const Tensor3& g_out,
                  std::vector<double>& grad) const {
        require(grad.size() == layout_.total, "shape-mismatch",
                "gradient vector has wrong length");
        require(g_out.ch == cfg_.out_channels && g_out.h == ws.blocks.back().act.h &&
                    g_out.w == ws.blocks.back().act.w,
                "shape-mismatch", "output cotangent has wrong shape");
        const int e = cfg_.emb_dim, dt = 2 * cfg_.time_freqs;
        const double* th = theta.data();
        double* gr = grad.data();

        std::vector<double> g_cond(size_t(e), 0.0);
        Tensor3 g_last;
        conv3x3_backward(ws.blocks.back().act, th + out_w_, g_out, 1, g_last, gr + out_w_,
                         gr + out_b_);

        Tensor3 g_u2;
        block_backward(up1_ + 1, theta, ws, g_last, grad, g_cond, g_u2);
        Tensor3 g_up5, g_skip0;
        split_channels(g_u2, ws.blocks[size_t(up1_)].act.ch, g_up5, g_skip0);
        Tensor3 g_act5;
        nearest_up2_backward(g_up5, g_act5);

        Tensor3 g_u1;
        block_backward(up1_, theta, ws, g_act5, grad, g_cond, g_u1);
        Tensor3 g_up4, g_skip2;
        split_channels(g_u1, ws.blocks[size_t(up1_) - 1].act.ch, g_up4, g_skip2);
        Tensor3 g_mid;
        nearest_up2_backward(g_up4, g_mid);

        for (int k = up1_ - 1; k >= 4; --k) {
            Tensor3 g_prev;
            block_backward(k, theta, ws, g_mid, grad, g_cond, g_prev);
            g_mid = std::move(g_prev);
        }
        Tensor3 g_act2, g_act1, g_act0, g_in;
        block_backward(3, theta, ws, g_mid, grad, g_cond, g_act2);
        add_inplace(g_act2, g_skip2);
        block_backward(2, theta, ws, g_act2, grad, g_cond, g_act1);
        block_backward(1, theta, ws, g_act1, grad, g_cond, g_act0);
        add_inplace(g_act0, g_skip0);
        block_backward(0, theta, ws, g_act0, grad, g_cond, g_in);

        // condition path
        double* g_cls = gr + layout_.segments[4].offset + size_t(ws.class_row) * e;
        double* g_nul = gr + layout_.segments[5].offset;
        for (int i = 0; i < e; ++i) {
            g_cls[i] += g_cond[size_t(i)];
            if (ws.flow_null) g_nul[i] += g_cond[size_t(i)];
        }
        std::vector<double> g_mlp1act(size_t(e), 0.0);
        linear_backward(th + layout_.segments[2].offset, ws.mlp1_act.data(), g_cond.data(), e, e,
                        gr + layout_.segments[2].offset, gr + layout_.segments[3].offset,
                        g_mlp1act.data());
        std::vector<double> g_mlp1pre(size_t(e), 0.0);
        for (int i = 0; i < e; ++i)
            g_mlp1pre[size_t(i)] = g_mlp1act[size_t(i)] * silu_grad(ws.mlp1_pre[size_t(i)]);
        linear_backward(th + layout_.segments[0].offset, ws.sin_code.data(), g_mlp1pre.data(), e,
                        dt, gr + layout_.segments[0].offset, gr + layout_.segments[1].offset,
                        nullptr);
    }

private:
    static void add_inplace(Tensor3& a, const Tensor3& b) {
        require_same_shape(a, b, "gradient accumulation");
        for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
    }

    static void split_channels(const Tensor3& g, int first_ch, Tensor3& ga, Tensor3& gb) {
        ga = Tensor3(first_ch, g.h, g.w);
        gb = Tensor3(g.ch - first_ch, g.h, g.w);
        const size_t na = ga.v.size();
        std::copy(g.v.begin(), g.v.begin() + ptrdiff_t(na), ga.v.begin());
        std::copy(g.v.begin() + ptrdiff_t(na), g.v.end(), gb.v.begin());
    }

    void block_forward(int k, const std::vector<double>& theta, NetWorkspace& ws,
                       Tensor3 input) const {
        const detail::BlockDef& d = blocks_[size_t(k)];
        detail::BlockWs& b = ws.blocks[size_t(k)];
        require(input.ch == d.in_ch, "shape-mismatch", "block input channel mismatch");
        b.in = std::move(input);
        const double* th = theta.data();
        conv3x3_forward(b.in, th + d.w, th + d.b, d.out_ch, d.stride, b.conv);
        b.scale_shift.resize(size_t(2 * d.out_ch));
        linear_forward(th + d.fw, th + d.fb, ws.cond.data(), 2 * d.out_ch, cfg_.emb_dim,
                       b.scale_shift.data());
        film_forward(b.conv, b.scale_shift.data(), b.scale_shift.data() + d.out_ch, b.film);
        b.act = Tensor3(b.film.ch, b.film.h, b.film.w);
        for (size_t i = 0; i < b.film.v.size(); ++i) b.act.v[i] = silu(b.film.v[i]);
    }

    void block_backward(int k, const std::vector<double>& theta, const NetWorkspace& ws,
                        const Tensor3& g_act, std::vector<double>& grad,
                        std::vector<double>& g_cond, Tensor3& g_in) const {
        const detail::BlockDef& d = blocks_[size_t(k)];
        const detail::BlockWs& b = ws.blocks[size_t(k)];
        const double* th = theta.data();
        double* gr = grad.data();

        Tensor3 g_film(b.film.ch, b.film.h, b.film.w);
        for (size_t i = 0; i < g_film.v.size(); ++i)
            g_film.v[i] = g_act.v[i] * silu_grad(b.film.v[i]);

        // film: y = conv * (1 + scale[c]) + shift[c]
        Tensor3 g_conv(b.conv.ch, b.conv.h, b.conv.w);
        std::vector<double> g_head(size_t(2 * d.out_ch), 0.0);
        const size_t plane = size_t(b.conv.h) * b.conv.w;
        for (int c = 0; c < d.out_ch; ++c) {
            const double s = 1.0 + b.scale_shift[size_t(c)];
            const double* gf = g_film.plane(c);
            const double* cv = b.conv.plane(c);
            double* gc = g_conv.plane(c);
            double acc_scale = 0.0, acc_shift = 0.0;
            for (size_t i = 0; i < plane; ++i) {
                gc[i] = gf[i] * s;
                acc_scale += gf[i] * cv[i];
                acc_shift += gf[i];
            }
            g_head[size_t(c)] = acc_scale;
            g_head[size_t(d.out_ch + c)] = acc_shift;
        }
        std::vector<double> g_cond_local(size_t(cfg_.emb_dim), 0.0);
        linear_backward(th + d.fw, ws.cond.data(), g_head.data(), 2 * d.out_ch, cfg_.emb_dim,
                        gr + d.fw, gr + d.fb, g_cond_local.data());
        for (int i = 0; i < cfg_.emb_dim; ++i) g_cond[size_t(i)] += g_cond_local[size_t(i)];

        conv3x3_backward(b.in, th + d.w, g_conv, d.stride, g_in, gr + d.w, gr + d.b);
    }

    NetConfig cfg_;
    ParamLayout layout_;
    std::vector<detail::BlockDef> blocks_;
    int up1_ = 0;  // index of the first decoder block
    size_t out_w_ = 0, out_b_ = 0;
};

// ---------------------------------------------------------------------------
// conditioned noise prediction

// Runs the network on one frame: the frame's flow field (zeroed when the
// temporal condition is null) is normalized and concatenated as input
// channels, the class label picks its embedding row (the extra row is the
// semantic null).
inline Tensor3 predict_eps(const DenoiserNet& net, const std::vector<double>& theta,
                           const Tensor3& x_t, int t, const Tensor3& flow, bool flow_null,
                           const SemanticCond& c, NetWorkspace* ws = nullptr) {
    const NetConfig& cfg = net.config();
    require(x_t.ch == cfg.out_channels, "shape-mismatch",
            "frame has " + std::to_string(x_t.ch) + " channels, expected " +
                std::to_string(cfg.out_channels));
    require(cfg.in_channels == cfg.out_channels + 2, "shape-mismatch",
            "network not configured for frame + flow input");
    require(flow.ch == 2 && flow.h == x_t.h && flow.w == x_t.w, "shape-mismatch",
            "flow field shape " + flow.shape_str() + " does not match frame");
    if (!c.null_flag)
        require(c.class_id >= 0 && c.class_id < cfg.classes, "condition-mismatch",
                "class id out of range");

    Tensor3 input(cfg.in_channels, x_t.h, x_t.w);
    std::copy(x_t.v.begin(), x_t.v.end(), input.v.begin());
    if (!flow_null) {
        const size_t plane = size_t(x_t.h) * x_t.w;
        double* fx = input.plane(cfg.out_channels);
        double* fy = input.plane(cfg.out_channels + 1);
        const double* sx = flow.plane(0);
        const double* sy = flow.plane(1);
        for (size_t i = 0; i < plane; ++i) {
            fx[i] = sx[i] / cfg.flow_scale;
            fy[i] = sy[i] / cfg.flow_scale;
        }
    }
    const int row = c.null_flag ? cfg.classes : c.class_id;
    return net.forward(theta, input, t, row, flow_null, ws);
}

// Classifier-free training-time label dropout: the temporal and semantic
// labels are independently replaced by their nulls, each with probability
// p_drop (temporal first, then semantic, so the draw order is fixed).
inline std::pair<TemporalCond, SemanticCond> drop_conditions(Rng& rng, TemporalCond y,
                                                             SemanticCond c, double p_drop) {
    require(p_drop >= 0.0 && p_drop < 1.0, "invalid-range", "p_drop must be in [0,1)");
    if (p_drop > 0.0) {
        if (rng.uniform() < p_drop) y.null_flag = true;
        if (rng.uniform() < p_drop) c = SemanticCond::null();
    }
    return {std::move(y), std::move(c)};
}

}  // namespace sectordiff
