#include "ieces/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace ieces {

namespace {

FloatMode g_mode = FloatMode::f32;
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

void round_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_3d(const ValuePtr& v, const char* who) {
    if (v->shape.size() != 3) fail(std::string(who) + ": expected C x H x W input");
}

}  // namespace

FloatMode float_mode() { return g_mode; }
void set_float_mode(FloatMode mode) { g_mode = mode; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) fail("shape extents must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

ValuePtr Value::make(std::vector<int> shape, bool requires_grad) {
    auto v = std::make_shared<Value>();
    v->data.assign(shape_numel(shape), 0.0);
    v->shape = std::move(shape);
    v->requires_grad = requires_grad && g_grad_enabled;
    v->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return v;
}

ValuePtr Value::make(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) fail("data length does not match shape");
    auto v = make(std::move(shape), requires_grad);
    v->data = std::move(data);
    v->finalize();
    return v;
}

ValuePtr Value::scalar(double x, bool requires_grad) {
    return make({1}, {x}, requires_grad);
}

double Value::item() const {
    if (data.size() != 1) fail("item() on non-scalar value");
    return data[0];
}

void Value::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Value::zero_grad() { grad.assign(data.size(), 0.0); }

void Value::finalize() {
    if (g_mode == FloatMode::f32) round_f32(data);
}

ValuePtr Value::detach_copy() const {
    auto v = std::make_shared<Value>();
    v->shape = shape;
    v->data = data;
    v->requires_grad = false;
    v->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return v;
}

bool all_finite(const Value& v) {
    for (double x : v.data)
        if (!std::isfinite(x)) return false;
    return true;
}

namespace {

// Wires a freshly computed output node into the record. When gradients are
// globally disabled, or no input needs them, the node stays a leaf constant.
ValuePtr attach(ValuePtr out, std::vector<ValuePtr> parents, std::function<void()> bwd) {
    out->finalize();
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad || !p->parents.empty();
    if (!any) return out;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(bwd);
    return out;
}

}  // namespace

namespace {

// out += valid 3x3 convolution over a padded plane.
void conv3x3_valid(const double* pad, int pw, const double* k, double* out, int oh, int ow) {
    for (int y = 0; y < oh; ++y) {
        const double* r0 = pad + y * pw;
        const double* r1 = r0 + pw;
        const double* r2 = r1 + pw;
        double* o = out + y * ow;
        for (int x = 0; x < ow; ++x)
            o[x] += k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] + k[3] * r1[x] +
                    k[4] * r1[x + 1] + k[5] * r1[x + 2] + k[6] * r2[x] + k[7] * r2[x + 1] +
                    k[8] * r2[x + 2];
    }
}

std::vector<double> pad_plane_1(const double* plane, int h, int w) {
    std::vector<double> pad(static_cast<std::size_t>(h + 2) * (w + 2), 0.0);
    for (int y = 0; y < h; ++y)
        std::copy(plane + y * w, plane + (y + 1) * w, pad.data() + (y + 1) * (w + 2) + 1);
    return pad;
}

}  // namespace

ValuePtr conv2d(const ValuePtr& input, const ValuePtr& kernel, const ValuePtr& bias,
                int stride, int padding) {
    check_3d(input, "conv2d");
    if (kernel->shape.size() != 4) fail("conv2d: kernel must be C_out x C_in x kh x kw");
    const int ci = input->shape[0], h = input->shape[1], w = input->shape[2];
    const int co = kernel->shape[0], kci = kernel->shape[1];
    const int kh = kernel->shape[2], kw = kernel->shape[3];
    if (kci != ci)
        fail("conv2d: input has " + std::to_string(ci) + " channels but kernel expects " +
             std::to_string(kci));
    if (bias->shape != std::vector<int>{co}) fail("conv2d: bias must be C_out vector");
    if (stride < 1) fail("conv2d: stride must be positive");
    if (padding < 0) fail("conv2d: padding must be non-negative");
    if (kh > h + 2 * padding || kw > w + 2 * padding) fail("conv2d: kernel exceeds padded input");
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;

    auto out = Value::make({co, oh, ow});
    double* o = out->data.data();
    const double* in = input->data.data();
    const double* k = kernel->data.data();
    for (int c = 0; c < co; ++c)
        std::fill(o + c * oh * ow, o + (c + 1) * oh * ow, bias->data[c]);
    const bool fast3x3 = kh == 3 && kw == 3 && stride == 1 && padding == 1;
    if (fast3x3) {
        for (int ic = 0; ic < ci; ++ic) {
            const auto pad = pad_plane_1(in + ic * h * w, h, w);
            for (int c = 0; c < co; ++c)
                conv3x3_valid(pad.data(), w + 2, k + ((c * ci + ic) * 3) * 3, o + c * oh * ow,
                              oh, ow);
        }
    } else
    for (int c = 0; c < co; ++c) {
        double* oc = o + c * oh * ow;
        for (int ic = 0; ic < ci; ++ic) {
            const double* plane = in + ic * h * w;
            const double* kc = k + ((c * ci + ic) * kh) * kw;
            for (int u = 0; u < kh; ++u) {
                for (int v = 0; v < kw; ++v) {
                    const double wk = kc[u * kw + v];
                    if (wk == 0.0) continue;
                    if (stride == 1) {
                        // hoisted bounds: contiguous runs the compiler can
                        // vectorize
                        const int xlo = std::max(0, padding - v);
                        const int xhi = std::min(ow, w + padding - v);
                        const int off = v - padding;
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y - padding + u;
                            if (iy < 0 || iy >= h) continue;
                            const double* row = plane + iy * w + off;
                            double* orow = oc + y * ow;
                            for (int x = xlo; x < xhi; ++x) orow[x] += wk * row[x];
                        }
                        continue;
                    }
                    for (int y = 0; y < oh; ++y) {
                        const int iy = y * stride - padding + u;
                        if (iy < 0 || iy >= h) continue;
                        const double* row = plane + iy * w;
                        double* orow = oc + y * ow;
                        for (int x = 0; x < ow; ++x) {
                            const int ix = x * stride - padding + v;
                            if (ix < 0 || ix >= w) continue;
                            orow[x] += wk * row[ix];
                        }
                    }
                }
            }
        }
    }

    ValuePtr in_p = input, k_p = kernel, b_p = bias;
    Value* out_p = out.get();
    return attach(out, {input, kernel, bias}, [in_p, k_p, b_p, out_p, stride, padding]() {
        const int ci = in_p->shape[0], h = in_p->shape[1], w = in_p->shape[2];
        const int co = k_p->shape[0], kh = k_p->shape[2], kw = k_p->shape[3];
        const int oh = out_p->shape[1], ow = out_p->shape[2];
        in_p->ensure_grad();
        k_p->ensure_grad();
        b_p->ensure_grad();
        const double* go = out_p->grad.data();
        const double* in = in_p->data.data();
        const double* k = k_p->data.data();
        double* gin = in_p->grad.data();
        double* gk = k_p->grad.data();
        if (kh == 3 && kw == 3 && stride == 1 && padding == 1) {
            for (int c = 0; c < co; ++c) {
                const double* goc = go + c * oh * ow;
                double s = 0.0;
                for (int i = 0; i < oh * ow; ++i) s += goc[i];
                b_p->grad[c] += s;
            }
            // input gradient: valid conv of the padded upstream gradient
            // with the flipped kernel
            for (int c = 0; c < co; ++c) {
                const auto gopad = pad_plane_1(go + c * oh * ow, oh, ow);
                for (int ic = 0; ic < ci; ++ic) {
                    const double* kc = k + ((c * ci + ic) * 3) * 3;
                    double kf[9];
                    for (int i = 0; i < 9; ++i) kf[i] = kc[8 - i];
                    conv3x3_valid(gopad.data(), ow + 2, kf, gin + ic * h * w, h, w);
                }
            }
            // kernel gradient: nine shifted dot products per channel pair
            for (int ic = 0; ic < ci; ++ic) {
                const auto pad = pad_plane_1(in + ic * h * w, h, w);
                const int pw2 = w + 2;
                for (int c = 0; c < co; ++c) {
                    const double* goc = go + c * oh * ow;
                    double* gkc = gk + ((c * ci + ic) * 3) * 3;
                    for (int u = 0; u < 3; ++u)
                        for (int v = 0; v < 3; ++v) {
                            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                            for (int y = 0; y < oh; ++y) {
                                const double* row = pad.data() + (y + u) * pw2 + v;
                                const double* gr = goc + y * ow;
                                int x = 0;
                                for (; x + 4 <= ow; x += 4) {
                                    a0 += row[x] * gr[x];
                                    a1 += row[x + 1] * gr[x + 1];
                                    a2 += row[x + 2] * gr[x + 2];
                                    a3 += row[x + 3] * gr[x + 3];
                                }
                                for (; x < ow; ++x) a0 += row[x] * gr[x];
                            }
                            gkc[u * 3 + v] += (a0 + a1) + (a2 + a3);
                        }
                }
            }
            return;
        }
        for (int c = 0; c < co; ++c) {
            const double* goc = go + c * oh * ow;
            double s = 0.0;
            for (int i = 0; i < oh * ow; ++i) s += goc[i];
            b_p->grad[c] += s;
            for (int ic = 0; ic < ci; ++ic) {
                const double* plane = in + ic * h * w;
                double* gplane = gin + ic * h * w;
                const double* kc = k + ((c * ci + ic) * kh) * kw;
                double* gkc = gk + ((c * ci + ic) * kh) * kw;
                for (int u = 0; u < kh; ++u) {
                    for (int v = 0; v < kw; ++v) {
                        const double wk = kc[u * kw + v];
                        double acc = 0.0;
                        if (stride == 1) {
                            const int xlo = std::max(0, padding - v);
                            const int xhi = std::min(ow, w + padding - v);
                            const int off = v - padding;
                            for (int y = 0; y < oh; ++y) {
                                const int iy = y - padding + u;
                                if (iy < 0 || iy >= h) continue;
                                const double* row = plane + iy * w + off;
                                double* grow = gplane + iy * w + off;
                                const double* gorow = goc + y * ow;
                                for (int x = xlo; x < xhi; ++x) grow[x] += wk * gorow[x];
                                // four partial sums so the reduction can
                                // vectorize without reassociation flags
                                double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                                int x = xlo;
                                for (; x + 4 <= xhi; x += 4) {
                                    a0 += row[x] * gorow[x];
                                    a1 += row[x + 1] * gorow[x + 1];
                                    a2 += row[x + 2] * gorow[x + 2];
                                    a3 += row[x + 3] * gorow[x + 3];
                                }
                                for (; x < xhi; ++x) a0 += row[x] * gorow[x];
                                acc += (a0 + a1) + (a2 + a3);
                            }
                            gkc[u * kw + v] += acc;
                            continue;
                        }
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * stride - padding + u;
                            if (iy < 0 || iy >= h) continue;
                            const double* row = plane + iy * w;
                            double* grow = gplane + iy * w;
                            const double* gorow = goc + y * ow;
                            for (int x = 0; x < ow; ++x) {
                                const int ix = x * stride - padding + v;
                                if (ix < 0 || ix >= w) continue;
                                acc += row[ix] * gorow[x];
                                grow[ix] += wk * gorow[x];
                            }
                        }
                        gkc[u * kw + v] += acc;
                    }
                }
            }
        }
    });
}

ValuePtr maxpool2d(const ValuePtr& input, int window, int stride, int padding) {
    return maxpool2d(input, window, stride, padding, padding, padding, padding);
}

ValuePtr maxpool2d(const ValuePtr& input, int window, int stride,
                   int pad_top, int pad_left, int pad_bottom, int pad_right) {
    check_3d(input, "maxpool2d");
    if (window < 1) fail("maxpool2d: window must be >= 1");
    if (stride < 1) fail("maxpool2d: stride must be positive");
    const int c = input->shape[0], h = input->shape[1], w = input->shape[2];
    const int ph = h + pad_top + pad_bottom, pw = w + pad_left + pad_right;
    if (window > ph || window > pw) fail("maxpool2d: window larger than padded input");
    const int oh = (ph - window) / stride + 1;
    const int ow = (pw - window) / stride + 1;

    auto out = Value::make({c, oh, ow});
    auto argmax = std::make_shared<std::vector<int>>(out->size(), -1);
    const double* in = input->data.data();
    for (int ic = 0; ic < c; ++ic) {
        const double* plane = in + ic * h * w;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = -1;
                for (int u = 0; u < window; ++u) {
                    const int iy = y * stride - pad_top + u;
                    if (iy < 0 || iy >= h) continue;
                    for (int v = 0; v < window; ++v) {
                        const int ix = x * stride - pad_left + v;
                        if (ix < 0 || ix >= w) continue;
                        const double cur = plane[iy * w + ix];
                        if (cur > best) {  // strict: first occurrence wins on ties
                            best = cur;
                            best_idx = ic * h * w + iy * w + ix;
                        }
                    }
                }
                const int oi = (ic * oh + y) * ow + x;
                out->data[oi] = best_idx < 0 ? 0.0 : best;
                (*argmax)[oi] = best_idx;
            }
        }
    }

    ValuePtr in_p = input; Value* out_p = out.get();
    return attach(out, {input}, [in_p, out_p, argmax]() {
        in_p->ensure_grad();
        for (std::size_t i = 0; i < out_p->size(); ++i) {
            const int src = (*argmax)[i];
            if (src >= 0) in_p->grad[src] += out_p->grad[i];
        }
    });
}

ValuePtr zero_pad(const ValuePtr& input, int target_h, int target_w) {
    check_3d(input, "zero_pad");
    const int c = input->shape[0], h = input->shape[1], w = input->shape[2];
    if (target_h < h || target_w < w) fail("zero_pad: target smaller than input");
    const int off_y = (target_h - h) / 2, off_x = (target_w - w) / 2;

    auto out = Value::make({c, target_h, target_w});
    for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out->data[(ic * target_h + y + off_y) * target_w + x + off_x] =
                    input->data[(ic * h + y) * w + x];

    ValuePtr in_p = input; Value* out_p = out.get();
    return attach(out, {input}, [in_p, out_p, off_y, off_x]() {
        const int c = in_p->shape[0], h = in_p->shape[1], w = in_p->shape[2];
        const int th = out_p->shape[1], tw = out_p->shape[2];
        in_p->ensure_grad();
        for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    in_p->grad[(ic * h + y) * w + x] +=
                        out_p->grad[(ic * th + y + off_y) * tw + x + off_x];
    });
}

ValuePtr linear(const ValuePtr& input, const ValuePtr& weight, const ValuePtr& bias) {
    if (input->shape.size() != 1) fail("linear: input must be a vector");
    if (weight->shape.size() != 2) fail("linear: weight must be M x N");
    const int n = input->shape[0], m = weight->shape[0];
    if (weight->shape[1] != n) fail("linear: weight columns do not match input length");
    if (bias->shape != std::vector<int>{m}) fail("linear: bias must be M vector");

    auto out = Value::make({m});
    const double* in = input->data.data();
    const double* wd = weight->data.data();
    for (int i = 0; i < m; ++i) {
        double acc = bias->data[i];
        const double* row = wd + i * n;
        for (int j = 0; j < n; ++j) acc += row[j] * in[j];
        out->data[i] = acc;
    }

    ValuePtr in_p = input, w_p = weight, b_p = bias; Value* out_p = out.get();
    return attach(out, {input, weight, bias}, [in_p, w_p, b_p, out_p]() {
        const int n = in_p->shape[0], m = w_p->shape[0];
        in_p->ensure_grad();
        w_p->ensure_grad();
        b_p->ensure_grad();
        const double* go = out_p->grad.data();
        const double* wd = w_p->data.data();
        const double* in = in_p->data.data();
        for (int i = 0; i < m; ++i) {
            const double g = go[i];
            b_p->grad[i] += g;
            const double* row = wd + i * n;
            double* grow = w_p->grad.data() + i * n;
            for (int j = 0; j < n; ++j) {
                grow[j] += g * in[j];
                in_p->grad[j] += g * row[j];
            }
        }
    });
}

ValuePtr relu(const ValuePtr& input) {
    auto out = Value::make(input->shape);
    for (std::size_t i = 0; i < input->size(); ++i)
        out->data[i] = input->data[i] > 0.0 ? input->data[i] : 0.0;
    ValuePtr in_p = input; Value* out_p = out.get();
    return attach(out, {input}, [in_p, out_p]() {
        in_p->ensure_grad();
        for (std::size_t i = 0; i < in_p->size(); ++i)
            if (in_p->data[i] > 0.0) in_p->grad[i] += out_p->grad[i];
    });
}

ValuePtr softmax(const ValuePtr& logits) {
    if (logits->shape.size() != 1 || logits->shape[0] < 1) fail("softmax: need a C-vector, C >= 1");
    const int c = logits->shape[0];
    auto out = Value::make({c});
    double mx = logits->data[0];
    for (double z : logits->data) mx = std::max(mx, z);
    double denom = 0.0;
    for (int i = 0; i < c; ++i) {
        out->data[i] = std::exp(logits->data[i] - mx);
        denom += out->data[i];
    }
    for (int i = 0; i < c; ++i) out->data[i] /= denom;

    ValuePtr in_p = logits; Value* out_p = out.get();
    return attach(out, {logits}, [in_p, out_p]() {
        const int c = in_p->shape[0];
        in_p->ensure_grad();
        double dot = 0.0;
        for (int i = 0; i < c; ++i) dot += out_p->grad[i] * out_p->data[i];
        for (int i = 0; i < c; ++i)
            in_p->grad[i] += out_p->data[i] * (out_p->grad[i] - dot);
    });
}

ValuePtr cross_entropy(const ValuePtr& probabilities, int target_class) {
    if (probabilities->shape.size() != 1) fail("cross_entropy: need a probability vector");
    const int c = probabilities->shape[0];
    if (target_class < 0 || target_class >= c)
        fail("cross_entropy: target class " + std::to_string(target_class) + " out of range [0," +
             std::to_string(c) + ")");
    const double p = std::max(probabilities->data[target_class], 1e-12);
    auto out = Value::scalar(-std::log(p));
    ValuePtr in_p = probabilities; Value* out_p = out.get();
    return attach(out, {probabilities}, [in_p, out_p, target_class]() {
        in_p->ensure_grad();
        const double p = std::max(in_p->data[target_class], 1e-12);
        in_p->grad[target_class] += -out_p->grad[0] / p;
    });
}

ValuePtr concat_channels(const std::vector<ValuePtr>& inputs) {
    if (inputs.empty()) fail("concat_channels: need at least one input");
    const int h = inputs[0]->shape.size() == 3 ? inputs[0]->shape[1] : -1;
    const int w = h >= 0 ? inputs[0]->shape[2] : -1;
    int total_c = 0;
    for (const auto& in : inputs) {
        check_3d(in, "concat_channels");
        if (in->shape[1] != h || in->shape[2] != w)
            fail("concat_channels: spatial extents differ");
        total_c += in->shape[0];
    }
    auto out = Value::make({total_c, h, w});
    std::size_t off = 0;
    for (const auto& in : inputs) {
        std::copy(in->data.begin(), in->data.end(), out->data.begin() + off);
        off += in->size();
    }
    std::vector<ValuePtr> parents = inputs;
    Value* out_p = out.get();
    return attach(out, inputs, [parents, out_p]() {
        std::size_t off = 0;
        for (const auto& in : parents) {
            in->ensure_grad();
            for (std::size_t i = 0; i < in->size(); ++i) in->grad[i] += out_p->grad[off + i];
            off += in->size();
        }
    });
}

ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    if (a->shape != b->shape) fail("add: shape mismatch");
    auto out = Value::make(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    ValuePtr ap = a, bp = b; Value* op = out.get();
    return attach(out, {a, b}, [ap, bp, op]() {
        ap->ensure_grad();
        bp->ensure_grad();
        for (std::size_t i = 0; i < op->size(); ++i) {
            ap->grad[i] += op->grad[i];
            bp->grad[i] += op->grad[i];
        }
    });
}

ValuePtr sub(const ValuePtr& a, const ValuePtr& b) {
    if (a->shape != b->shape) fail("sub: shape mismatch");
    auto out = Value::make(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] - b->data[i];
    ValuePtr ap = a, bp = b; Value* op = out.get();
    return attach(out, {a, b}, [ap, bp, op]() {
        ap->ensure_grad();
        bp->ensure_grad();
        for (std::size_t i = 0; i < op->size(); ++i) {
            ap->grad[i] += op->grad[i];
            bp->grad[i] -= op->grad[i];
        }
    });
}

ValuePtr scale_add(const ValuePtr& x, double a, double b) {
    auto out = Value::make(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = a * x->data[i] + b;
    ValuePtr xp = x; Value* op = out.get();
    return attach(out, {x}, [xp, op, a]() {
        xp->ensure_grad();
        for (std::size_t i = 0; i < op->size(); ++i) xp->grad[i] += a * op->grad[i];
    });
}

ValuePtr sum(const ValuePtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    auto out = Value::scalar(s);
    ValuePtr xp = x; Value* op = out.get();
    return attach(out, {x}, [xp, op]() {
        xp->ensure_grad();
        for (std::size_t i = 0; i < xp->size(); ++i) xp->grad[i] += op->grad[0];
    });
}

ValuePtr sum_squares(const ValuePtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v * v;
    auto out = Value::scalar(s);
    ValuePtr xp = x; Value* op = out.get();
    return attach(out, {x}, [xp, op]() {
        xp->ensure_grad();
        for (std::size_t i = 0; i < xp->size(); ++i) xp->grad[i] += 2.0 * xp->data[i] * op->grad[0];
    });
}

ValuePtr mul_elem(const ValuePtr& a, const ValuePtr& b) {
    if (a->shape != b->shape) fail("mul_elem: shape mismatch");
    auto out = Value::make(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    ValuePtr ap = a, bp = b; Value* op = out.get();
    return attach(out, {a, b}, [ap, bp, op]() {
        ap->ensure_grad();
        bp->ensure_grad();
        for (std::size_t i = 0; i < op->size(); ++i) {
            ap->grad[i] += bp->data[i] * op->grad[i];
            bp->grad[i] += ap->data[i] * op->grad[i];
        }
    });
}

ValuePtr weighted_sum(const std::vector<ValuePtr>& items, const std::vector<double>& coeffs) {
    if (items.size() != coeffs.size()) fail("weighted_sum: items/coeffs length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i]->is_scalar()) fail("weighted_sum: items must be scalars");
        s += coeffs[i] * items[i]->item();
    }
    auto out = Value::scalar(s);
    std::vector<ValuePtr> parents = items;
    Value* op = out.get();
    auto cs = coeffs;
    return attach(out, parents, [parents, op, cs]() {
        for (std::size_t i = 0; i < parents.size(); ++i) {
            parents[i]->ensure_grad();
            parents[i]->grad[0] += cs[i] * op->grad[0];
        }
    });
}

ValuePtr flatten(const ValuePtr& x) {
    auto out = Value::make({static_cast<int>(x->size())});
    out->data = x->data;
    ValuePtr xp = x; Value* op = out.get();
    return attach(out, {x}, [xp, op]() {
        xp->ensure_grad();
        for (std::size_t i = 0; i < xp->size(); ++i) xp->grad[i] += op->grad[i];
    });
}

void backward(const ValuePtr& loss) {
    if (!loss->is_scalar()) fail("backward: loss must be scalar");
    // Iterative DFS topological order over the recorded DAG.
    std::vector<Value*> order;
    std::unordered_set<Value*> seen;
    std::vector<std::pair<Value*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Value* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Value* node = *it;
        if (node->backward_fn && node->grad.size() == node->data.size()) node->backward_fn();
    }
    // Leaves that required gradients but sat on no path still report zeros.
    for (Value* node : order)
        if (node->requires_grad) node->ensure_grad();
}

double grad_check(const std::function<ValuePtr(const ValuePtr&)>& fn, const ValuePtr& point,
                  double eps) {
    FloatModeGuard mode(FloatMode::f64);
    auto x = Value::make(point->shape, point->data, true);
    auto loss = fn(x);
    if (!loss->is_scalar()) fail("grad_check: fn must return a scalar");
    backward(loss);
    std::vector<double> analytic = x->grad.empty() ? std::vector<double>(x->size(), 0.0) : x->grad;

    double worst = 0.0;
    for (std::size_t i = 0; i < x->size(); ++i) {
        auto probe = [&](double delta) {
            NoGradGuard ng;
            auto xp = Value::make(point->shape, point->data);
            xp->data[i] += delta;
            return fn(xp)->item();
        };
        const double f0 = probe(0.0), fp = probe(eps), fm = probe(-eps);
        const double numeric = (fp - fm) / (2.0 * eps);
        const double fwd = (fp - f0) / eps, bwd = (f0 - fm) / eps;
        // Piecewise-smooth ops (relu, maxpool) put kinks in the loss; at a
        // kink the analytic value is a subgradient and should match one of
        // the one-sided slopes instead of the central estimate.
        double best = std::numeric_limits<double>::infinity();
        for (double est : {numeric, fwd, bwd}) {
            const double denom = std::max({std::fabs(analytic[i]), std::fabs(est), 1e-6});
            best = std::min(best, std::fabs(analytic[i] - est) / denom);
        }
        worst = std::max(worst, best);
    }
    return worst;
}

}  // namespace ieces
