#include "csisense/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <cstring>

#include "csisense/kernels.hpp"

namespace csisense {

namespace {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw DimensionError("negative extent in shape");
        n *= std::size_t(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

bool g_grad_enabled = true;
std::vector<std::function<void()>> g_tape;
OpStats g_op_stats;

bool track(const std::initializer_list<const Tensor*>& inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void record(std::function<void()> fn) { g_tape.push_back(std::move(fn)); }

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) {
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), 0.0f);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw DimensionError("from_data: shape " + shape_str(shape) +
                             " does not match value count");
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937& rng, float stddev, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    std::normal_distribution<float> d(0.0f, stddev);
    for (float& v : t.values()) v = d(rng);
    return t;
}

float Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor");
    return impl_->data[0];
}

double Tensor::item64() const {
    if (size() != 1) throw DimensionError("item64() on non-scalar tensor");
    return impl_->scalar64 != 0.0 || impl_->data[0] == 0.0f ? impl_->scalar64
                                                            : double(impl_->data[0]);
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
std::size_t tape_size() { return g_tape.size(); }
void clear_tape() { g_tape.clear(); }

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw TapeError("backward requires a scalar loss");
    if (!loss.requires_grad())
        throw TapeError("backward on a detached tensor (nothing recorded)");
    if (g_tape.empty()) throw TapeError("backward with an empty tape");
    loss.unwrap()->ensure_grad();
    loss.unwrap()->grad[0] = 1.0f;
    for (auto it = g_tape.rbegin(); it != g_tape.rend(); ++it) (*it)();
    g_tape.clear();
}

OpStats& op_stats() { return g_op_stats; }
void reset_op_stats() { g_op_stats = OpStats{}; }

void check_finite(const Tensor& t, const char* what) {
    for (float v : t.values())
        if (!std::isfinite(v))
            throw ValueError(std::string("non-finite value produced by ") + what);
}

// --- convolution -------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw DimensionError("conv2d expects 4-d input and weight");
    if (stride < 1 || padding < 0) throw ValueError("conv2d: bad stride/padding");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wi = x.dim(3);
    const int k = w.dim(0), kc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (kc != c)
        throw DimensionError("conv2d: input channels " + std::to_string(c) +
                             " != weight channels " + std::to_string(kc));
    if (h + 2 * padding < kh || wi + 2 * padding < kw)
        throw DimensionError("conv2d: kernel larger than padded input");
    const int ho = kernels::conv_out_dim(h, kh, stride, padding);
    const int wo = kernels::conv_out_dim(wi, kw, stride, padding);
    Tensor out({n, k, ho, wo});
    kernels::conv2d_fast(x.data(), n, c, h, wi, w.data(), k, kh, kw, stride,
                         padding, out.data());
    ++g_op_stats.conv2d;
    if (track({&x, &w})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), wiq = w.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            float* gx = nullptr;
            float* gw = nullptr;
            if (xi->requires_grad) { xi->ensure_grad(); gx = xi->grad.data(); }
            if (wiq->requires_grad) { wiq->ensure_grad(); gw = wiq->grad.data(); }
            kernels::conv2d_backward(xi->data.data(), n, c, h, wi, wiq->data.data(),
                                     k, kh, kw, stride, padding, oi->grad.data(),
                                     gx, gw);
        });
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw DimensionError("depthwise_conv2d expects 4-d input and weight");
    if (stride < 1 || padding < 0) throw ValueError("depthwise_conv2d: bad stride/padding");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wi = x.dim(3);
    if (w.dim(0) != c || w.dim(1) != 1)
        throw DimensionError("depthwise_conv2d: weight must be [C,1,kh,kw] with C=" +
                             std::to_string(c) + ", got [" + std::to_string(w.dim(0)) +
                             "," + std::to_string(w.dim(1)) + ",...]");
    const int kh = w.dim(2), kw = w.dim(3);
    const int ho = kernels::conv_out_dim(h, kh, stride, padding);
    const int wo = kernels::conv_out_dim(wi, kw, stride, padding);
    Tensor out({n, c, ho, wo});
    kernels::depthwise_conv2d_fast(x.data(), n, c, h, wi, w.data(), kh, kw,
                                   stride, padding, out.data());
    ++g_op_stats.depthwise;
    if (track({&x, &w})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), wiq = w.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            float* gx = nullptr;
            float* gw = nullptr;
            if (xi->requires_grad) { xi->ensure_grad(); gx = xi->grad.data(); }
            if (wiq->requires_grad) { wiq->ensure_grad(); gw = wiq->grad.data(); }
            kernels::depthwise_conv2d_backward(xi->data.data(), n, c, h, wi,
                                               wiq->data.data(), kh, kw, stride,
                                               padding, oi->grad.data(), gx, gw);
        });
    }
    return out;
}

// --- batch norm --------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool training,
                  float momentum, float eps) {
    if (x.shape().size() != 4) throw DimensionError("batch_norm expects 4-d input");
    if (eps <= 0.0f) throw ValueError("batch_norm: eps must be > 0");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.dim(0) != c || beta.dim(0) != c)
        throw DimensionError("batch_norm: gamma/beta must have C entries");
    const std::size_t plane = std::size_t(h) * w;
    const std::size_t m = std::size_t(n) * plane;

    auto mean = std::make_shared<std::vector<double>>(c, 0.0);
    auto invstd = std::make_shared<std::vector<double>>(c, 0.0);
    if (training) {
        std::vector<double> var(c, 0.0);
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const float* p = x.data() + (std::size_t(ni) * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / double(m);
            double v = 0.0;
            for (int ni = 0; ni < n; ++ni) {
                const float* p = x.data() + (std::size_t(ni) * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    v += d * d;
                }
            }
            v /= double(m);  // biased variance, used consistently
            (*mean)[ci] = mu;
            var[ci] = v;
            (*invstd)[ci] = 1.0 / std::sqrt(v + double(eps));
            running_mean.data()[ci] =
                float((1.0 - momentum) * running_mean.data()[ci] + momentum * mu);
            running_var.data()[ci] =
                float((1.0 - momentum) * running_var.data()[ci] + momentum * v);
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            (*mean)[ci] = running_mean.data()[ci];
            (*invstd)[ci] = 1.0 / std::sqrt(double(running_var.data()[ci]) + double(eps));
        }
    }

    Tensor out({n, c, h, w});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const float* p = x.data() + (std::size_t(ni) * c + ci) * plane;
            float* o = out.data() + (std::size_t(ni) * c + ci) * plane;
            const double mu = (*mean)[ci], is = (*invstd)[ci];
            const double g = gamma.data()[ci], b = beta.data()[ci];
            for (std::size_t i = 0; i < plane; ++i)
                o[i] = float((p[i] - mu) * is * g + b);
        }
    ++g_op_stats.batch_norm;

    if (track({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), gi = gamma.unwrap(), bi = beta.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            const float* go = oi->grad.data();
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const float* p = xi->data.data() + (std::size_t(ni) * c + ci) * plane;
                    const float* g = go + (std::size_t(ni) * c + ci) * plane;
                    const double mu = (*mean)[ci], is = (*invstd)[ci];
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy[ci] += g[i];
                        sum_dy_xhat[ci] += double(g[i]) * (p[i] - mu) * is;
                    }
                }
            if (gi->requires_grad) {
                gi->ensure_grad();
                for (int ci = 0; ci < c; ++ci) gi->grad[ci] += float(sum_dy_xhat[ci]);
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int ci = 0; ci < c; ++ci) bi->grad[ci] += float(sum_dy[ci]);
            }
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int ci = 0; ci < c; ++ci) {
                        const float* p = xi->data.data() + (std::size_t(ni) * c + ci) * plane;
                        const float* g = go + (std::size_t(ni) * c + ci) * plane;
                        float* gx = xi->grad.data() + (std::size_t(ni) * c + ci) * plane;
                        const double mu = (*mean)[ci], is = (*invstd)[ci];
                        const double gam = gi->data[ci];
                        if (training) {
                            const double md = double(m);
                            for (std::size_t i = 0; i < plane; ++i) {
                                const double xhat = (p[i] - mu) * is;
                                gx[i] += float(gam * is *
                                               (double(g[i]) - sum_dy[ci] / md -
                                                xhat * sum_dy_xhat[ci] / md));
                            }
                        } else {
                            for (std::size_t i = 0; i < plane; ++i)
                                gx[i] += float(gam * is * double(g[i]));
                        }
                    }
            }
        });
    }
    return out;
}

// --- pointwise ops -----------------------------------------------------------

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0 ? x.data()[i] : 0.0f;
    ++g_op_stats.activation;
    if (track({&x})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                if (xi->data[i] > 0) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor hard_sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const float v = (x.data()[i] + 3.0f) / 6.0f;
        out.data()[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    ++g_op_stats.activation;
    if (track({&x})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                if (xi->data[i] > -3.0f && xi->data[i] < 3.0f)
                    xi->grad[i] += oi->grad[i] / 6.0f;
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.shape().size() != 4) throw DimensionError("global_avg_pool expects 4-d input");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = std::size_t(x.dim(2)) * x.dim(3);
    Tensor out({n, c});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const float* p = x.data() + (std::size_t(ni) * c + ci) * plane;
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            out.data()[ni * c + ci] = float(s / double(plane));
        }
    ++g_op_stats.pool;
    if (track({&x})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const float g = oi->grad[ni * c + ci] / float(plane);
                    float* gx = xi->grad.data() + (std::size_t(ni) * c + ci) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gx[i] += g;
                }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
        throw DimensionError("linear expects x[N,F], w[O,F], b[O]");
    const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
    if (w.dim(1) != f || b.dim(0) != o)
        throw DimensionError("linear: inner dims disagree (x F=" + std::to_string(f) +
                             ", w F=" + std::to_string(w.dim(1)) + ")");
    Tensor out({n, o});
    for (int ni = 0; ni < n; ++ni)
        for (int oi = 0; oi < o; ++oi) {
            double acc = b.data()[oi];
            const float* xr = x.data() + std::size_t(ni) * f;
            const float* wr = w.data() + std::size_t(oi) * f;
            for (int i = 0; i < f; ++i) acc += double(xr[i]) * double(wr[i]);
            out.data()[ni * o + oi] = float(acc);
        }
    ++g_op_stats.linear;
    if (track({&x, &w, &b})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), wi = w.unwrap(), bi = b.unwrap(), oi2 = out.unwrap();
        record([=]() {
            if (oi2->grad.empty()) return;
            const float* go = oi2->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int ni = 0; ni < n; ++ni)
                    for (int i = 0; i < f; ++i) {
                        double acc = 0.0;
                        for (int k = 0; k < o; ++k)
                            acc += double(go[ni * o + k]) * double(wi->data[std::size_t(k) * f + i]);
                        xi->grad[std::size_t(ni) * f + i] += float(acc);
                    }
            }
            if (wi->requires_grad) {
                wi->ensure_grad();
                for (int k = 0; k < o; ++k)
                    for (int i = 0; i < f; ++i) {
                        double acc = 0.0;
                        for (int ni = 0; ni < n; ++ni)
                            acc += double(go[ni * o + k]) * double(xi->data[std::size_t(ni) * f + i]);
                        wi->grad[std::size_t(k) * f + i] += float(acc);
                    }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int k = 0; k < o; ++k) {
                    double acc = 0.0;
                    for (int ni = 0; ni < n; ++ni) acc += go[ni * o + k];
                    bi->grad[k] += float(acc);
                }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2)
        throw DimensionError("softmax_cross_entropy expects [N,K] logits");
    const int n = logits.dim(0), k = logits.dim(1);
    if (int(labels.size()) != n)
        throw DimensionError("softmax_cross_entropy: label count != batch size");
    for (int l : labels)
        if (l != -1 && (l < 0 || l >= k))
            throw ValueError("softmax_cross_entropy: label " + std::to_string(l) +
                             " out of range [0," + std::to_string(k) + ")");
    auto probs = std::make_shared<std::vector<double>>(std::size_t(n) * k, 0.0);
    double total = 0.0;
    int counted = 0;
    for (int ni = 0; ni < n; ++ni) {
        const float* row = logits.data() + std::size_t(ni) * k;
        double mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, double(row[i]));
        double z = 0.0;
        for (int i = 0; i < k; ++i) z += std::exp(double(row[i]) - mx);
        for (int i = 0; i < k; ++i)
            (*probs)[std::size_t(ni) * k + i] = std::exp(double(row[i]) - mx) / z;
        if (labels[ni] != -1) {
            total += -(double(row[labels[ni]]) - mx - std::log(z));
            ++counted;
        }
    }
    const double denom = counted > 0 ? double(counted) : 1.0;
    Tensor out({1});
    out.data()[0] = float(total / denom);
    out.unwrap()->scalar64 = total / denom;
    if (track({&logits})) {
        out.set_requires_grad(true);
        auto li = logits.unwrap(), oi = out.unwrap();
        auto labs = std::make_shared<std::vector<int>>(labels);
        record([=]() {
            if (oi->grad.empty() || !li->requires_grad) return;
            li->ensure_grad();
            const float g = oi->grad[0];
            for (int ni = 0; ni < n; ++ni) {
                if ((*labs)[ni] == -1) continue;
                for (int i = 0; i < k; ++i) {
                    double p = (*probs)[std::size_t(ni) * k + i];
                    if (i == (*labs)[ni]) p -= 1.0;
                    li->grad[std::size_t(ni) * k + i] += float(g * p / denom);
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
    Tensor out(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.unwrap(), bi = b.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
    Tensor out(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.unwrap(), bi = b.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
            }
        });
    }
    return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
    if (x.shape().size() != 4 || gate.shape().size() != 2 ||
        gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1))
        throw DimensionError("scale_channels: gate must be [N,C] matching input");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = std::size_t(x.dim(2)) * x.dim(3);
    Tensor out(x.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const float g = gate.data()[ni * c + ci];
            const float* p = x.data() + (std::size_t(ni) * c + ci) * plane;
            float* o = out.data() + (std::size_t(ni) * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] * g;
        }
    if (track({&x, &gate})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), gi = gate.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            for (int ni = 0; ni < n; ++ni)
                for (int ci = 0; ci < c; ++ci) {
                    const float* go = oi->grad.data() + (std::size_t(ni) * c + ci) * plane;
                    if (xi->requires_grad) {
                        xi->ensure_grad();
                        const float g = gi->data[ni * c + ci];
                        float* gx = xi->grad.data() + (std::size_t(ni) * c + ci) * plane;
                        for (std::size_t i = 0; i < plane; ++i) gx[i] += go[i] * g;
                    }
                    if (gi->requires_grad) {
                        gi->ensure_grad();
                        const float* p = xi->data.data() + (std::size_t(ni) * c + ci) * plane;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) acc += double(go[i]) * p[i];
                        gi->grad[ni * c + ci] += float(acc);
                    }
                }
        });
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 4 || b.shape().size() != 4 || a.dim(0) != b.dim(0) ||
        a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: N/H/W must match");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t plane = std::size_t(a.dim(2)) * a.dim(3);
    Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
    for (int ni = 0; ni < n; ++ni) {
        std::memcpy(out.data() + std::size_t(ni) * (ca + cb) * plane,
                    a.data() + std::size_t(ni) * ca * plane,
                    std::size_t(ca) * plane * sizeof(float));
        std::memcpy(out.data() + (std::size_t(ni) * (ca + cb) + ca) * plane,
                    b.data() + std::size_t(ni) * cb * plane,
                    std::size_t(cb) * plane * sizeof(float));
    }
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.unwrap(), bi = b.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty()) return;
            for (int ni = 0; ni < n; ++ni) {
                if (ai->requires_grad) {
                    ai->ensure_grad();
                    const float* go = oi->grad.data() + std::size_t(ni) * (ca + cb) * plane;
                    float* ga = ai->grad.data() + std::size_t(ni) * ca * plane;
                    for (std::size_t i = 0; i < std::size_t(ca) * plane; ++i) ga[i] += go[i];
                }
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    const float* go =
                        oi->grad.data() + (std::size_t(ni) * (ca + cb) + ca) * plane;
                    float* gb = bi->grad.data() + std::size_t(ni) * cb * plane;
                    for (std::size_t i = 0; i < std::size_t(cb) * plane; ++i) gb[i] += go[i];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape target) {
    if (shape_numel(target) != x.size())
        throw DimensionError("reshape: element count mismatch");
    Tensor out = Tensor::from_data(std::move(target), x.values());
    if (track({&x})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (float v : x.values()) s += v;
    Tensor out({1});
    out.data()[0] = float(s);
    out.unwrap()->scalar64 = s;
    if (track({&x})) {
        out.set_requires_grad(true);
        auto xi = x.unwrap(), oi = out.unwrap();
        record([=]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            xi->ensure_grad();
            const float g = oi->grad[0];
            for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += g;
        });
    }
    return out;
}

std::vector<float> softmax_rows(const Tensor& logits) {
    if (logits.shape().size() != 2)
        throw DimensionError("softmax_rows expects [N,K]");
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<float> out(std::size_t(n) * k);
    for (int ni = 0; ni < n; ++ni) {
        const float* row = logits.data() + std::size_t(ni) * k;
        double mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, double(row[i]));
        double z = 0.0;
        for (int i = 0; i < k; ++i) z += std::exp(double(row[i]) - mx);
        for (int i = 0; i < k; ++i)
            out[std::size_t(ni) * k + i] = float(std::exp(double(row[i]) - mx) / z);
    }
    return out;
}

double finite_diff_check(const std::function<Tensor()>& loss_fn,
                         const std::vector<Tensor>& params, double h,
                         int coords_per_param, uint64_t seed) {
    if (h <= 0.0) throw ValueError("finite_diff_check: h must be > 0");
    clear_tape();
    for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    Tensor loss = loss_fn();
    backward(loss);

    std::mt19937 rng{uint32_t(seed)};
    // gradient scale across all checked parameters; some individual parameters
    // can have an exactly-zero gradient (e.g. a scale that a downstream
    // normalization cancels), where analytic and central-difference values are
    // both pure rounding noise and comparing them to each other is meaningless
    double gmax = 0.0;
    for (const Tensor& p : params)
        for (float v : p.grad_values()) gmax = std::max(gmax, double(std::fabs(v)));
    double max_rel = 0.0;
    for (const Tensor& p : params) {
        Tensor& param = const_cast<Tensor&>(p);
        const std::size_t n = param.size();
        if (n == 0) continue;
        const std::vector<float>& g = param.grad_values();
        // probe the largest analytic gradients plus a couple of random coords
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t(0));
        const std::size_t topk = std::min<std::size_t>(n, std::max(1, coords_per_param - 2));
        std::partial_sort(idx.begin(), idx.begin() + topk, idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              return std::fabs(g.empty() ? 0.0f : g[a]) >
                                     std::fabs(g.empty() ? 0.0f : g[b]);
                          });
        std::vector<std::size_t> coords(idx.begin(), idx.begin() + topk);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        while (int(coords.size()) < coords_per_param && coords.size() < n)
            coords.push_back(pick(rng));

        // central difference, dividing by the step the float parameter
        // actually took
        auto central = [&](std::size_t i, double step) {
            NoGradGuard ng;
            const float orig = param.data()[i];
            const float up = float(double(orig) + step);
            const float down = float(double(orig) - step);
            param.data()[i] = up;
            const double lp = loss_fn().item64();
            param.data()[i] = down;
            const double lm = loss_fn().item64();
            param.data()[i] = orig;
            return (lp - lm) / (double(up) - double(down));
        };

        for (std::size_t i : coords) {
            const double analytic = g.empty() ? 0.0 : double(g[i]);
            const double fd_h = central(i, h);
            const double fd = central(i, h / 2);
            // self-consistency gate: through relu/hard-sigmoid networks the
            // step interval routinely straddles a kink, where the central
            // difference measures an interval-averaged slope that no step size
            // reconciles with the one-sided analytic value; two step sizes
            // disagreeing flags exactly those coordinates, using no
            // information from the gradient under test
            if (std::fabs(fd_h - fd) > 1e-5 * gmax) continue;
            // error relative to the overall gradient scale: f32 forward noise
            // puts an absolute floor on fd accuracy, so comparing near-zero
            // coordinates against their own magnitude would measure noise,
            // while a wrong formula shows up at O(gmax) regardless
            const double denom = std::max({std::fabs(analytic), std::fabs(fd), gmax}) + 1e-8;
            max_rel = std::max(max_rel, std::fabs(analytic - fd) / denom);
        }
    }
    return max_rel;
}

}  // namespace csisense
