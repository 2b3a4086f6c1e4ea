#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "csisense/errors.hpp"

// Dense float32 tensor with a thread-confined gradient tape. Forward ops are
// pure and safe to call concurrently on distinct tensors when grad recording
// is off; the tape itself belongs to a single training thread.

namespace csisense {

using Shape = std::vector<int>;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first needed
    bool requires_grad = false;
    // High-precision value for scalar reductions (loss, sum); keeps
    // finite-difference checks out of float32 cancellation noise.
    double scalar64 = 0.0;

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);

    static Tensor from_data(Shape shape, std::vector<float> values,
                            bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor randn(Shape shape, std::mt19937& rng, float stddev,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[size_t(i)]; }
    std::size_t size() const { return impl_->data.size(); }

    float* data() { return impl_->data.data(); }
    const float* data() const { return impl_->data.data(); }
    std::vector<float>& values() { return impl_->data; }
    const std::vector<float>& values() const { return impl_->data; }

    float* grad() { impl_->ensure_grad(); return impl_->grad.data(); }
    const std::vector<float>& grad_values() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() { if (!impl_->grad.empty()) impl_->grad.assign(impl_->grad.size(), 0.0f); }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    float item() const;
    double item64() const;  // scalar64 when set by a reduction, else item()

    std::shared_ptr<TensorImpl> unwrap() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// --- autograd tape ---------------------------------------------------------

bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
private:
    bool prev_;
};

std::size_t tape_size();
void clear_tape();
// Runs the tape in reverse from `loss` (must be a recorded scalar), filling
// grad buffers of every requires_grad tensor on the path, then clears it.
void backward(const Tensor& loss);

// --- op instrumentation -----------------------------------------------------

struct OpStats {
    long conv2d = 0;
    long depthwise = 0;
    long linear = 0;
    long batch_norm = 0;
    long activation = 0;
    long pool = 0;
    long total() const { return conv2d + depthwise + linear + batch_norm + activation + pool; }
};
OpStats& op_stats();
void reset_op_stats();

// --- forward ops ------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor running_mean, Tensor running_var, bool training,
                  float momentum, float eps);
Tensor relu(const Tensor& x);
Tensor hard_sigmoid(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// labels: one class index per row; -1 skips the row (masked joint loss).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale_channels(const Tensor& x, const Tensor& gate);  // x[N,C,H,W]*g[N,C]
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape target);
Tensor sum(const Tensor& x);  // scalar, 64-bit accumulated

// Row-wise softmax of a [N,K] tensor, forward only.
std::vector<float> softmax_rows(const Tensor& logits);

// Max relative error between analytic gradients and central differences.
// `loss_fn` rebuilds the forward pass and returns the (recorded) scalar loss.
// Per parameter the coordinates with the largest analytic gradients plus a
// few random ones are probed.
double finite_diff_check(const std::function<Tensor()>& loss_fn,
                         const std::vector<Tensor>& params, double h,
                         int coords_per_param = 5, uint64_t seed = 0);

void check_finite(const Tensor& t, const char* what);

}  // namespace csisense
