/**
 * Reverse-mode differentiable tensor engine.
 *
 * Dense row-major float32 tensors plus the primitive set needed to train the
 * models in this repo: elementwise arithmetic with numpy-style broadcasting,
 * (batched) matmul, transpose/reshape/narrow/concat, softmax, layer norm,
 * GELU/SiLU/tanh, embedding lookup, cross-entropy, MSE and rotary position
 * transforms.
 *
 * Gradients are recorded on an explicit tape: while a GradTape is alive every
 * primitive pushes a backward closure; GradTape::backward(loss) replays the
 * closures in reverse and accumulates into the .grad buffer of every leaf
 * with requires_grad set. With no active tape the primitives are pure
 * functions, which is the inference path.
 *
 * Broadcasting rule (elementwise binary ops): shapes are right-aligned and
 * each dimension pair must be equal or contain a 1; the output takes the max
 * extent. Ranks up to 4. Matmul batches over leading dimensions, which must
 * match exactly or be 1 on one side.
 *
 * Everything is float32 and single-threaded: same seed + inputs means
 * bit-identical outputs. After every primitive the output is scanned for
 * NaN/Inf and a std::runtime_error naming the primitive is thrown on
 * violation (disable via set_finite_checks for benchmarking).
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "chaintok/rng.hpp"

namespace chaintok {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<float> val;
    std::vector<float> grad;  // allocated lazily, same extent as val
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, float v);
    static Tensor scalar(float v) { return full({1}, v); }
    static Tensor from(const Shape& shape, std::vector<float> values);
    /// Gaussian init scaled by `scale`.
    static Tensor randn(const Shape& shape, Rng& rng, float scale = 1.0f);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[i]; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(d_->val.size()); }

    float* data() { return d_->val.data(); }
    const float* data() const { return d_->val.data(); }
    const std::vector<float>& values() const { return d_->val; }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        d_->requires_grad = b;
        if (b) ensure_grad();
        return *this;
    }
    /// Gradient buffer, zero-filled on first access.
    float* grad_data() { ensure_grad(); return d_->grad.data(); }
    const std::vector<float>& grad() const { return d_->grad; }
    void zero_grad();

    /// Value of a single-element tensor.
    float item() const;

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    void ensure_grad();
    std::shared_ptr<TensorData> d_;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Scoped gradient tape. Primitives record backward closures while one is
/// alive; nesting is not supported.
class GradTape {
public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    /// Reverse replay from a scalar loss. Seeds d(loss)=1, accumulates into
    /// every requires_grad leaf. Throws if called twice without new forward
    /// work or if loss is not scalar.
    void backward(const Tensor& loss);

    /// Drop all recorded entries; the next backward needs a fresh forward.
    void reset();

    size_t size() const { return entries_.size(); }

    static GradTape* active();
    static void record(std::function<void()> fn);

private:
    std::vector<std::function<void()>> entries_;
    size_t consumed_at_ = 0;
    bool consumed_ = false;
};

/// Toggle NaN/Inf scanning after each primitive (default on).
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- primitives ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

/// 2-D or batched 3-D matmul. [m,k]x[k,n], [b,m,k]x[b,k,n], and batch
/// broadcast when one side has batch extent 1 or rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a, int d0, int d1);
Tensor reshape(const Tensor& a, Shape new_shape);  // one extent may be -1

/// Softmax over the last dimension.
Tensor softmax(const Tensor& a);

/// Layer norm over the last dimension. gain/bias may be undefined Tensors.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

/// x / sqrt(mean(x^2) + eps) over the last dimension (no learned scale).
Tensor rms_norm(const Tensor& a, float eps = 1e-5f);

Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor tanh_act(const Tensor& a);

/// Rows of `table` ([V,C]) selected by ids; backward scatter-adds.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

/// Mean cross-entropy of logits [N,V] against integer targets; rows whose
/// target equals ignore_index contribute nothing (mean over the rest).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int ignore_index = -1);

/// Mean squared error over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor concat(const std::vector<Tensor>& parts, int dim);
/// Contiguous slice [start, start+len) along `dim`.
Tensor narrow(const Tensor& a, int dim, int start, int len);

/// Rotary transform of the last two dims [T,D] (D even), leading dims are
/// batch. positions[t] is the rotation index of row t; base 10000.
Tensor rope(const Tensor& x, const std::vector<int>& positions);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// Classic fixed sin/cos features of a scalar (used for timestep
/// conditioning): [sin(t*w_0), cos(t*w_0), ...], dim must be even.
std::vector<float> sinusoid_features(double t, int dim, double max_period = 1e4);

/// Fixed sinusoidal position table [max_pos, dim] as a constant tensor.
Tensor sinusoid_table(int max_pos, int dim);

int argmax(const std::vector<float>& v);

}  // namespace chaintok
