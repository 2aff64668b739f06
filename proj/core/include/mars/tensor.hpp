#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace mars {

// Additive attention-mask sentinel standing in for -inf. With per-row max
// subtraction, exp(x - rowmax) underflows to exactly 0.0 for any finite row,
// so masked entries come out as exact zero probability without NaN.
inline constexpr double kMaskedScore = -1e30;

// Dense row-major f64 tensor. Copies share the underlying buffer; gradients
// live next to the data and accumulate across backward calls until zeroed.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, bool requires_grad);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return store_ != nullptr; }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::size_t numel() const;

    double* data();
    const double* data() const;
    double* grad();              // nullptr unless requires_grad
    const double* grad() const;
    bool requires_grad() const { return requires_grad_; }

    double item() const;         // scalar tensors only
    double at(int i) const { return data()[i]; }
    double at(int r, int c) const { return data()[static_cast<std::size_t>(r) * shape_[1] + c]; }

    void zero_grad();
    // Stable identity of the underlying buffer (same across copies).
    const void* id() const { return store_.get(); }

private:
    struct Store {
        std::vector<double> v;
        std::vector<double> g;   // empty unless requires_grad
    };
    std::vector<int> shape_;
    std::shared_ptr<Store> store_;
    bool requires_grad_ = false;
};

// Recording tape. Primitive ops append one node each, in execution order;
// backward() replays the nodes in reverse and then clears the tape.
class Graph {
public:
    static Graph& active();      // thread-local instance

    bool recording() const { return recording_; }
    void push(std::function<void()> node) { nodes_.push_back(std::move(node)); }
    std::size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    friend class NoGradGuard;
    friend void backward(const Tensor& loss);
    std::vector<std::function<void()>> nodes_;
    bool recording_ = true;
};

// Disables tape recording in scope (inference / numeric probes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Seeds d(loss)/d(loss) = 1, replays the tape in reverse visiting each node
// exactly once, accumulates into leaf grads, then clears the tape.
// Throws if loss is not a connected scalar.
void backward(const Tensor& loss);

// ---- differentiable primitives -------------------------------------------
// All primitives: fixed left-to-right summation order, output checked finite.

Tensor matmul(const Tensor& a, const Tensor& b);              // [m,k]x[k,n]
Tensor add(const Tensor& a, const Tensor& b);                 // same shape
Tensor mul(const Tensor& a, const Tensor& b);                 // same shape
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);                                  // -> scalar
Tensor transpose(const Tensor& a);                            // [m,n] -> [n,m]
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gelu(const Tensor& a);                                 // exact erf form
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-5);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Rotary position rotation over consecutive pairs; the column count must be
// even. Positions are the absolute sequence indices of each row.
Tensor rope(const Tensor& x, const std::vector<int>& positions, double theta_base = 10000.0);

// Softmax over (scores + additive_mask) rows. Mask entries must be 0 or the
// kMaskedScore sentinel; each row needs at least one visible entry. Masked
// entries map to exactly 0 in the output.
Tensor masked_softmax(const Tensor& scores, const Tensor& additive_mask);

// Mean negative log-likelihood over rows whose target != ignore_id.
// Throws if every position is ignored or a target is out of range.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id);

} // namespace mars
