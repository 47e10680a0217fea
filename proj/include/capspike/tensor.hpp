#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "capspike/errors.hpp"
#include "capspike/rng.hpp"

namespace capspike {

class Tape;

// Dense n-dimensional array of 32-bit reals, row-major. Copies share the
// underlying buffer; shape is fixed at construction (reshape returns a new
// Tensor over the same buffer). `node` links the tensor to a tape entry when
// it participates in a recorded computation (-1 = constant).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> values);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    bool defined() const { return static_cast<bool>(data_); }

    float* data() { return data_->data(); }
    const float* data() const { return data_->data(); }
    float& operator[](std::size_t i) { return (*data_)[i]; }
    float operator[](std::size_t i) const { return (*data_)[i]; }

    // Same buffer, new shape (element count must match).
    Tensor reshape(std::vector<int> new_shape) const;
    // Fresh buffer with identical contents.
    Tensor clone() const;

    bool all_finite() const;

    int node = -1;

private:
    std::vector<int> shape_;
    std::shared_ptr<std::vector<float>> data_;
};

std::size_t shape_product(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Records the forward computation for reverse-mode differentiation. Nodes are
// appended in execution order, so parents always precede children; backward
// walks the list once in reverse. One tape per training thread.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    // Registers a leaf (parameter or input). Idempotent per tensor copy.
    int leaf(Tensor& t);

    int push(std::vector<int> parents, std::vector<int> out_shape, BackwardFn fn);

    // Seeds d(loss)/d(loss)=1 and accumulates gradients into every reachable
    // node. The loss must be scalar.
    void backward(int loss_node);

    // Gradient of the last backward() for the tensor's node (zeros if the
    // node never received gradient). Throws if the tensor is not on the tape.
    Tensor grad(const Tensor& t) const;

    Tensor& grad_buffer(int node, const std::vector<int>& shape);
    bool has_grad(int node) const;

    std::size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        std::vector<int> parents;
        std::vector<int> shape;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

enum class PoolMode { Avg, Max };
enum class ActKind { Relu, Softmax };

// Core differentiable ops. `tape == nullptr` runs pure forward.
// conv2d is cross-correlation (no kernel flip); valid padding semantics with
// floor output sizes: H' = (H + 2p - kH)/s + 1.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernels, int stride, int padding);
Tensor bias_add_channel(Tape* tape, const Tensor& input, const Tensor& bias);
Tensor pool2d(Tape* tape, const Tensor& input, int window, int stride, PoolMode mode);
Tensor dense(Tape* tape, const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor activation(Tape* tape, const Tensor& input, ActKind kind);
Tensor relu(Tape* tape, const Tensor& input);
Tensor softmax(Tape* tape, const Tensor& input); // over the last axis
Tensor sigmoid(Tape* tape, const Tensor& input);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& input, float alpha);
Tensor reshape_op(Tape* tape, const Tensor& input, std::vector<int> new_shape);
Tensor zero_pad2d(Tape* tape, const Tensor& input, int amount);
Tensor dropout(Tape* tape, const Tensor& input, float rate, RandomStream& rng);
Tensor batchnorm_fixed(Tape* tape, const Tensor& input,
                       const std::vector<float>& gamma, const std::vector<float>& beta,
                       const std::vector<float>& mean, const std::vector<float>& var,
                       float eps);

// mean over batch rows of (logsumexp(z) - z[label]).
Tensor cross_entropy_logits(Tape* tape, const Tensor& logits, const std::vector<int>& labels);
// mean over batch rows of the per-sample sum of squared differences.
Tensor sse_loss(Tape* tape, const Tensor& predicted, const Tensor& target);

// GEMM kernels, f32 storage with f64 accumulation. Fixed loop order keeps
// results deterministic.
void gemm_nn(const float* A, const float* B, float* C, int M, int K, int N);       // C[M,N] = A[M,K] B[K,N]
void gemm_nt(const float* A, const float* B, float* C, int M, int K, int N);       // C[M,N] = A[M,K] B[N,K]^T
void gemm_tn(const float* A, const float* B, float* C, int M, int K, int N);       // C[M,N] = A[K,M]^T B[K,N]
void gemm_nn_acc(const float* A, const float* B, float* C, int M, int K, int N);   // C += A B

// Max over elements of |analytic - central difference| / max(|analytic|, |cd|, 1e-8)
// for a scalar-valued function of `input`.
double grad_check(const std::function<Tensor(Tape&, Tensor&)>& fn,
                  const Tensor& input, double eps);

} // namespace capspike
