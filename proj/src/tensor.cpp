#include "capspike/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace capspike {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    for (int d : shape_)
        if (d <= 0) throw contract_error("tensor dimensions must be positive, got " + shape_str(shape_));
    data_ = std::make_shared<std::vector<float>>(shape_product(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values) : shape_(std::move(shape)) {
    for (int d : shape_)
        if (d <= 0) throw contract_error("tensor dimensions must be positive, got " + shape_str(shape_));
    if (values.size() != shape_product(shape_))
        throw dim_error("tensor data length " + std::to_string(values.size()) +
                        " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<float>>(std::move(values));
}

Tensor Tensor::reshape(std::vector<int> new_shape) const {
    if (shape_product(new_shape) != size())
        throw dim_error("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                        " changes element count");
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<float>>(*data_);
    return t;
}

bool Tensor::all_finite() const {
    if (!data_) return true;
    for (float v : *data_)
        if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Tape

int Tape::leaf(Tensor& t) {
    if (t.node >= 0) return t.node;
    t.node = push({}, t.shape(), nullptr);
    return t.node;
}

int Tape::push(std::vector<int> parents, std::vector<int> out_shape, BackwardFn fn) {
    int id = static_cast<int>(nodes_.size());
    for (int p : parents)
        if (p >= id) throw contract_error("tape parents must precede children");
    nodes_.push_back({std::move(parents), std::move(out_shape), std::move(fn)});
    return id;
}

void Tape::backward(int loss_node) {
    if (loss_node < 0 || loss_node >= static_cast<int>(nodes_.size()))
        throw contract_error("backward: loss node not on this tape");
    if (shape_product(nodes_[static_cast<std::size_t>(loss_node)].shape) != 1)
        throw contract_error("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor());
    grad_buffer(loss_node, nodes_[static_cast<std::size_t>(loss_node)].shape)[0] = 1.0f;
    for (int i = loss_node; i >= 0; --i) {
        auto& node = nodes_[static_cast<std::size_t>(i)];
        if (!grads_[static_cast<std::size_t>(i)].defined() || !node.fn) continue;
        node.fn(*this, grads_[static_cast<std::size_t>(i)]);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.node < 0 || t.node >= static_cast<int>(nodes_.size()))
        throw contract_error("grad: tensor is not on this tape");
    const Tensor& g = grads_[static_cast<std::size_t>(t.node)];
    if (g.defined()) return g;
    return Tensor::zeros(t.shape());
}

Tensor& Tape::grad_buffer(int node, const std::vector<int>& shape) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    Tensor& g = grads_[static_cast<std::size_t>(node)];
    if (!g.defined()) g = Tensor::zeros(shape);
    return g;
}

bool Tape::has_grad(int node) const {
    return node >= 0 && node < static_cast<int>(grads_.size()) &&
           grads_[static_cast<std::size_t>(node)].defined();
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
}

// ---------------------------------------------------------------------------
// GEMM, f32 storage with f64 accumulators.

namespace {

thread_local std::vector<double> g_acc;
thread_local std::vector<float> g_scratch;

} // namespace

void gemm_nn(const float* A, const float* B, float* C, int M, int K, int N) {
    if (g_acc.size() < static_cast<std::size_t>(N)) g_acc.resize(static_cast<std::size_t>(N));
    double* acc = g_acc.data();
    for (int m = 0; m < M; ++m) {
        for (int n = 0; n < N; ++n) acc[n] = 0.0;
        const float* a = A + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            double av = a[k];
            const float* b = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) acc[n] += av * static_cast<double>(b[n]);
        }
        float* c = C + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) c[n] = static_cast<float>(acc[n]);
    }
}

void gemm_nn_acc(const float* A, const float* B, float* C, int M, int K, int N) {
    if (g_acc.size() < static_cast<std::size_t>(N)) g_acc.resize(static_cast<std::size_t>(N));
    double* acc = g_acc.data();
    for (int m = 0; m < M; ++m) {
        float* c = C + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) acc[n] = static_cast<double>(c[n]);
        const float* a = A + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            double av = a[k];
            const float* b = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) acc[n] += av * static_cast<double>(b[n]);
        }
        for (int n = 0; n < N; ++n) c[n] = static_cast<float>(acc[n]);
    }
}

void gemm_nt(const float* A, const float* B, float* C, int M, int K, int N) {
    // Transpose B once, then reuse the nn kernel.
    if (g_scratch.size() < static_cast<std::size_t>(K) * N)
        g_scratch.resize(static_cast<std::size_t>(K) * N);
    float* bt = g_scratch.data();
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
            bt[static_cast<std::size_t>(k) * N + n] = B[static_cast<std::size_t>(n) * K + k];
    gemm_nn(A, bt, C, M, K, N);
}

void gemm_tn(const float* A, const float* B, float* C, int M, int K, int N) {
    if (g_acc.size() < static_cast<std::size_t>(M) * N) g_acc.resize(static_cast<std::size_t>(M) * N);
    double* acc = g_acc.data();
    std::fill(acc, acc + static_cast<std::size_t>(M) * N, 0.0);
    for (int k = 0; k < K; ++k) {
        const float* a = A + static_cast<std::size_t>(k) * M;
        const float* b = B + static_cast<std::size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            double av = a[m];
            double* row = acc + static_cast<std::size_t>(m) * N;
            for (int n = 0; n < N; ++n) row[n] += av * static_cast<double>(b[n]);
        }
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(M) * N; ++i)
        C[i] = static_cast<float>(acc[i]);
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation) via im2col.

namespace {

struct ConvDims {
    int B, Cin, H, W, Cout, kH, kW, OH, OW;
    bool batched;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.rank() != 3 && input.rank() != 4)
        throw dim_error("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(input.shape()));
    if (kernels.rank() != 4)
        throw dim_error("conv2d: kernels must be [Cout,Cin,kH,kW], got " + shape_str(kernels.shape()));
    if (stride < 1) throw contract_error("conv2d: stride must be >= 1");
    if (padding < 0) throw contract_error("conv2d: padding must be >= 0");
    ConvDims d;
    d.batched = input.rank() == 4;
    d.B = d.batched ? input.dim(0) : 1;
    d.Cin = input.dim(d.batched ? 1 : 0);
    d.H = input.dim(d.batched ? 2 : 1);
    d.W = input.dim(d.batched ? 3 : 2);
    d.Cout = kernels.dim(0);
    d.kH = kernels.dim(2);
    d.kW = kernels.dim(3);
    if (kernels.dim(1) != d.Cin)
        throw dim_error("conv2d: kernel expects " + std::to_string(kernels.dim(1)) +
                        " input channels, input has " + std::to_string(d.Cin));
    int Hp = d.H + 2 * padding, Wp = d.W + 2 * padding;
    if (d.kH > Hp || d.kW > Wp)
        throw dim_error("conv2d: kernel " + std::to_string(d.kH) + "x" + std::to_string(d.kW) +
                        " larger than padded input " + std::to_string(Hp) + "x" + std::to_string(Wp));
    d.OH = (Hp - d.kH) / stride + 1;
    d.OW = (Wp - d.kW) / stride + 1;
    return d;
}

void im2col(const float* x, const ConvDims& d, int stride, int pad, float* col) {
    const int OHW = d.OH * d.OW;
    for (int ci = 0; ci < d.Cin; ++ci) {
        const float* plane = x + static_cast<std::size_t>(ci) * d.H * d.W;
        for (int ky = 0; ky < d.kH; ++ky) {
            for (int kx = 0; kx < d.kW; ++kx) {
                float* row = col + (static_cast<std::size_t>(ci) * d.kH * d.kW +
                                    static_cast<std::size_t>(ky) * d.kW + kx) * OHW;
                for (int oy = 0; oy < d.OH; ++oy) {
                    int iy = oy * stride + ky - pad;
                    float* out = row + static_cast<std::size_t>(oy) * d.OW;
                    if (iy < 0 || iy >= d.H) {
                        std::fill(out, out + d.OW, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * d.W;
                    for (int ox = 0; ox < d.OW; ++ox) {
                        int ix = ox * stride + kx - pad;
                        out[ox] = (ix >= 0 && ix < d.W) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, const ConvDims& d, int stride, int pad, float* dx) {
    const int OHW = d.OH * d.OW;
    for (int ci = 0; ci < d.Cin; ++ci) {
        float* plane = dx + static_cast<std::size_t>(ci) * d.H * d.W;
        for (int ky = 0; ky < d.kH; ++ky) {
            for (int kx = 0; kx < d.kW; ++kx) {
                const float* row = col + (static_cast<std::size_t>(ci) * d.kH * d.kW +
                                          static_cast<std::size_t>(ky) * d.kW + kx) * OHW;
                for (int oy = 0; oy < d.OH; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= d.H) continue;
                    float* dst = plane + static_cast<std::size_t>(iy) * d.W;
                    const float* src = row + static_cast<std::size_t>(oy) * d.OW;
                    for (int ox = 0; ox < d.OW; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

thread_local std::vector<float> g_col;

} // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernels, int stride, int padding) {
    ConvDims d = conv_dims(input, kernels, stride, padding);
    const int Kdim = d.Cin * d.kH * d.kW;
    const int OHW = d.OH * d.OW;

    std::vector<int> out_shape = d.batched ? std::vector<int>{d.B, d.Cout, d.OH, d.OW}
                                           : std::vector<int>{d.Cout, d.OH, d.OW};
    Tensor out(out_shape);
    if (g_col.size() < static_cast<std::size_t>(Kdim) * OHW)
        g_col.resize(static_cast<std::size_t>(Kdim) * OHW);
    const std::size_t sample_in = static_cast<std::size_t>(d.Cin) * d.H * d.W;
    const std::size_t sample_out = static_cast<std::size_t>(d.Cout) * OHW;
    for (int b = 0; b < d.B; ++b) {
        im2col(input.data() + b * sample_in, d, stride, padding, g_col.data());
        gemm_nn(kernels.data(), g_col.data(), out.data() + b * sample_out, d.Cout, Kdim, OHW);
    }

    if (tape) {
        Tensor in_saved = input, k_saved = kernels;
        out.node = tape->push(
            {input.node, kernels.node}, out_shape,
            [in_saved, k_saved, d, stride, padding, Kdim, OHW, sample_in, sample_out](
                Tape& t, const Tensor& gout) {
                std::vector<float> col(static_cast<std::size_t>(Kdim) * OHW);
                std::vector<float> dcol(static_cast<std::size_t>(Kdim) * OHW);
                bool want_dx = in_saved.node >= 0;
                bool want_dk = k_saved.node >= 0;
                Tensor* dx = want_dx ? &t.grad_buffer(in_saved.node, in_saved.shape()) : nullptr;
                Tensor* dk = want_dk ? &t.grad_buffer(k_saved.node, k_saved.shape()) : nullptr;
                for (int b = 0; b < d.B; ++b) {
                    const float* go = gout.data() + b * sample_out;
                    if (want_dk) {
                        im2col(in_saved.data() + b * sample_in, d, stride, padding, col.data());
                        // dK[co,k] += sum_pos gout[co,pos] * col[k,pos]
                        std::vector<float> dk_sample(static_cast<std::size_t>(d.Cout) * Kdim);
                        gemm_nt(go, col.data(), dk_sample.data(), d.Cout, OHW, Kdim);
                        for (std::size_t i = 0; i < dk_sample.size(); ++i)
                            (*dk)[i] += dk_sample[i];
                    }
                    if (want_dx) {
                        // dcol[k,pos] = sum_co kernels[co,k] * gout[co,pos]
                        gemm_tn(k_saved.data(), go, dcol.data(), Kdim, d.Cout, OHW);
                        col2im_add(dcol.data(), d, stride, padding, dx->data() + b * sample_in);
                    }
                }
            });
    }
    return out;
}

Tensor bias_add_channel(Tape* tape, const Tensor& input, const Tensor& bias) {
    if (input.rank() != 3 && input.rank() != 4)
        throw dim_error("bias_add_channel: input must be [C,H,W] or [N,C,H,W]");
    bool batched = input.rank() == 4;
    int B = batched ? input.dim(0) : 1;
    int C = input.dim(batched ? 1 : 0);
    std::size_t hw = static_cast<std::size_t>(input.dim(batched ? 2 : 1)) * input.dim(batched ? 3 : 2);
    if (bias.rank() != 1 || bias.dim(0) != C)
        throw dim_error("bias_add_channel: bias length must equal channel count " + std::to_string(C));

    Tensor out(input.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* src = input.data() + (static_cast<std::size_t>(b) * C + c) * hw;
            float* dst = out.data() + (static_cast<std::size_t>(b) * C + c) * hw;
            float bv = bias[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
        }

    if (tape) {
        Tensor in_saved = input, b_saved = bias;
        out.node = tape->push({input.node, bias.node}, input.shape(),
                              [in_saved, b_saved, B, C, hw](Tape& t, const Tensor& gout) {
                                  if (in_saved.node >= 0) {
                                      Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                      for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i];
                                  }
                                  if (b_saved.node >= 0) {
                                      Tensor& db = t.grad_buffer(b_saved.node, b_saved.shape());
                                      for (int b = 0; b < B; ++b)
                                          for (int c = 0; c < C; ++c) {
                                              const float* g = gout.data() +
                                                  (static_cast<std::size_t>(b) * C + c) * hw;
                                              double s = 0.0;
                                              for (std::size_t i = 0; i < hw; ++i) s += g[i];
                                              db[static_cast<std::size_t>(c)] += static_cast<float>(s);
                                          }
                                  }
                              });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pooling.

Tensor pool2d(Tape* tape, const Tensor& input, int window, int stride, PoolMode mode) {
    if (input.rank() != 3 && input.rank() != 4)
        throw dim_error("pool2d: input must be [C,H,W] or [N,C,H,W]");
    if (window < 1 || stride < 1) throw contract_error("pool2d: window and stride must be >= 1");
    bool batched = input.rank() == 4;
    int B = batched ? input.dim(0) : 1;
    int C = input.dim(batched ? 1 : 0);
    int H = input.dim(batched ? 2 : 1);
    int W = input.dim(batched ? 3 : 2);
    if (window > H || window > W)
        throw dim_error("pool2d: window " + std::to_string(window) + " exceeds spatial dims " +
                        std::to_string(H) + "x" + std::to_string(W));
    int OH = (H - window) / stride + 1;
    int OW = (W - window) / stride + 1;

    std::vector<int> out_shape = batched ? std::vector<int>{B, C, OH, OW}
                                         : std::vector<int>{C, OH, OW};
    Tensor out(out_shape);
    // Argmax positions (row-major first wins) for max-pool backward.
    std::shared_ptr<std::vector<int>> argmax;
    if (mode == PoolMode::Max) argmax = std::make_shared<std::vector<int>>(out.size());

    const double inv_area = 1.0 / (static_cast<double>(window) * window);
    std::size_t oi = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* plane = input.data() + (static_cast<std::size_t>(b) * C + c) *
                                                    static_cast<std::size_t>(H) * W;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox, ++oi) {
                    int y0 = oy * stride, x0 = ox * stride;
                    if (mode == PoolMode::Avg) {
                        double s = 0.0;
                        for (int y = 0; y < window; ++y)
                            for (int x = 0; x < window; ++x)
                                s += plane[static_cast<std::size_t>(y0 + y) * W + x0 + x];
                        out[oi] = static_cast<float>(s * inv_area);
                    } else {
                        float best = -std::numeric_limits<float>::infinity();
                        int best_idx = 0;
                        for (int y = 0; y < window; ++y)
                            for (int x = 0; x < window; ++x) {
                                int idx = (y0 + y) * W + (x0 + x);
                                float v = plane[static_cast<std::size_t>(idx)];
                                if (v > best) {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        out[oi] = best;
                        (*argmax)[oi] = best_idx;
                    }
                }
        }

    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        float inv_area_f = static_cast<float>(inv_area);
        out.node = tape->push(
            {input.node}, out_shape,
            [in_saved, argmax, mode, B, C, H, W, OH, OW, window, stride,
             inv_area_f](Tape& t, const Tensor& gout) {
                Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                std::size_t oi = 0;
                for (int b = 0; b < B; ++b)
                    for (int c = 0; c < C; ++c) {
                        float* plane = dx.data() + (static_cast<std::size_t>(b) * C + c) *
                                                       static_cast<std::size_t>(H) * W;
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox, ++oi) {
                                float g = gout[oi];
                                if (mode == PoolMode::Avg) {
                                    int y0 = oy * stride, x0 = ox * stride;
                                    float share = g * inv_area_f;
                                    for (int y = 0; y < window; ++y)
                                        for (int x = 0; x < window; ++x)
                                            plane[static_cast<std::size_t>(y0 + y) * W + x0 + x] += share;
                                } else {
                                    plane[static_cast<std::size_t>((*argmax)[oi])] += g;
                                }
                            }
                    }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense.

Tensor dense(Tape* tape, const Tensor& input, const Tensor& weights, const Tensor& bias) {
    if (input.rank() != 1 && input.rank() != 2)
        throw dim_error("dense: input must be [N] or [B,N], got " + shape_str(input.shape()));
    if (weights.rank() != 2) throw dim_error("dense: weights must be [M,N]");
    bool batched = input.rank() == 2;
    int B = batched ? input.dim(0) : 1;
    int N = input.dim(batched ? 1 : 0);
    int M = weights.dim(0);
    if (weights.dim(1) != N)
        throw dim_error("dense: weights expect input length " + std::to_string(weights.dim(1)) +
                        ", got " + std::to_string(N));
    if (bias.rank() != 1 || bias.dim(0) != M)
        throw dim_error("dense: bias length must be " + std::to_string(M));

    std::vector<int> out_shape = batched ? std::vector<int>{B, M} : std::vector<int>{M};
    Tensor out(out_shape);
    gemm_nt(input.data(), weights.data(), out.data(), B, N, M);
    for (int b = 0; b < B; ++b) {
        float* row = out.data() + static_cast<std::size_t>(b) * M;
        for (int m = 0; m < M; ++m) row[m] += bias[static_cast<std::size_t>(m)];
    }

    if (tape) {
        Tensor in_saved = input, w_saved = weights, b_saved = bias;
        out.node = tape->push(
            {input.node, weights.node, bias.node}, out_shape,
            [in_saved, w_saved, b_saved, B, N, M](Tape& t, const Tensor& gout) {
                if (in_saved.node >= 0) {
                    Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                    gemm_nn_acc(gout.data(), w_saved.data(), dx.data(), B, M, N);
                }
                if (w_saved.node >= 0) {
                    Tensor& dw = t.grad_buffer(w_saved.node, w_saved.shape());
                    std::vector<float> tmp(static_cast<std::size_t>(M) * N);
                    gemm_tn(gout.data(), in_saved.data(), tmp.data(), M, B, N);
                    for (std::size_t i = 0; i < tmp.size(); ++i) dw[i] += tmp[i];
                }
                if (b_saved.node >= 0) {
                    Tensor& db = t.grad_buffer(b_saved.node, b_saved.shape());
                    for (int m = 0; m < M; ++m) {
                        double s = 0.0;
                        for (int b = 0; b < B; ++b)
                            s += gout[static_cast<std::size_t>(b) * M + m];
                        db[static_cast<std::size_t>(m)] += static_cast<float>(s);
                    }
                }
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise and row-wise ops.

Tensor relu(Tape* tape, const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push({input.node}, input.shape(),
                              [in_saved](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t i = 0; i < gout.size(); ++i)
                                      if (in_saved[i] > 0.0f) dx[i] += gout[i];
                              });
    }
    return out;
}

Tensor softmax(Tape* tape, const Tensor& input) {
    if (input.rank() < 1) throw dim_error("softmax: input must have at least one axis");
    int last = input.dim(input.rank() - 1);
    std::size_t rows = input.size() / static_cast<std::size_t>(last);
    Tensor out(input.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = input.data() + r * static_cast<std::size_t>(last);
        float* y = out.data() + r * static_cast<std::size_t>(last);
        float mx = x[0];
        for (int i = 1; i < last; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (int i = 0; i < last; ++i) {
            double e = std::exp(static_cast<double>(x[i]) - mx);
            y[i] = static_cast<float>(e);
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int i = 0; i < last; ++i) y[i] = static_cast<float>(y[i] * inv);
    }
    if (tape && input.node >= 0) {
        Tensor in_saved = input, out_saved = out;
        out.node = tape->push({input.node}, input.shape(),
                              [in_saved, out_saved, rows, last](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      std::size_t off = r * static_cast<std::size_t>(last);
                                      double dot = 0.0;
                                      for (int i = 0; i < last; ++i)
                                          dot += static_cast<double>(gout[off + i]) * out_saved[off + i];
                                      for (int i = 0; i < last; ++i)
                                          dx[off + i] += static_cast<float>(
                                              (static_cast<double>(gout[off + i]) - dot) * out_saved[off + i]);
                                  }
                              });
    }
    return out;
}

Tensor activation(Tape* tape, const Tensor& input, ActKind kind) {
    return kind == ActKind::Relu ? relu(tape, input) : softmax(tape, input);
}

Tensor sigmoid(Tape* tape, const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        float x = input[i];
        if (x >= 0.0f) {
            float e = std::exp(-x);
            out[i] = 1.0f / (1.0f + e);
        } else {
            float e = std::exp(x);
            out[i] = e / (1.0f + e);
        }
    }
    if (tape && input.node >= 0) {
        Tensor in_saved = input, out_saved = out;
        out.node = tape->push({input.node}, input.shape(),
                              [in_saved, out_saved](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t i = 0; i < gout.size(); ++i) {
                                      float y = out_saved[i];
                                      dx[i] += gout[i] * y * (1.0f - y);
                                  }
                              });
    }
    return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw dim_error("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    if (tape && (a.node >= 0 || b.node >= 0)) {
        Tensor a_saved = a, b_saved = b;
        out.node = tape->push({a.node, b.node}, a.shape(),
                              [a_saved, b_saved](Tape& t, const Tensor& gout) {
                                  if (a_saved.node >= 0) {
                                      Tensor& da = t.grad_buffer(a_saved.node, a_saved.shape());
                                      for (std::size_t i = 0; i < gout.size(); ++i) da[i] += gout[i];
                                  }
                                  if (b_saved.node >= 0) {
                                      Tensor& db = t.grad_buffer(b_saved.node, b_saved.shape());
                                      for (std::size_t i = 0; i < gout.size(); ++i) db[i] += gout[i];
                                  }
                              });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& input, float alpha) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] * alpha;
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push({input.node}, input.shape(),
                              [in_saved, alpha](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i] * alpha;
                              });
    }
    return out;
}

Tensor reshape_op(Tape* tape, const Tensor& input, std::vector<int> new_shape) {
    Tensor out = input.reshape(new_shape);
    out.node = -1;
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push({input.node}, std::move(new_shape),
                              [in_saved](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t i = 0; i < gout.size(); ++i) dx[i] += gout[i];
                              });
    }
    return out;
}

Tensor zero_pad2d(Tape* tape, const Tensor& input, int amount) {
    if (amount < 0) throw contract_error("zero_pad2d: amount must be >= 0");
    if (input.rank() != 3 && input.rank() != 4)
        throw dim_error("zero_pad2d: input must be [C,H,W] or [N,C,H,W]");
    bool batched = input.rank() == 4;
    int B = batched ? input.dim(0) : 1;
    int C = input.dim(batched ? 1 : 0);
    int H = input.dim(batched ? 2 : 1);
    int W = input.dim(batched ? 3 : 2);
    int Hp = H + 2 * amount, Wp = W + 2 * amount;
    std::vector<int> out_shape = batched ? std::vector<int>{B, C, Hp, Wp}
                                         : std::vector<int>{C, Hp, Wp};
    Tensor out(out_shape);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
                const float* src = input.data() +
                    ((static_cast<std::size_t>(b) * C + c) * H + y) * static_cast<std::size_t>(W);
                float* dst = out.data() +
                    ((static_cast<std::size_t>(b) * C + c) * Hp + y + amount) * static_cast<std::size_t>(Wp) +
                    amount;
                std::memcpy(dst, src, static_cast<std::size_t>(W) * sizeof(float));
            }
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push({input.node}, out_shape,
                              [in_saved, B, C, H, W, Hp, Wp, amount](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (int b = 0; b < B; ++b)
                                      for (int c = 0; c < C; ++c)
                                          for (int y = 0; y < H; ++y) {
                                              const float* g = gout.data() +
                                                  ((static_cast<std::size_t>(b) * C + c) * Hp + y + amount) *
                                                      static_cast<std::size_t>(Wp) + amount;
                                              float* d = dx.data() +
                                                  ((static_cast<std::size_t>(b) * C + c) * H + y) *
                                                      static_cast<std::size_t>(W);
                                              for (int x = 0; x < W; ++x) d[x] += g[x];
                                          }
                              });
    }
    return out;
}

Tensor dropout(Tape* tape, const Tensor& input, float rate, RandomStream& rng) {
    if (rate < 0.0f || rate >= 1.0f) throw contract_error("dropout: rate must be in [0,1)");
    float keep = 1.0f - rate;
    float inv_keep = 1.0f / keep;
    auto factors = std::make_shared<std::vector<float>>(input.size());
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        float f = rng.uniform() >= rate ? inv_keep : 0.0f;
        (*factors)[i] = f;
        out[i] = input[i] * f;
    }
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push({input.node}, input.shape(),
                              [in_saved, factors](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t i = 0; i < gout.size(); ++i)
                                      dx[i] += gout[i] * (*factors)[i];
                              });
    }
    return out;
}

Tensor batchnorm_fixed(Tape* tape, const Tensor& input,
                       const std::vector<float>& gamma, const std::vector<float>& beta,
                       const std::vector<float>& mean, const std::vector<float>& var,
                       float eps) {
    std::size_t C = gamma.size();
    if (beta.size() != C || mean.size() != C || var.size() != C)
        throw dim_error("batchnorm: parameter vectors must share one channel count");
    int channel_axis = input.rank() >= 3 ? input.rank() - 3 : input.rank() - 1;
    if (channel_axis < 0 || static_cast<std::size_t>(input.dim(channel_axis)) != C)
        throw dim_error("batchnorm: channel axis size does not match parameters");

    std::size_t inner = 1;
    for (int i = channel_axis + 1; i < input.rank(); ++i) inner *= static_cast<std::size_t>(input.dim(i));
    std::size_t outer = input.size() / (C * inner);

    auto scale_v = std::make_shared<std::vector<float>>(C);
    std::vector<float> shift(C);
    for (std::size_t c = 0; c < C; ++c) {
        double s = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(var[c]) + eps);
        (*scale_v)[c] = static_cast<float>(s);
        shift[c] = static_cast<float>(static_cast<double>(beta[c]) - s * mean[c]);
    }
    Tensor out(input.shape());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < C; ++c) {
            const float* src = input.data() + (o * C + c) * inner;
            float* dst = out.data() + (o * C + c) * inner;
            float sc = (*scale_v)[c], sh = shift[c];
            for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i] * sc + sh;
        }
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push({input.node}, input.shape(),
                              [in_saved, scale_v, outer, C, inner](Tape& t, const Tensor& gout) {
                                  Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                                  for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t c = 0; c < C; ++c) {
                                          const float* g = gout.data() + (o * C + c) * inner;
                                          float* d = dx.data() + (o * C + c) * inner;
                                          float sc = (*scale_v)[c];
                                          for (std::size_t i = 0; i < inner; ++i) d[i] += g[i] * sc;
                                      }
                              });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses.

Tensor cross_entropy_logits(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 1 && logits.rank() != 2)
        throw dim_error("cross_entropy: logits must be [K] or [B,K]");
    bool batched = logits.rank() == 2;
    int B = batched ? logits.dim(0) : 1;
    int K = logits.dim(batched ? 1 : 0);
    if (static_cast<int>(labels.size()) != B)
        throw contract_error("cross_entropy: need one label per row");
    for (int l : labels)
        if (l < 0 || l >= K) throw contract_error("cross_entropy: label out of range");

    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(B) * K);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* z = logits.data() + static_cast<std::size_t>(b) * K;
        float mx = z[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, z[k]);
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(z[k]) - mx);
        double lse = std::log(sum) + mx;
        total += lse - z[labels[static_cast<std::size_t>(b)]];
        for (int k = 0; k < K; ++k)
            (*probs)[static_cast<std::size_t>(b) * K + k] =
                static_cast<float>(std::exp(static_cast<double>(z[k]) - lse));
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / B));
    if (tape && logits.node >= 0) {
        Tensor z_saved = logits;
        auto labels_saved = labels;
        out.node = tape->push({logits.node}, {1},
                              [z_saved, probs, labels_saved, B, K](Tape& t, const Tensor& gout) {
                                  Tensor& dz = t.grad_buffer(z_saved.node, z_saved.shape());
                                  float g = gout[0] / static_cast<float>(B);
                                  for (int b = 0; b < B; ++b)
                                      for (int k = 0; k < K; ++k) {
                                          float p = (*probs)[static_cast<std::size_t>(b) * K + k];
                                          float onehot = k == labels_saved[static_cast<std::size_t>(b)] ? 1.0f : 0.0f;
                                          dz[static_cast<std::size_t>(b) * K + k] += g * (p - onehot);
                                      }
                              });
    }
    return out;
}

Tensor sse_loss(Tape* tape, const Tensor& predicted, const Tensor& target) {
    if (predicted.shape() != target.shape())
        throw dim_error("sse_loss: shape mismatch " + shape_str(predicted.shape()) + " vs " +
                        shape_str(target.shape()));
    int B = predicted.rank() >= 2 ? predicted.dim(0) : 1;
    double total = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        double d = static_cast<double>(predicted[i]) - target[i];
        total += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / B));
    if (tape && predicted.node >= 0) {
        Tensor p_saved = predicted, t_saved = target;
        out.node = tape->push({predicted.node}, {1},
                              [p_saved, t_saved, B](Tape& t, const Tensor& gout) {
                                  Tensor& dp = t.grad_buffer(p_saved.node, p_saved.shape());
                                  float g = 2.0f * gout[0] / static_cast<float>(B);
                                  for (std::size_t i = 0; i < p_saved.size(); ++i)
                                      dp[i] += g * (p_saved[i] - t_saved[i]);
                              });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking.

double grad_check(const std::function<Tensor(Tape&, Tensor&)>& fn,
                  const Tensor& input, double eps) {
    if (!input.all_finite()) throw numeric_error("grad_check: input contains non-finite values");

    Tape tape;
    Tensor x = input.clone();
    tape.leaf(x);
    Tensor loss = fn(tape, x);
    if (loss.size() != 1) throw contract_error("grad_check: function must be scalar-valued");
    if (!loss.all_finite()) throw numeric_error("grad_check: function produced non-finite value");
    tape.backward(loss.node);
    Tensor analytic = tape.grad(x);

    auto eval = [&fn](Tensor& pt) {
        Tape t;
        t.leaf(pt);
        Tensor out = fn(t, pt);
        if (!out.all_finite()) throw numeric_error("grad_check: non-finite value during probing");
        return static_cast<double>(out[0]);
    };

    double worst = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        Tensor xp = input.clone();
        Tensor xm = input.clone();
        xp[i] = static_cast<float>(static_cast<double>(xp[i]) + eps);
        xm[i] = static_cast<float>(static_cast<double>(xm[i]) - eps);
        double h = static_cast<double>(xp[i]) - static_cast<double>(xm[i]);
        double fp = eval(xp);
        double fm = eval(xm);
        double cd = (fp - fm) / h;
        double an = analytic[i];
        double denom = std::max({std::fabs(an), std::fabs(cd), 1e-8});
        worst = std::max(worst, std::fabs(an - cd) / denom);
    }
    return worst;
}

} // namespace capspike
