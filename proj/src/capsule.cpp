#include "capspike/capsule.hpp"

#include <cmath>

namespace capspike {

namespace {

constexpr double kNormGuard = 1e-8;

void squash_dims(const Tensor& input, int& rows, int& dim) {
    if (input.rank() == 1) {
        rows = 1;
        dim = input.dim(0);
    } else if (input.rank() == 2) {
        rows = input.dim(0);
        dim = input.dim(1);
    } else {
        throw dim_error("squash: expected [dim] or [N,dim], got " + shape_str(input.shape()));
    }
}

} // namespace

Tensor squash_rows(Tape* tape, const Tensor& input) {
    int rows, dim;
    squash_dims(input, rows, dim);
    Tensor out(input.shape());
    for (int r = 0; r < rows; ++r) {
        const float* s = input.data() + static_cast<std::size_t>(r) * dim;
        float* y = out.data() + static_cast<std::size_t>(r) * dim;
        double n2 = 0.0;
        for (int d = 0; d < dim; ++d) n2 += static_cast<double>(s[d]) * s[d];
        double n = std::sqrt(n2);
        if (n < kNormGuard) {
            for (int d = 0; d < dim; ++d) y[d] = 0.0f;
            continue;
        }
        double alpha = n / (1.0 + n2);
        for (int d = 0; d < dim; ++d) y[d] = static_cast<float>(alpha * s[d]);
    }
    if (tape && input.node >= 0) {
        Tensor in_saved = input;
        out.node = tape->push(
            {input.node}, input.shape(),
            [in_saved, rows, dim](Tape& t, const Tensor& gout) {
                Tensor& dx = t.grad_buffer(in_saved.node, in_saved.shape());
                for (int r = 0; r < rows; ++r) {
                    const float* s = in_saved.data() + static_cast<std::size_t>(r) * dim;
                    const float* g = gout.data() + static_cast<std::size_t>(r) * dim;
                    float* d = dx.data() + static_cast<std::size_t>(r) * dim;
                    double n2 = 0.0;
                    for (int i = 0; i < dim; ++i) n2 += static_cast<double>(s[i]) * s[i];
                    double n = std::sqrt(n2);
                    if (n < kNormGuard) continue; // flat at the origin
                    double alpha = n / (1.0 + n2);
                    // d(alpha)/d(n) = (1 - n^2) / (1 + n^2)^2
                    double dalpha = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                    double sg = 0.0;
                    for (int i = 0; i < dim; ++i) sg += static_cast<double>(s[i]) * g[i];
                    double coeff = dalpha / n * sg;
                    for (int i = 0; i < dim; ++i)
                        d[i] += static_cast<float>(alpha * g[i] + coeff * s[i]);
                }
            });
    }
    return out;
}

Tensor caps_transform(Tape* tape, const Tensor& u, const Tensor& W) {
    if (u.rank() != 2) throw dim_error("caps_transform: u must be [N_in, in_dim]");
    if (W.rank() != 4) throw dim_error("caps_transform: W must be [N_in, N_out, out_dim, in_dim]");
    int N_in = u.dim(0), in_dim = u.dim(1);
    int N_out = W.dim(1), out_dim = W.dim(2);
    if (W.dim(0) != N_in || W.dim(3) != in_dim)
        throw dim_error("caps_transform: W " + shape_str(W.shape()) + " does not match u " +
                        shape_str(u.shape()));

    Tensor out({N_in, N_out, out_dim});
    for (int i = 0; i < N_in; ++i) {
        const float* ui = u.data() + static_cast<std::size_t>(i) * in_dim;
        for (int j = 0; j < N_out; ++j) {
            const float* w = W.data() +
                ((static_cast<std::size_t>(i) * N_out + j) * out_dim) * in_dim;
            float* o = out.data() + (static_cast<std::size_t>(i) * N_out + j) * out_dim;
            for (int d = 0; d < out_dim; ++d) {
                const float* wrow = w + static_cast<std::size_t>(d) * in_dim;
                double acc = 0.0;
                for (int e = 0; e < in_dim; ++e)
                    acc += static_cast<double>(wrow[e]) * ui[e];
                o[d] = static_cast<float>(acc);
            }
        }
    }
    if (tape && (u.node >= 0 || W.node >= 0)) {
        Tensor u_saved = u, w_saved = W;
        out.node = tape->push(
            {u.node, W.node}, out.shape(),
            [u_saved, w_saved, N_in, N_out, in_dim, out_dim](Tape& t, const Tensor& gout) {
                Tensor* du = u_saved.node >= 0 ? &t.grad_buffer(u_saved.node, u_saved.shape()) : nullptr;
                Tensor* dw = w_saved.node >= 0 ? &t.grad_buffer(w_saved.node, w_saved.shape()) : nullptr;
                for (int i = 0; i < N_in; ++i) {
                    const float* ui = u_saved.data() + static_cast<std::size_t>(i) * in_dim;
                    for (int j = 0; j < N_out; ++j) {
                        std::size_t base = (static_cast<std::size_t>(i) * N_out + j) *
                                           static_cast<std::size_t>(out_dim);
                        const float* g = gout.data() + base;
                        const float* w = w_saved.data() + base * in_dim;
                        for (int d = 0; d < out_dim; ++d) {
                            float gd = g[d];
                            if (gd == 0.0f) continue;
                            const float* wrow = w + static_cast<std::size_t>(d) * in_dim;
                            if (du) {
                                float* dui = du->data() + static_cast<std::size_t>(i) * in_dim;
                                for (int e = 0; e < in_dim; ++e) dui[e] += gd * wrow[e];
                            }
                            if (dw) {
                                float* dwrow = dw->data() + base * in_dim +
                                               static_cast<std::size_t>(d) * in_dim;
                                for (int e = 0; e < in_dim; ++e) dwrow[e] += gd * ui[e];
                            }
                        }
                    }
                }
            });
    }
    return out;
}

Tensor coupling_reduce(Tape* tape, const Tensor& c, const Tensor& u_hat) {
    if (c.rank() != 2 || u_hat.rank() != 3)
        throw dim_error("coupling_reduce: expected c [N_in,N_out] and u_hat [N_in,N_out,dim]");
    int N_in = u_hat.dim(0), N_out = u_hat.dim(1), dim = u_hat.dim(2);
    if (c.dim(0) != N_in || c.dim(1) != N_out)
        throw dim_error("coupling_reduce: c " + shape_str(c.shape()) + " does not match u_hat " +
                        shape_str(u_hat.shape()));

    Tensor out({N_out, dim});
    std::vector<double> acc(static_cast<std::size_t>(N_out) * dim, 0.0);
    for (int i = 0; i < N_in; ++i)
        for (int j = 0; j < N_out; ++j) {
            double cij = c[static_cast<std::size_t>(i) * N_out + j];
            const float* uh = u_hat.data() + (static_cast<std::size_t>(i) * N_out + j) * dim;
            double* a = acc.data() + static_cast<std::size_t>(j) * dim;
            for (int d = 0; d < dim; ++d) a[d] += cij * uh[d];
        }
    for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k]);

    if (tape && (c.node >= 0 || u_hat.node >= 0)) {
        Tensor c_saved = c, u_saved = u_hat;
        out.node = tape->push(
            {c.node, u_hat.node}, out.shape(),
            [c_saved, u_saved, N_in, N_out, dim](Tape& t, const Tensor& gout) {
                Tensor* dc = c_saved.node >= 0 ? &t.grad_buffer(c_saved.node, c_saved.shape()) : nullptr;
                Tensor* du = u_saved.node >= 0 ? &t.grad_buffer(u_saved.node, u_saved.shape()) : nullptr;
                for (int i = 0; i < N_in; ++i)
                    for (int j = 0; j < N_out; ++j) {
                        std::size_t pair = static_cast<std::size_t>(i) * N_out + j;
                        const float* uh = u_saved.data() + pair * dim;
                        const float* g = gout.data() + static_cast<std::size_t>(j) * dim;
                        if (dc) {
                            double dot = 0.0;
                            for (int d = 0; d < dim; ++d)
                                dot += static_cast<double>(uh[d]) * g[d];
                            (*dc)[pair] += static_cast<float>(dot);
                        }
                        if (du) {
                            float cij = c_saved[pair];
                            float* duh = du->data() + pair * dim;
                            for (int d = 0; d < dim; ++d) duh[d] += cij * g[d];
                        }
                    }
            });
    }
    return out;
}

Tensor agreement(Tape* tape, const Tensor& u_hat, const Tensor& v) {
    if (u_hat.rank() != 3 || v.rank() != 2)
        throw dim_error("agreement: expected u_hat [N_in,N_out,dim] and v [N_out,dim]");
    int N_in = u_hat.dim(0), N_out = u_hat.dim(1), dim = u_hat.dim(2);
    if (v.dim(0) != N_out || v.dim(1) != dim)
        throw dim_error("agreement: v " + shape_str(v.shape()) + " does not match u_hat");

    Tensor out({N_in, N_out});
    for (int i = 0; i < N_in; ++i)
        for (int j = 0; j < N_out; ++j) {
            const float* uh = u_hat.data() + (static_cast<std::size_t>(i) * N_out + j) * dim;
            const float* vj = v.data() + static_cast<std::size_t>(j) * dim;
            double dot = 0.0;
            for (int d = 0; d < dim; ++d) dot += static_cast<double>(uh[d]) * vj[d];
            out[static_cast<std::size_t>(i) * N_out + j] = static_cast<float>(dot);
        }

    if (tape && (u_hat.node >= 0 || v.node >= 0)) {
        Tensor u_saved = u_hat, v_saved = v;
        out.node = tape->push(
            {u_hat.node, v.node}, out.shape(),
            [u_saved, v_saved, N_in, N_out, dim](Tape& t, const Tensor& gout) {
                Tensor* du = u_saved.node >= 0 ? &t.grad_buffer(u_saved.node, u_saved.shape()) : nullptr;
                Tensor* dv = v_saved.node >= 0 ? &t.grad_buffer(v_saved.node, v_saved.shape()) : nullptr;
                for (int i = 0; i < N_in; ++i)
                    for (int j = 0; j < N_out; ++j) {
                        std::size_t pair = static_cast<std::size_t>(i) * N_out + j;
                        float g = gout[pair];
                        if (g == 0.0f) continue;
                        const float* uh = u_saved.data() + pair * dim;
                        const float* vj = v_saved.data() + static_cast<std::size_t>(j) * dim;
                        if (du) {
                            float* d = du->data() + pair * dim;
                            for (int k = 0; k < dim; ++k) d[k] += g * vj[k];
                        }
                        if (dv) {
                            float* d = dv->data() + static_cast<std::size_t>(j) * dim;
                            for (int k = 0; k < dim; ++k) d[k] += g * uh[k];
                        }
                    }
            });
    }
    return out;
}

Tensor caps_length(Tape* tape, const Tensor& v) {
    if (v.rank() != 2) throw dim_error("caps_length: expected [N,dim]");
    int N = v.dim(0), dim = v.dim(1);
    Tensor out({N});
    for (int j = 0; j < N; ++j) {
        const float* row = v.data() + static_cast<std::size_t>(j) * dim;
        double n2 = 0.0;
        for (int d = 0; d < dim; ++d) n2 += static_cast<double>(row[d]) * row[d];
        out[static_cast<std::size_t>(j)] = static_cast<float>(std::sqrt(n2));
    }
    if (tape && v.node >= 0) {
        Tensor v_saved = v, out_saved = out;
        out.node = tape->push(
            {v.node}, out.shape(),
            [v_saved, out_saved, N, dim](Tape& t, const Tensor& gout) {
                Tensor& dv = t.grad_buffer(v_saved.node, v_saved.shape());
                for (int j = 0; j < N; ++j) {
                    float len = out_saved[static_cast<std::size_t>(j)];
                    if (len < static_cast<float>(kNormGuard)) continue;
                    float g = gout[static_cast<std::size_t>(j)] / len;
                    const float* row = v_saved.data() + static_cast<std::size_t>(j) * dim;
                    float* d = dv.data() + static_cast<std::size_t>(j) * dim;
                    for (int k = 0; k < dim; ++k) d[k] += g * row[k];
                }
            });
    }
    return out;
}

Tensor caps_mask(Tape* tape, const Tensor& v, int index) {
    if (v.rank() != 2) throw dim_error("caps_mask: expected [N,dim]");
    int N = v.dim(0), dim = v.dim(1);
    if (index < 0 || index >= N)
        throw contract_error("caps_mask: capsule index " + std::to_string(index) +
                             " out of range [0," + std::to_string(N) + ")");
    Tensor out({N * dim});
    const float* src = v.data() + static_cast<std::size_t>(index) * dim;
    for (int d = 0; d < dim; ++d)
        out[static_cast<std::size_t>(index) * dim + d] = src[d];
    if (tape && v.node >= 0) {
        Tensor v_saved = v;
        out.node = tape->push({v.node}, out.shape(),
                              [v_saved, index, dim](Tape& t, const Tensor& gout) {
                                  Tensor& dv = t.grad_buffer(v_saved.node, v_saved.shape());
                                  std::size_t off = static_cast<std::size_t>(index) * dim;
                                  for (int d = 0; d < dim; ++d) dv[off + d] += gout[off + d];
                              });
    }
    return out;
}

RoutingResult dynamic_routing(Tape* tape, const Tensor& u_hat, int iters) {
    if (iters < 1) throw contract_error("dynamic_routing: iters must be >= 1");
    if (u_hat.rank() != 3)
        throw dim_error("dynamic_routing: u_hat must be [N_in, N_out, dim]");
    if (!u_hat.all_finite()) throw numeric_error("dynamic_routing: u_hat contains non-finite values");
    int N_in = u_hat.dim(0), N_out = u_hat.dim(1);

    RoutingResult result;
    Tensor b = Tensor::zeros({N_in, N_out}); // logits start at zero, constant
    Tensor v;
    for (int iter = 0; iter < iters; ++iter) {
        Tensor c = softmax(tape, b);
        Tensor s = coupling_reduce(tape, c, u_hat);
        v = squash_rows(tape, s);
        result.c_history.push_back(c.clone());
        if (iter + 1 < iters) {
            Tensor delta = agreement(tape, u_hat, v);
            b = add(tape, b, delta);
        }
    }
    result.v = v;
    result.couplings = result.c_history.back();
    return result;
}

Tensor primary_caps(Tape* tape, const Tensor& features, const Tensor& kernels,
                    const Tensor& bias, int channels, int caps_dim, int stride) {
    if (kernels.rank() != 4) throw dim_error("primary_caps: kernels must be rank 4");
    if (kernels.dim(0) != channels * caps_dim)
        throw dim_error("primary_caps: kernel output channels " + std::to_string(kernels.dim(0)) +
                        " != channels*caps_dim = " + std::to_string(channels * caps_dim));
    Tensor conv = conv2d(tape, features, kernels, stride, 0);
    conv = bias_add_channel(tape, conv, bias);
    int OH = conv.dim(conv.rank() - 2), OW = conv.dim(conv.rank() - 1);
    // [channels*caps_dim, H', W'] -> capsules [channels*H'*W', caps_dim]:
    // each channel group of caps_dim planes supplies one capsule per position.
    int n_caps = channels * OH * OW;
    Tensor caps({n_caps, caps_dim});
    for (int ch = 0; ch < channels; ++ch)
        for (int y = 0; y < OH; ++y)
            for (int x = 0; x < OW; ++x) {
                int cap = (ch * OH + y) * OW + x;
                for (int d = 0; d < caps_dim; ++d)
                    caps[static_cast<std::size_t>(cap) * caps_dim + d] =
                        conv[((static_cast<std::size_t>(ch) * caps_dim + d) * OH + y) * OW + x];
            }
    if (tape && conv.node >= 0) {
        Tensor conv_saved = conv;
        caps.node = tape->push(
            {conv.node}, caps.shape(),
            [conv_saved, channels, caps_dim, OH, OW](Tape& t, const Tensor& gout) {
                Tensor& dc = t.grad_buffer(conv_saved.node, conv_saved.shape());
                for (int ch = 0; ch < channels; ++ch)
                    for (int y = 0; y < OH; ++y)
                        for (int x = 0; x < OW; ++x) {
                            int cap = (ch * OH + y) * OW + x;
                            for (int d = 0; d < caps_dim; ++d)
                                dc[((static_cast<std::size_t>(ch) * caps_dim + d) * OH + y) * OW + x] +=
                                    gout[static_cast<std::size_t>(cap) * caps_dim + d];
                        }
            });
    }
    return squash_rows(tape, caps);
}

Tensor margin_loss(Tape* tape, const Tensor& lengths, int label) {
    if (lengths.rank() != 1) throw dim_error("margin_loss: lengths must be rank 1");
    int K = lengths.dim(0);
    if (label < 0 || label >= K)
        throw contract_error("margin_loss: label " + std::to_string(label) + " out of range");
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
        double l = lengths[static_cast<std::size_t>(k)];
        if (k == label) {
            double h = std::max(0.0, kMarginPlus - l);
            total += h * h;
        } else {
            double h = std::max(0.0, l - kMarginMinus);
            total += kMarginLambda * h * h;
        }
    }
    Tensor out = Tensor::scalar(static_cast<float>(total));
    if (tape && lengths.node >= 0) {
        Tensor l_saved = lengths;
        out.node = tape->push(
            {lengths.node}, {1},
            [l_saved, label, K](Tape& t, const Tensor& gout) {
                Tensor& dl = t.grad_buffer(l_saved.node, l_saved.shape());
                float g = gout[0];
                for (int k = 0; k < K; ++k) {
                    float l = l_saved[static_cast<std::size_t>(k)];
                    if (k == label) {
                        if (l < kMarginPlus)
                            dl[static_cast<std::size_t>(k)] += g * -2.0f * (kMarginPlus - l);
                    } else {
                        if (l > kMarginMinus)
                            dl[static_cast<std::size_t>(k)] += g * 2.0f * kMarginLambda * (l - kMarginMinus);
                    }
                }
            });
    }
    return out;
}

Tensor reconstruction_loss(Tape* tape, const Tensor& decoded, const Tensor& image,
                           float weight) {
    if (decoded.shape() != image.shape() && decoded.size() != image.size())
        throw dim_error("reconstruction_loss: decoded " + shape_str(decoded.shape()) +
                        " vs image " + shape_str(image.shape()));
    int n = static_cast<int>(decoded.size());
    Tensor flat_d = tape ? reshape_op(tape, decoded, {n}) : decoded.reshape({n});
    Tensor flat_i = image.reshape({n});
    Tensor sse = sse_loss(tape, flat_d, flat_i);
    return scale(tape, sse, weight);
}

} // namespace capspike
