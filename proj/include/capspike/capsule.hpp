#pragma once

// Capsule-specific computation: squash, primary capsules, routing by
// agreement, and the margin/reconstruction losses.

#include "capspike/tensor.hpp"

#include <vector>

namespace capspike {

// Squash nonlinearity applied to each row of [N, dim] (a rank-1 tensor is
// treated as a single capsule): s -> (||s||^2 / (1 + ||s||^2)) * s / ||s||.
// Zero rows map to zero (1e-8 norm guard).
Tensor squash_rows(Tape* tape, const Tensor& input);

// Per-pair prediction vectors: u_hat[i,j,:] = W[i,j] * u[i].
// u: [N_in, in_dim], W: [N_in, N_out, out_dim, in_dim] -> [N_in, N_out, out_dim].
Tensor caps_transform(Tape* tape, const Tensor& u, const Tensor& W);

// s[j,:] = sum_i c[i,j] * u_hat[i,j,:].
// c: [N_in, N_out], u_hat: [N_in, N_out, dim] -> [N_out, dim].
Tensor coupling_reduce(Tape* tape, const Tensor& c, const Tensor& u_hat);

// delta_b[i,j] = dot(u_hat[i,j,:], v[j,:]).
Tensor agreement(Tape* tape, const Tensor& u_hat, const Tensor& v);

// Capsule norms: [N, dim] -> [N].
Tensor caps_length(Tape* tape, const Tensor& v);

// Zero every capsule row except `index`, flattened to [N*dim] for a decoder.
Tensor caps_mask(Tape* tape, const Tensor& v, int index);

struct RoutingResult {
    Tensor v;                       // [N_out, dim]
    Tensor couplings;               // final c, [N_in, N_out] (detached)
    std::vector<Tensor> c_history;  // c after each iteration (detached)
};

// Routing by agreement over the unrolled iteration loop; gradients flow
// through every iteration. The logit update is skipped on the last pass.
RoutingResult dynamic_routing(Tape* tape, const Tensor& u_hat, int iters);

// Conv -> reshape [channels*H'*W', caps_dim] -> squash. kernels must have
// channels*caps_dim output channels.
Tensor primary_caps(Tape* tape, const Tensor& features, const Tensor& kernels,
                    const Tensor& bias, int channels, int caps_dim, int stride);

// Margin loss over class capsule lengths with m+ = 0.9, m- = 0.1, lambda = 0.5.
Tensor margin_loss(Tape* tape, const Tensor& lengths, int label);

// weight * SSE(decoded, image); shapes must match exactly.
Tensor reconstruction_loss(Tape* tape, const Tensor& decoded, const Tensor& image,
                           float weight);

constexpr float kMarginPlus = 0.9f;
constexpr float kMarginMinus = 0.1f;
constexpr float kMarginLambda = 0.5f;
constexpr float kReconstructionWeight = 0.0005f;

} // namespace capspike
