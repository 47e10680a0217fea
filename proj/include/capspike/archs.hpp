#pragma once

// Ready-made model architectures: the capsule network (full and reduced
// geometry), a small convertible CNN, a flat dense classifier, and a
// residual toy with skip connections.

#include "capspike/model.hpp"

#include <string>

namespace capspike {

// Conv(256, k9) -> dropout -> PrimaryCaps(32ch x 8d, k9, s2) -> dropout ->
// ClassCaps(3 x 16d, 3 routing iterations) -> decoder 512/1024/784.
// On 28x28 inputs the primary layer yields 32*6*6 = 1152 capsules.
ModelGraph build_capsnet(std::uint64_t seed);

// Same layout at desk scale: 32 conv filters and 8 primary channels
// (8*6*6 = 288 capsules). Trains orders of magnitude faster.
ModelGraph build_capsnet_small(std::uint64_t seed);

// Convertible CNN: conv/avgpool/zeropad/conv/batchnorm/dense stack ending in
// Softmax. Uses only layer kinds the spiking compiler accepts.
ModelGraph build_cnn(std::uint64_t seed);

// Flatten -> Dense(hidden) -> ReLU -> Dense(classes) -> Softmax over an
// arbitrary flat input; the spiking path uses it on PCA coordinates.
ModelGraph build_dense(int input_dim, int hidden, int classes, std::uint64_t seed);

// Conv stem plus `blocks` residual blocks (conv-bn-relu-conv-bn-add-relu),
// then avgpool and a dense head. Not convertible (Add is rejected).
ModelGraph build_resnet(int blocks, std::uint64_t seed);

// Lookup by CLI name: capsnet | capsnet-small | cnn | dense | resnet.
ModelGraph build_by_name(const std::string& name, std::uint64_t seed);

} // namespace capspike
