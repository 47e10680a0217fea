#pragma once

// CNN -> SNN compilation: batchnorm folding, supported-layer validation, and
// data-based activation normalization. Every supported layer is lowered to a
// dense matrix so the simulator needs a single kernel (matvec + threshold).

#include "capspike/dataset.hpp"
#include "capspike/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace capspike {

enum class InputEncoding { ConstantCurrent, Poisson };

struct SpikingLayer {
    int in_size = 0;
    int out_size = 0;
    Tensor weights;                  // [out_size, in_size]
    std::vector<float> bias_current; // injected every timestep
    float threshold = 1.0f;
};

struct SpikingNetwork {
    int input_size = 0;
    int class_count = 0;
    InputEncoding encoding = InputEncoding::ConstantCurrent;
    std::vector<SpikingLayer> layers;
};

struct ConversionReport {
    std::vector<double> scale_factors; // lambda per spiking layer
    double percentile = 0.0;
    std::vector<std::string> violations; // filled by validate_convertible paths
    double ann_accuracy = 0.0;  // fraction correct on the calibration set
    double snn_accuracy = 0.0;  // same set, default 256-step constant current
    double conversion_gap = 0.0; // ann_accuracy - snn_accuracy
};

// W' = gamma*W/sqrt(var+eps); b' = gamma*(b-mean)/sqrt(var+eps) + beta.
// Batchnorm layers are removed and forward outputs are unchanged. Every
// batchnorm must immediately follow a Conv2D or Dense (compile_error).
ModelGraph fold_batchnorm(const ModelGraph& model);

// Empty result means convertible. Accepts Conv2D, AvgPool, Dense, Flatten,
// ZeroPad, ReLU, a terminal Softmax, and foldable BatchNorm; anything else
// comes back as one named violation per layer.
std::vector<std::string> validate_convertible(const ModelGraph& model);

// Fold batchnorm, validate, lower to dense matrices, and rescale weights by
// per-layer activation percentiles measured on `calibration`: with lambda_0=1,
// W'_l = W_l * lambda_{l-1}/lambda_l and b'_l = b_l/lambda_l, thresholds all
// 1, terminal softmax stripped. The report carries the scale factors and the
// ANN/SNN accuracy on the calibration set.
std::pair<SpikingNetwork, ConversionReport>
normalize_and_convert(const ModelGraph& model, const LabeledImageSet& calibration,
                      double percentile = 99.9);

// Mean |spike rate - a_l/lambda_l| per spiking layer for one sample simulated
// for `timesteps` under constant-current encoding; the resolution check for a
// converted network against its source model.
std::vector<double> rate_correspondence(const SpikingNetwork& net, const ModelGraph& source_model,
                                        const std::vector<double>& lambdas, const Tensor& sample,
                                        int timesteps);

// SNNC container: magic "SNNC", u16 version, layer table (sizes, thresholds),
// little-endian f32 weight/bias blobs, CRC32 trailer.
void save_snn(const SpikingNetwork& net, const std::string& path);
SpikingNetwork load_snn(const std::string& path);

} // namespace capspike
