#pragma once

// Timestep-driven integrate-and-fire simulation of compiled spiking networks:
// input encoders, membrane dynamics, spike-count readout, timestep sweeps,
// online single-layer learning, and trace dumps.

#include "capspike/convert.hpp"
#include "capspike/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace capspike {

struct SimConfig {
    int timesteps = 256;
    InputEncoding encoder = InputEncoding::ConstantCurrent;
    double max_rate_scale = 1.0;  // Poisson firing probability = intensity * scale
    std::uint64_t seed = 1;
    long long sample_index = 0;   // keys the Poisson stream (one value per sample)
};

struct NeuronPopulation {
    std::vector<double> v;
    double threshold = 1.0;
};

// v += current; neurons at or above threshold spike and have the threshold
// subtracted (soft reset); potentials are floored at -threshold.
std::vector<std::uint8_t> step(NeuronPopulation& pop, const std::vector<double>& current);

// [T, N] spike trains. Each pixel fires independently per step with
// probability intensity*max_rate_scale, decided by a counter RNG keyed
// (seed, sample_index, pixel, step) so trains are reproducible under any
// evaluation order. Intensities must lie in [0,1].
std::vector<std::uint8_t> poisson_encode(const Tensor& image, int timesteps,
                                         double max_rate_scale, std::uint64_t seed,
                                         long long sample_index = 0);

struct RunTrace {
    std::vector<std::vector<long long>> layer_spike_counts; // per layer, per neuron
    std::vector<std::uint8_t> output_spikes;                // [T, class_count]
    int timesteps = 0;
    int predicted = -1; // argmax of output counts, ties to the lowest class
};

RunTrace run_inference(const SpikingNetwork& net, const Tensor& image, const SimConfig& cfg);

// Predicted label per sample; sample i uses sample_index = i for its encoder
// stream, everything else from `cfg`.
std::vector<int> simulate_dataset(const SpikingNetwork& net, const LabeledImageSet& ds,
                                  const SimConfig& cfg);

struct SweepPoint {
    int timesteps = 0;
    double accuracy = 0.0;
    double delta_vs_half = 0.0; // accuracy(T) - accuracy(T/2)
    bool has_delta = false;     // true when T/2 was also swept
};

// One accuracy per requested horizon (must be ascending, nonempty).
std::vector<SweepPoint> timestep_sweep(const SpikingNetwork& net, const LabeledImageSet& ds,
                                       const std::vector<int>& t_list,
                                       const SimConfig& base = SimConfig{});
std::string sweep_report_csv(const std::vector<SweepPoint>& points);

// Single-layer pixels->classes network trained by a local delta rule on
// Poisson rate traces: after each presentation,
// dW[j,i] = eta * (target_rate_j - observed_rate_j) * presyn_trace_i
// with traces = spike counts / T and target rate 1 for the labeled class.
SpikingNetwork train_single_layer_online(const LabeledImageSet& stream, const SimConfig& cfg,
                                         double eta, int epochs);

// Per-step output spikes as CSV with header "step,neuron,spike".
void write_trace_csv(const RunTrace& trace, const std::string& path);

} // namespace capspike
