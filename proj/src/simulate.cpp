#include "capspike/simulate.hpp"

#include "capspike/errors.hpp"
#include "capspike/io_util.hpp"
#include "capspike/parallel.hpp"
#include "capspike/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace capspike {

namespace {

void check_cfg(const SimConfig& cfg) {
    if (cfg.timesteps < 1) throw contract_error("simulation needs at least one timestep");
    if (!(cfg.max_rate_scale > 0.0 && cfg.max_rate_scale <= 1.0))
        throw contract_error("max_rate_scale must lie in (0, 1], got " +
                             fmt_fixed(cfg.max_rate_scale, 4));
}

int argmax_counts(const std::vector<long long>& counts) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(counts.size()); ++i)
        if (counts[static_cast<std::size_t>(i)] > counts[static_cast<std::size_t>(best)]) best = i;
    return best; // strict > keeps ties at the lowest class index
}

// [in][out]-contiguous copy so spike-driven propagation walks whole rows.
std::vector<float> transposed(const Tensor& w) {
    int out = w.dim(0), in = w.dim(1);
    std::vector<float> t(static_cast<std::size_t>(out) * static_cast<std::size_t>(in));
    for (int j = 0; j < out; ++j)
        for (int i = 0; i < in; ++i)
            t[static_cast<std::size_t>(i) * out + j] = w[static_cast<std::size_t>(j) * in + i];
    return t;
}

} // namespace

std::vector<std::uint8_t> step(NeuronPopulation& pop, const std::vector<double>& current) {
    if (current.size() != pop.v.size())
        throw dim_error("step: current carries " + std::to_string(current.size()) +
                        " values for " + std::to_string(pop.v.size()) + " neurons");
    std::vector<std::uint8_t> spikes(pop.v.size(), 0);
    double theta = pop.threshold;
    for (std::size_t i = 0; i < pop.v.size(); ++i) {
        double v = pop.v[i] + current[i];
        if (v >= theta) {
            spikes[i] = 1;
            v -= theta; // soft reset keeps the overshoot
        }
        if (v < -theta) v = -theta;
        pop.v[i] = v;
    }
    return spikes;
}

std::vector<std::uint8_t> poisson_encode(const Tensor& image, int timesteps,
                                         double max_rate_scale, std::uint64_t seed,
                                         long long sample_index) {
    if (timesteps < 1) throw contract_error("poisson_encode: timesteps must be >= 1");
    if (!(max_rate_scale > 0.0 && max_rate_scale <= 1.0))
        throw contract_error("poisson_encode: max_rate_scale must lie in (0, 1]");
    std::size_t pixels = image.size();
    std::vector<std::uint8_t> trains(static_cast<std::size_t>(timesteps) * pixels, 0);
    for (std::size_t px = 0; px < pixels; ++px) {
        float intensity = image[px];
        if (intensity < 0.0f || intensity > 1.0f)
            throw contract_error("poisson_encode: pixel " + std::to_string(px) + " intensity " +
                                 fmt_fixed(intensity, 4) + " outside [0,1]");
        double p = static_cast<double>(intensity) * max_rate_scale;
        for (int t = 0; t < timesteps; ++t) {
            double u = u64_to_unit_float(counter_draw(seed, static_cast<std::uint64_t>(sample_index),
                                                      px, static_cast<std::uint64_t>(t)));
            if (u < p) trains[static_cast<std::size_t>(t) * pixels + px] = 1;
        }
    }
    return trains;
}

RunTrace run_inference(const SpikingNetwork& net, const Tensor& image, const SimConfig& cfg) {
    check_cfg(cfg);
    if (net.layers.empty()) throw contract_error("run_inference: network has no layers");
    if (static_cast<int>(image.size()) != net.input_size)
        throw dim_error("run_inference: image carries " + std::to_string(image.size()) +
                        " values, network expects " + std::to_string(net.input_size));

    int horizon = cfg.timesteps;
    std::size_t depth = net.layers.size();
    int out_n = net.layers.back().out_size;

    std::vector<std::vector<float>> flipped(depth);
    for (std::size_t l = 0; l < depth; ++l) flipped[l] = transposed(net.layers[l].weights);

    std::vector<NeuronPopulation> pops(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        pops[l].v.assign(static_cast<std::size_t>(net.layers[l].out_size), 0.0);
        pops[l].threshold = net.layers[l].threshold;
    }

    RunTrace trace;
    trace.timesteps = horizon;
    trace.layer_spike_counts.resize(depth);
    for (std::size_t l = 0; l < depth; ++l)
        trace.layer_spike_counts[l].assign(static_cast<std::size_t>(net.layers[l].out_size), 0);
    trace.output_spikes.assign(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(out_n), 0);

    // With constant-current encoding the front layer's drive never changes;
    // compute W*x + b once.
    std::vector<double> front;
    std::vector<std::uint8_t> trains;
    if (cfg.encoder == InputEncoding::ConstantCurrent) {
        const SpikingLayer& first = net.layers[0];
        front.resize(static_cast<std::size_t>(first.out_size));
        for (int j = 0; j < first.out_size; ++j) {
            double acc = first.bias_current[static_cast<std::size_t>(j)];
            const float* row = first.weights.data() + static_cast<std::size_t>(j) * first.in_size;
            for (int i = 0; i < first.in_size; ++i)
                acc += static_cast<double>(row[i]) * image[static_cast<std::size_t>(i)];
            front[static_cast<std::size_t>(j)] = acc;
        }
    } else {
        trains = poisson_encode(image, horizon, cfg.max_rate_scale, cfg.seed, cfg.sample_index);
    }

    std::vector<std::uint8_t> upstream;
    std::vector<double> current;
    for (int t = 0; t < horizon; ++t) {
        for (std::size_t l = 0; l < depth; ++l) {
            const SpikingLayer& layer = net.layers[l];
            if (l == 0 && cfg.encoder == InputEncoding::ConstantCurrent) {
                current = front;
            } else {
                const std::uint8_t* s =
                    l == 0 ? trains.data() + static_cast<std::size_t>(t) * net.input_size
                           : upstream.data();
                current.assign(layer.bias_current.begin(), layer.bias_current.end());
                const std::vector<float>& wt = flipped[l];
                for (int i = 0; i < layer.in_size; ++i) {
                    if (!s[i]) continue;
                    const float* col = wt.data() + static_cast<std::size_t>(i) * layer.out_size;
                    for (int j = 0; j < layer.out_size; ++j)
                        current[static_cast<std::size_t>(j)] += col[j];
                }
            }
            std::vector<std::uint8_t> spikes = step(pops[l], current);
            std::vector<long long>& counts = trace.layer_spike_counts[l];
            for (std::size_t j = 0; j < spikes.size(); ++j) counts[j] += spikes[j];
            if (l + 1 == depth)
                std::memcpy(trace.output_spikes.data() +
                                static_cast<std::size_t>(t) * static_cast<std::size_t>(out_n),
                            spikes.data(), spikes.size());
            upstream = std::move(spikes);
        }
    }
    trace.predicted = argmax_counts(trace.layer_spike_counts.back());
    return trace;
}

std::vector<int> simulate_dataset(const SpikingNetwork& net, const LabeledImageSet& ds,
                                  const SimConfig& cfg) {
    check_cfg(cfg);
    std::vector<int> preds(ds.size(), -1);
    parallel_for(static_cast<int>(ds.size()), default_thread_count(), [&](int i) {
        SimConfig mine = cfg;
        mine.sample_index = i;
        preds[static_cast<std::size_t>(i)] = run_inference(net, ds.sample(i), mine).predicted;
    });
    return preds;
}

std::vector<SweepPoint> timestep_sweep(const SpikingNetwork& net, const LabeledImageSet& ds,
                                       const std::vector<int>& t_list, const SimConfig& base) {
    if (t_list.empty()) throw contract_error("timestep_sweep: no horizons requested");
    for (std::size_t i = 0; i < t_list.size(); ++i) {
        if (t_list[i] < 1) throw contract_error("timestep_sweep: horizons must be >= 1");
        if (i > 0 && t_list[i] <= t_list[i - 1])
            throw contract_error("timestep_sweep: horizons must be ascending");
    }
    if (ds.size() == 0) throw contract_error("timestep_sweep: empty dataset");

    std::vector<SweepPoint> points;
    for (int horizon : t_list) {
        SimConfig cfg = base;
        cfg.timesteps = horizon;
        std::vector<int> preds = simulate_dataset(net, ds, cfg);
        long long hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == ds.labels[i]) ++hits;
        SweepPoint pt;
        pt.timesteps = horizon;
        pt.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
        points.push_back(pt);
    }
    for (SweepPoint& pt : points)
        for (const SweepPoint& half : points)
            if (half.timesteps * 2 == pt.timesteps) {
                pt.delta_vs_half = pt.accuracy - half.accuracy;
                pt.has_delta = true;
            }
    return points;
}

std::string sweep_report_csv(const std::vector<SweepPoint>& points) {
    std::vector<std::vector<std::string>> rows;
    for (const SweepPoint& pt : points)
        rows.push_back({std::to_string(pt.timesteps), fmt_fixed(pt.accuracy, 4),
                        pt.has_delta ? fmt_fixed(pt.delta_vs_half, 4) : std::string()});
    return csv_table({"T", "accuracy", "delta_vs_half"}, rows);
}

SpikingNetwork train_single_layer_online(const LabeledImageSet& stream, const SimConfig& cfg,
                                         double eta, int epochs) {
    if (stream.size() == 0) throw contract_error("train_single_layer_online: empty stream");
    if (eta < 0.0) throw contract_error("train_single_layer_online: eta must be >= 0");
    if (epochs < 1) throw contract_error("train_single_layer_online: epochs must be >= 1");
    check_cfg(cfg);

    std::size_t pixels = stream.sample(0).size();
    int classes = static_cast<int>(stream.class_names.size());
    if (classes == 0)
        for (int label : stream.labels) classes = std::max(classes, label + 1);

    SpikingNetwork net;
    net.input_size = static_cast<int>(pixels);
    net.class_count = classes;
    net.encoding = InputEncoding::Poisson;
    SpikingLayer layer;
    layer.in_size = static_cast<int>(pixels);
    layer.out_size = classes;
    layer.weights = Tensor::zeros({classes, static_cast<int>(pixels)});
    layer.bias_current.assign(static_cast<std::size_t>(classes), 0.0f);
    layer.threshold = 1.0f;
    net.layers.push_back(std::move(layer));
    Tensor& w = net.layers[0].weights;

    int horizon = cfg.timesteps;
    std::vector<double> presyn(pixels), observed(static_cast<std::size_t>(classes));
    std::vector<long long> counts(static_cast<std::size_t>(classes));
    std::vector<double> current(static_cast<std::size_t>(classes));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int i = 0; i < static_cast<int>(stream.size()); ++i) {
            long long presentation = static_cast<long long>(epoch) * stream.size() + i;
            std::vector<std::uint8_t> trains =
                poisson_encode(stream.sample(i), horizon, cfg.max_rate_scale, cfg.seed, presentation);

            std::fill(presyn.begin(), presyn.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0);
            NeuronPopulation pop;
            pop.v.assign(static_cast<std::size_t>(classes), 0.0);
            pop.threshold = net.layers[0].threshold;
            for (int t = 0; t < horizon; ++t) {
                const std::uint8_t* s = trains.data() + static_cast<std::size_t>(t) * pixels;
                for (int k = 0; k < classes; ++k)
                    current[static_cast<std::size_t>(k)] =
                        net.layers[0].bias_current[static_cast<std::size_t>(k)];
                for (std::size_t px = 0; px < pixels; ++px) {
                    if (!s[px]) continue;
                    presyn[px] += 1.0;
                    for (int k = 0; k < classes; ++k)
                        current[static_cast<std::size_t>(k)] +=
                            w[static_cast<std::size_t>(k) * pixels + px];
                }
                std::vector<std::uint8_t> spikes = step(pop, current);
                for (int k = 0; k < classes; ++k) counts[static_cast<std::size_t>(k)] += spikes[static_cast<std::size_t>(k)];
            }

            for (std::size_t px = 0; px < pixels; ++px) presyn[px] /= horizon;
            for (int k = 0; k < classes; ++k)
                observed[static_cast<std::size_t>(k)] =
                    static_cast<double>(counts[static_cast<std::size_t>(k)]) / horizon;

            int label = stream.labels[static_cast<std::size_t>(i)];
            for (int k = 0; k < classes; ++k) {
                double err = (k == label ? 1.0 : 0.0) - observed[static_cast<std::size_t>(k)];
                if (err == 0.0) continue;
                double scale = eta * err;
                for (std::size_t px = 0; px < pixels; ++px) {
                    if (presyn[px] == 0.0) continue;
                    std::size_t at = static_cast<std::size_t>(k) * pixels + px;
                    w[at] = static_cast<float>(w[at] + scale * presyn[px]);
                }
            }
        }
    }
    return net;
}

void write_trace_csv(const RunTrace& trace, const std::string& path) {
    int out_n = trace.timesteps > 0
                    ? static_cast<int>(trace.output_spikes.size() / static_cast<std::size_t>(trace.timesteps))
                    : 0;
    std::vector<std::vector<std::string>> rows;
    rows.reserve(trace.output_spikes.size());
    for (int t = 0; t < trace.timesteps; ++t)
        for (int j = 0; j < out_n; ++j)
            rows.push_back({std::to_string(t), std::to_string(j),
                            std::to_string(static_cast<int>(
                                trace.output_spikes[static_cast<std::size_t>(t) * out_n + j]))});
    write_text_file(path, csv_table({"step", "neuron", "spike"}, rows));
}

} // namespace capspike
