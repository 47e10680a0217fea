// capspike — batch front end for the capsule-network / spiking toolkit.
// Subcommands: gen-data, train, convert, simulate, benchmark, explain.
// Every run writes a JSON manifest next to its primary output; outputs are
// deterministic given identical flags and seed (manifests modulo timestamp,
// throughput tables excluded as wall-clock measurements).

#include <CLI11.hpp>
#include <json.hpp>

#include "capspike/archs.hpp"
#include "capspike/convert.hpp"
#include "capspike/dataset.hpp"
#include "capspike/errors.hpp"
#include "capspike/io_util.hpp"
#include "capspike/metrics.hpp"
#include "capspike/model.hpp"
#include "capspike/parallel.hpp"
#include "capspike/simulate.hpp"
#include "capspike/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

using nlohmann::json;
using namespace capspike;

namespace {

// Flag values that fail semantic parsing (malformed lists, unknown policy
// names) are usage errors: exit code 2, like any other bad invocation.
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t end = s.find(sep, start);
        if (end == std::string::npos) end = s.size();
        parts.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return parts;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw usage_error(what + ": '" + s + "' is not a number");
    }
}

int parse_int(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw usage_error(what + ": '" + s + "' is not an integer");
    }
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const std::string& p : split(s, ',')) out.push_back(parse_double(p, what));
    return out;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<int> out;
    for (const std::string& p : split(s, ',')) out.push_back(parse_int(p, what));
    return out;
}

// "0..3" (inclusive range) or "0,2,5" (list) -> layer index set.
std::set<int> parse_freeze(const std::string& spec) {
    std::set<int> out;
    if (spec.empty()) return out;
    std::size_t dots = spec.find("..");
    if (dots != std::string::npos) {
        int lo = parse_int(spec.substr(0, dots), "--freeze");
        int hi = parse_int(spec.substr(dots + 2), "--freeze");
        if (lo > hi) throw usage_error("--freeze: range " + spec + " is empty");
        for (int i = lo; i <= hi; ++i) out.insert(i);
        return out;
    }
    for (int i : parse_int_list(spec, "--freeze")) out.insert(i);
    return out;
}

// "4:0.1,5:0.33" -> per-layer learning-rate multipliers.
std::map<int, double> parse_lr_mult(const std::string& spec) {
    std::map<int, double> out;
    if (spec.empty()) return out;
    for (const std::string& pair : split(spec, ',')) {
        std::size_t colon = pair.find(':');
        if (colon == std::string::npos)
            throw usage_error("--lr-mult: '" + pair + "' is not layer:multiplier");
        out[parse_int(pair.substr(0, colon), "--lr-mult")] =
            parse_double(pair.substr(colon + 1), "--lr-mult");
    }
    return out;
}

// "constant:0.001" | "exponential:0.001:0.95" | "cyclical:0.001:0.006:4"
LRSchedule parse_lr_policy(const std::string& spec, int steps_per_epoch) {
    std::vector<std::string> parts = split(spec, ':');
    const std::string& kind = parts[0];
    if (kind == "constant" && parts.size() == 2)
        return LRSchedule::constant(parse_double(parts[1], "--lr-policy"));
    if (kind == "exponential" && parts.size() == 3)
        return LRSchedule::exponential(parse_double(parts[1], "--lr-policy"),
                                       parse_double(parts[2], "--lr-policy"), steps_per_epoch);
    if (kind == "cyclical" && parts.size() == 4)
        return LRSchedule::cyclical(parse_double(parts[1], "--lr-policy"),
                                    parse_double(parts[2], "--lr-policy"),
                                    parse_int(parts[3], "--lr-policy"));
    throw usage_error("--lr-policy: expected constant:LR, exponential:LR:RATE or "
                      "cyclical:BASE:MAX:STEPSIZE, got '" + spec + "'");
}

std::string file_stem(const std::string& path) {
    std::size_t slash = path.find_last_of('/');
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    std::size_t dot = name.find_last_of('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

std::string file_ext(const std::string& path) {
    std::size_t dot = path.find_last_of('.');
    return dot == std::string::npos ? "" : path.substr(dot + 1);
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

// One manifest per run, next to the primary output. `config` is the full
// resolved flag snapshot; timestamp and duration are informational and sit
// outside the determinism contract.
void write_manifest(const std::string& primary_output, const std::string& command,
                    const json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    std::chrono::steady_clock::time_point started) {
    json m;
    m["command"] = command;
    m["config"] = config;
    m["seed"] = seed;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["format_versions"] = {{"ngds", 1}, {"nnir", 1}, {"snnc", 1}};
    m["timestamp"] = utc_timestamp();
    m["duration_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
    write_text_file(primary_output + ".manifest.json", m.dump(2) + "\n");
}

bool has_capsules(const ModelGraph& m) {
    for (const LayerSpec& s : m.layers())
        if (s.kind == LayerKind::ClassCaps) return true;
    return false;
}

std::string fmt_acc(double v) { return fmt_fixed(v, 4); }

// --------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    int n = 3064;
    int patients = 233;
    std::string priors = "0.23,0.47,0.30";
    std::uint64_t seed = 7;
    std::string out;
};

void run_gen_data(const GenDataArgs& a) {
    auto started = std::chrono::steady_clock::now();
    std::vector<double> p = parse_double_list(a.priors, "--priors");
    if (p.size() != 3) throw usage_error("--priors: expected three comma-separated values");
    LabeledImageSet ds = gen_synthetic(a.n, {p[0], p[1], p[2]}, a.patients, a.seed);
    save_dataset(ds, a.out);
    json config{{"n", a.n}, {"patients", a.patients}, {"priors", a.priors}, {"seed", a.seed},
                {"out", a.out}};
    write_manifest(a.out, "gen-data", config, a.seed, {}, {a.out}, started);
    std::printf("wrote %s: %d samples, %d patients\n", a.out.c_str(), ds.size(), a.patients);
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string arch = "cnn";
    std::string data;
    std::string out;
    int epochs = 30;
    int batch_size = 32;
    std::string optimizer = "adam";
    std::string lr_policy = "constant:0.001";
    std::string loss = "auto";
    std::string freeze;
    std::string lr_mult;
    double val_fraction = 0.0;
    int kfold = 0;
    double recon_weight = 0.0005;
    std::uint64_t seed = 1;
    int threads = 0;
};

TrainConfig make_train_config(const TrainArgs& a, const ModelGraph& model, int train_samples) {
    TrainConfig cfg;
    cfg.optimizer = a.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    int steps_per_epoch = std::max(1, (train_samples + a.batch_size - 1) / a.batch_size);
    cfg.schedule = parse_lr_policy(a.lr_policy, steps_per_epoch);
    cfg.batch_size = a.batch_size;
    cfg.epochs = a.epochs;
    cfg.freeze_mask = parse_freeze(a.freeze);
    cfg.group_lr_multipliers = parse_lr_mult(a.lr_mult);
    bool margin = a.loss == "margin" || (a.loss == "auto" && has_capsules(model));
    cfg.loss = margin ? LossKind::CapsuleMargin : LossKind::CrossEntropy;
    cfg.reconstruction_weight = static_cast<float>(a.recon_weight);
    cfg.seed = a.seed;
    return cfg;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::vector<std::vector<std::string>> rows;
    for (const EpochStats& e : history)
        rows.push_back({std::to_string(e.epoch + 1), fmt_fixed(e.loss, 6),
                        fmt_acc(e.train_accuracy),
                        e.val_accuracy < 0.0 ? "" : fmt_acc(e.val_accuracy),
                        fmt_fixed(e.lr, 6)});
    write_text_file(path, csv_table({"epoch", "loss", "train_acc", "val_acc", "lr"}, rows));
}

void run_train(const TrainArgs& a) {
    auto started = std::chrono::steady_clock::now();
    thread_count_override().store(a.threads);
    LabeledImageSet full = load_dataset(a.data);
    std::vector<std::string> outputs{a.out, a.out + ".history.csv"};

    // optional patient-grouped cross-validation pass before the final fit
    if (a.kfold > 0) {
        std::vector<MetricsReport> reports;
        std::vector<Fold> folds = kfold_by_patient(full, a.kfold, a.seed);
        for (std::size_t f = 0; f < folds.size(); ++f) {
            ModelGraph m = build_by_name(a.arch, a.seed + f);
            TrainConfig cfg = make_train_config(a, m, folds[f].train.size());
            train(m, folds[f].train, cfg);
            std::vector<int> preds = predict_labels(m, folds[f].validation);
            reports.push_back(
                evaluate_predictions(preds, folds[f].validation.labels, m.class_count()));
        }
        write_text_file(a.out + ".folds.csv", fold_report_csv(reports));
        write_text_file(a.out + ".folds.md", fold_report_markdown(reports));
        outputs.push_back(a.out + ".folds.csv");
        outputs.push_back(a.out + ".folds.md");
    }

    LabeledImageSet train_set = full;
    LabeledImageSet val_set;
    bool has_val = a.val_fraction > 0.0;
    if (has_val) {
        SplitResult sp = split_stratified_by_patient(full, a.val_fraction, a.seed);
        train_set = std::move(sp.train);
        val_set = std::move(sp.test);
    }

    ModelGraph model = build_by_name(a.arch, a.seed);
    TrainConfig cfg = make_train_config(a, model, train_set.size());
    TrainResult result = train(model, train_set, cfg, has_val ? &val_set : nullptr);
    save_model(model, a.out);
    write_history_csv(a.out + ".history.csv", result.history);

    json config{{"arch", a.arch},         {"data", a.data},
                {"out", a.out},           {"epochs", a.epochs},
                {"batch_size", a.batch_size}, {"optimizer", a.optimizer},
                {"lr_policy", a.lr_policy},   {"loss", a.loss},
                {"freeze", a.freeze},     {"lr_mult", a.lr_mult},
                {"val_fraction", a.val_fraction}, {"kfold", a.kfold},
                {"recon_weight", a.recon_weight}, {"seed", a.seed},
                {"threads", a.threads}};
    write_manifest(a.out, "train", config, a.seed, {a.data}, outputs, started);

    const EpochStats& last = result.history.back();
    std::printf("trained %s for %d epochs: loss %.6f, train acc %.4f%s\n", a.arch.c_str(),
                a.epochs, last.loss, last.train_accuracy,
                has_val ? (", val acc " + fmt_acc(last.val_accuracy)).c_str() : "");
}

// --------------------------------------------------------------------------
// convert

struct ConvertArgs {
    std::string model;
    std::string calib;
    double percentile = 99.9;
    int max_calib = 256;
    std::uint64_t seed = 5;
    std::string out;
};

void run_convert(const ConvertArgs& a) {
    auto started = std::chrono::steady_clock::now();
    ModelGraph model = load_model(a.model);
    LabeledImageSet calib = load_dataset(a.calib);
    if (a.max_calib > 0 && calib.size() > a.max_calib)
        calib = subsample_fraction(calib, static_cast<double>(a.max_calib) / calib.size(),
                                   a.seed);

    auto [net, report] = normalize_and_convert(model, calib, a.percentile);
    save_snn(net, a.out);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < report.scale_factors.size(); ++i)
        rows.push_back({"lambda_" + std::to_string(i), fmt_fixed(report.scale_factors[i], 6)});
    rows.push_back({"percentile", fmt_fixed(report.percentile, 3)});
    rows.push_back({"ann_accuracy", fmt_fixed(report.ann_accuracy, 6)});
    rows.push_back({"snn_accuracy", fmt_fixed(report.snn_accuracy, 6)});
    rows.push_back({"conversion_gap", fmt_fixed(report.conversion_gap, 6)});
    write_text_file(a.out + ".report.csv", csv_table({"key", "value"}, rows));

    json config{{"model", a.model},   {"calib", a.calib}, {"percentile", a.percentile},
                {"max_calib", a.max_calib}, {"seed", a.seed},  {"out", a.out}};
    write_manifest(a.out, "convert", config, a.seed, {a.model, a.calib},
                   {a.out, a.out + ".report.csv"}, started);
    std::printf("converted %zu stages, calibration gap %.6f\n", net.layers.size(),
                report.conversion_gap);
}

// --------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    std::string snn;
    std::string data;
    int timesteps = 256;
    std::string encoder = "constant";
    double max_rate_scale = 1.0;
    std::uint64_t seed = 1;
    std::string sweep;
    int trace_sample = -1;
    std::string trace_out;
    std::string out;
    int threads = 0;
};

void run_simulate(const SimulateArgs& a) {
    auto started = std::chrono::steady_clock::now();
    thread_count_override().store(a.threads);
    SpikingNetwork net = load_snn(a.snn);
    LabeledImageSet ds = load_dataset(a.data);

    SimConfig cfg;
    cfg.timesteps = a.timesteps;
    cfg.encoder = a.encoder == "poisson" ? InputEncoding::Poisson : InputEncoding::ConstantCurrent;
    cfg.max_rate_scale = a.max_rate_scale;
    cfg.seed = a.seed;

    std::vector<std::string> outputs{a.out};
    if (!a.sweep.empty()) {
        std::vector<int> horizons = parse_int_list(a.sweep, "--sweep-T");
        std::vector<SweepPoint> points = timestep_sweep(net, ds, horizons, cfg);
        write_text_file(a.out, sweep_report_csv(points));
    } else {
        std::vector<int> preds = simulate_dataset(net, ds, cfg);
        MetricsReport r = evaluate_predictions(preds, ds.labels, net.class_count);
        std::vector<std::vector<std::string>> rows{{"accuracy", fmt_fixed(r.accuracy, 6)},
                                                   {"mcc", fmt_fixed(r.mcc, 6)},
                                                   {"macro_f1", fmt_fixed(r.macro_f1, 6)}};
        write_text_file(a.out, csv_table({"metric", "value"}, rows));
    }
    if (!a.trace_out.empty()) {
        int index = a.trace_sample < 0 ? 0 : a.trace_sample;
        if (index >= ds.size())
            throw contract_error("--trace-sample " + std::to_string(index) +
                                 " is out of range for " + std::to_string(ds.size()) + " samples");
        SimConfig tcfg = cfg;
        tcfg.sample_index = index;
        RunTrace trace = run_inference(net, ds.sample(index), tcfg);
        write_trace_csv(trace, a.trace_out);
        outputs.push_back(a.trace_out);
    }

    json config{{"snn", a.snn},       {"data", a.data},
                {"T", a.timesteps},   {"encoder", a.encoder},
                {"max_rate_scale", a.max_rate_scale}, {"seed", a.seed},
                {"sweep_T", a.sweep}, {"trace_sample", a.trace_sample},
                {"trace_out", a.trace_out}, {"out", a.out},
                {"threads", a.threads}};
    write_manifest(a.out, "simulate", config, a.seed, {a.snn, a.data}, outputs, started);
    if (a.sweep.empty())
        std::printf("simulated %d samples at T=%d -> %s\n", ds.size(), a.timesteps, a.out.c_str());
    else
        std::printf("swept T=%s over %d samples -> %s\n", a.sweep.c_str(), ds.size(),
                    a.out.c_str());
}

// --------------------------------------------------------------------------
// benchmark

struct BenchmarkArgs {
    std::string data;
    std::string models;
    std::string energy_config;
    double test_fraction = 0.3;
    int timesteps = 256;
    double se_fraction = 0.1;
    int se_epochs = 12;
    double se_lr = 0.003;
    int throughput_inferences = 1000;
    std::uint64_t seed = 11;
    std::string out;
    int threads = 0;
};

std::map<std::string, double> read_energy_config(const std::string& path) {
    std::map<std::string, double> values;
    if (path.empty()) return values;
    for (const std::string& raw : split(read_text_file(path), '\n')) {
        std::string line = raw.substr(0, raw.find('#'));
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw usage_error("--energy-config: '" + line + "' is not key=value");
        values[line.substr(0, eq)] = parse_double(line.substr(eq + 1), "--energy-config");
    }
    return values;
}

// A row's energy column comes from its name-prefixed config entries: either a
// measured GPU pair (dynamic_power_watts / inferences_per_second) or the
// neuromorphic bound set (gpu_joules_per_inference, loihi_* keys).
std::string energy_for(const std::map<std::string, double>& cfg, const std::string& stem) {
    auto get = [&](const std::string& key) -> const double* {
        auto it = cfg.find(stem + "." + key);
        return it == cfg.end() ? nullptr : &it->second;
    };
    if (const double* gpu_jpi = get("gpu_joules_per_inference")) {
        EnergyModel m;
        m.gpu_joules_per_inference = *gpu_jpi;
        if (const double* v = get("loihi_efficiency_factor")) m.efficiency_factor = *v;
        if (const double* v = get("loihi_per_core_power_watts")) m.per_core_dynamic_power_watts = *v;
        if (const double* v = get("loihi_cores")) m.cores = static_cast<int>(*v);
        if (const double* v = get("loihi_inferences_per_second")) m.inferences_per_second = *v;
        EnergyBounds b = loihi_energy_bounds(m);
        return fmt_fixed(b.lower, 4) + "-" + fmt_fixed(b.upper, 4);
    }
    const double* power = get("dynamic_power_watts");
    const double* ips = get("inferences_per_second");
    if (power && ips) return fmt_fixed(joules_per_inference(*power, *ips), 4);
    return "N/A";
}

double median_of_three(double a, double b, double c) {
    return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

void run_benchmark(const BenchmarkArgs& a) {
    auto started = std::chrono::steady_clock::now();
    thread_count_override().store(a.threads);
    LabeledImageSet full = load_dataset(a.data);
    SplitResult sp = split_stratified_by_patient(full, a.test_fraction, a.seed);
    std::map<std::string, double> energy = read_energy_config(a.energy_config);

    std::vector<std::string> model_paths = split(a.models, ',');
    std::vector<BenchmarkRow> rows;
    std::vector<std::vector<std::string>> throughput_rows;
    SimConfig sim;
    sim.timesteps = a.timesteps;

    for (const std::string& path : model_paths) {
        if (path.empty()) throw usage_error("--models: empty entry in list");
        BenchmarkRow row;
        row.model = file_stem(path);
        auto time_inferences = [&](const std::function<void(int)>& one) {
            double runs[3];
            for (int rep = 0; rep < 3; ++rep) {
                auto t0 = std::chrono::steady_clock::now();
                for (int i = 0; i < a.throughput_inferences; ++i) one(i % sp.test.size());
                std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
                runs[rep] = a.throughput_inferences / dt.count();
            }
            return median_of_three(runs[0], runs[1], runs[2]);
        };

        if (file_ext(path) == "snnc") {
            SpikingNetwork net = load_snn(path);
            std::vector<int> preds = simulate_dataset(net, sp.test, sim);
            MetricsReport r = evaluate_predictions(preds, sp.test.labels, net.class_count);
            row.test_accuracy = r.accuracy;
            row.sample_efficiency = -1.0; // spiking nets are converted, not retrained
            double ips = time_inferences([&](int i) {
                SimConfig one = sim;
                one.sample_index = i;
                run_inference(net, sp.test.sample(i), one);
            });
            throughput_rows.push_back({row.model, fmt_fixed(ips, 1)});
        } else {
            ModelGraph model = load_model(path);
            row.test_accuracy = dataset_accuracy(model, sp.test);

            // sample efficiency: fresh parameters, a slice of the train split
            ModelGraph fresh(model.input_shape(), model.layers(), model.class_count(), a.seed);
            LabeledImageSet slice = subsample_fraction(sp.train, a.se_fraction, a.seed);
            TrainConfig cfg;
            cfg.schedule = LRSchedule::constant(a.se_lr);
            cfg.batch_size = 16;
            cfg.epochs = a.se_epochs;
            cfg.loss = has_capsules(model) ? LossKind::CapsuleMargin : LossKind::CrossEntropy;
            cfg.seed = a.seed;
            train(fresh, slice, cfg);
            row.sample_efficiency = dataset_accuracy(fresh, sp.test);

            double ips = time_inferences(
                [&](int i) { model.forward_sample(nullptr, sp.test.sample(i), false); });
            throughput_rows.push_back({row.model, fmt_fixed(ips, 1)});
        }
        row.energy = energy_for(energy, row.model);
        rows.push_back(std::move(row));
    }

    write_text_file(a.out + ".csv", benchmark_report_csv(rows));
    write_text_file(a.out + ".md", benchmark_report_markdown(rows));
    write_text_file(a.out + ".throughput.csv",
                    csv_table({"model", "inferences_per_second"}, throughput_rows));

    json config{{"data", a.data},       {"models", a.models},
                {"energy_config", a.energy_config}, {"test_fraction", a.test_fraction},
                {"T", a.timesteps},     {"se_fraction", a.se_fraction},
                {"se_epochs", a.se_epochs}, {"se_lr", a.se_lr},
                {"throughput_inferences", a.throughput_inferences}, {"seed", a.seed},
                {"out", a.out},         {"threads", a.threads}};
    std::vector<std::string> inputs{a.data};
    for (const std::string& p : model_paths) inputs.push_back(p);
    if (!a.energy_config.empty()) inputs.push_back(a.energy_config);
    write_manifest(a.out + ".csv", "benchmark", config, a.seed, inputs,
                   {a.out + ".csv", a.out + ".md", a.out + ".throughput.csv"}, started);
    std::printf("benchmarked %zu models -> %s.csv / .md\n", rows.size(), a.out.c_str());
}

// --------------------------------------------------------------------------
// explain

struct ExplainArgs {
    std::string model;
    std::string data;
    int sample = 0;
    int capsule = -1; // -1: the predicted class
    std::string dims = "0,1,2,3";
    std::string deltas = "-0.25,-0.1,0,0.1,0.25";
    std::string out;
};

void write_pgm_grid(const std::string& path, const std::vector<std::vector<Tensor>>& cells,
                    int side) {
    int rows = static_cast<int>(cells.size());
    int cols = static_cast<int>(cells[0].size());
    int width = cols * side, height = rows * side;
    std::string pgm = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    pgm.reserve(pgm.size() + static_cast<std::size_t>(width * height));
    for (int r = 0; r < rows; ++r)
        for (int y = 0; y < side; ++y)
            for (int c = 0; c < cols; ++c)
                for (int x = 0; x < side; ++x) {
                    float v = cells[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]
                                   [static_cast<std::size_t>(y * side + x)];
                    v = std::min(1.0f, std::max(0.0f, v));
                    pgm.push_back(static_cast<char>(std::lround(v * 255.0f)));
                }
    write_text_file(path, pgm);
}

void run_explain(const ExplainArgs& a) {
    auto started = std::chrono::steady_clock::now();
    ModelGraph model = load_model(a.model);
    if (!model.has_decoder() || model.class_caps_layer() < 0)
        throw contract_error("explain requires a capsule model with a decoder");
    LabeledImageSet ds = load_dataset(a.data);
    if (a.sample < 0 || a.sample >= ds.size())
        throw contract_error("--sample " + std::to_string(a.sample) + " is out of range for " +
                             std::to_string(ds.size()) + " samples");

    std::vector<int> dims = parse_int_list(a.dims, "--dims");
    std::vector<double> deltas_d = parse_double_list(a.deltas, "--deltas");
    std::vector<float> deltas(deltas_d.begin(), deltas_d.end());
    if (dims.empty() || deltas.empty())
        throw usage_error("--dims and --deltas must be nonempty");

    Tensor image = ds.sample(a.sample);
    ForwardResult fwd = model.forward_sample(nullptr, image, false);
    int capsule = a.capsule;
    if (capsule < 0) {
        capsule = 0;
        for (int c = 1; c < model.class_count(); ++c)
            if (fwd.output[static_cast<std::size_t>(c)] > fwd.output[static_cast<std::size_t>(capsule)])
                capsule = c;
    }

    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(fwd.decoded.size()))));
    if (side * side != static_cast<int>(fwd.decoded.size()))
        throw contract_error("decoder output is not a square image");
    std::vector<std::vector<Tensor>> cells;
    json cell_map = json::array();
    for (std::size_t d = 0; d < dims.size(); ++d) {
        std::vector<Tensor> row = perturb_and_decode(model, image, capsule, dims[d], deltas);
        for (std::size_t k = 0; k < deltas.size(); ++k)
            cell_map.push_back({{"row", d},
                                {"col", k},
                                {"dim", dims[d]},
                                {"delta", deltas[k]}});
        cells.push_back(std::move(row));
    }
    write_pgm_grid(a.out, cells, side);

    json config{{"model", a.model}, {"data", a.data},   {"sample", a.sample},
                {"capsule", a.capsule}, {"dims", a.dims}, {"deltas", a.deltas},
                {"out", a.out}};
    json extra{{"cells", cell_map}, {"capsule_used", capsule}};
    config["grid"] = extra;
    write_manifest(a.out, "explain", config, 0, {a.model, a.data}, {a.out}, started);
    std::printf("wrote %zux%zu reconstruction grid to %s (capsule %d)\n", dims.size(),
                deltas.size(), a.out.c_str(), capsule);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsule-network training, spiking conversion and simulation toolkit"};
    app.require_subcommand(1);

    GenDataArgs gd;
    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
    gen->add_option("--n", gd.n, "Number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--patients", gd.patients, "Number of patients")->check(CLI::PositiveNumber);
    gen->add_option("--priors", gd.priors, "Three class priors, comma separated");
    gen->add_option("--seed", gd.seed, "Generator seed");
    gen->add_option("--out", gd.out, "Output NGDS path")->required();
    gen->set_config("--config");

    TrainArgs tr;
    CLI::App* trn = app.add_subcommand("train", "Train a model on an NGDS dataset");
    trn->add_option("--arch", tr.arch, "Architecture")
        ->check(CLI::IsMember({"capsnet", "capsnet-small", "cnn", "dense", "resnet"}));
    trn->add_option("--data", tr.data, "Training NGDS path")->required();
    trn->add_option("--out", tr.out, "Output NNIR path")->required();
    trn->add_option("--epochs", tr.epochs, "Training epochs")->check(CLI::PositiveNumber);
    trn->add_option("--batch-size", tr.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    trn->add_option("--optimizer", tr.optimizer, "Optimizer")
        ->check(CLI::IsMember({"adam", "sgd"}));
    trn->add_option("--lr-policy", tr.lr_policy,
                    "constant:LR | exponential:LR:RATE | cyclical:BASE:MAX:STEPSIZE");
    trn->add_option("--loss", tr.loss, "Loss function")
        ->check(CLI::IsMember({"auto", "ce", "margin"}));
    trn->add_option("--freeze", tr.freeze, "Layers to freeze: 0..3 or 0,2,5");
    trn->add_option("--lr-mult", tr.lr_mult, "Per-layer LR multipliers: layer:mult,...");
    trn->add_option("--val-fraction", tr.val_fraction, "Patient-stratified validation share")
        ->check(CLI::Range(0.0, 0.9));
    trn->add_option("--kfold", tr.kfold, "Cross-validation folds (0 = off)")
        ->check(CLI::Range(0, 20));
    trn->add_option("--recon-weight", tr.recon_weight, "Reconstruction loss weight");
    trn->add_option("--seed", tr.seed, "Training seed");
    trn->add_option("--threads", tr.threads, "Worker threads (0 = hardware)");
    trn->set_config("--config");

    ConvertArgs cv;
    CLI::App* con = app.add_subcommand("convert", "Compile a trained model to a spiking network");
    con->add_option("--model", cv.model, "Input NNIR path")->required();
    con->add_option("--calib", cv.calib, "Calibration NGDS path")->required();
    con->add_option("--percentile", cv.percentile, "Activation percentile for thresholds")
        ->check(CLI::Range(0.0001, 100.0));
    con->add_option("--max-calib", cv.max_calib, "Calibration sample cap (0 = all)");
    con->add_option("--seed", cv.seed, "Calibration subsample seed");
    con->add_option("--out", cv.out, "Output SNNC path")->required();
    con->set_config("--config");

    SimulateArgs sm;
    CLI::App* simc = app.add_subcommand("simulate", "Run a spiking network over a dataset");
    simc->add_option("--snn", sm.snn, "Input SNNC path")->required();
    simc->add_option("--data", sm.data, "Evaluation NGDS path")->required();
    simc->add_option("--T", sm.timesteps, "Simulation timesteps")->check(CLI::PositiveNumber);
    simc->add_option("--encoder", sm.encoder, "Input encoding")
        ->check(CLI::IsMember({"constant", "poisson"}));
    simc->add_option("--max-rate-scale", sm.max_rate_scale, "Poisson rate scale");
    simc->add_option("--seed", sm.seed, "Encoder seed");
    simc->add_option("--sweep-T", sm.sweep, "Comma list of horizons; emits the sweep table");
    simc->add_option("--trace-sample", sm.trace_sample, "Sample index for the trace dump");
    simc->add_option("--trace-out", sm.trace_out, "Per-step spike trace CSV path");
    simc->add_option("--out", sm.out, "Metrics/sweep CSV path")->required();
    simc->add_option("--threads", sm.threads, "Worker threads (0 = hardware)");
    simc->set_config("--config");

    BenchmarkArgs bm;
    CLI::App* ben = app.add_subcommand("benchmark", "Accuracy / sample-efficiency / energy table");
    ben->add_option("--data", bm.data, "Benchmark NGDS path")->required();
    ben->add_option("--models", bm.models, "Comma list of NNIR/SNNC paths")->required();
    ben->add_option("--energy-config", bm.energy_config, "key=value energy constants");
    ben->add_option("--test-fraction", bm.test_fraction, "Held-out share")
        ->check(CLI::Range(0.05, 0.9));
    ben->add_option("--T", bm.timesteps, "Spiking evaluation timesteps")
        ->check(CLI::PositiveNumber);
    ben->add_option("--se-fraction", bm.se_fraction, "Training share for sample efficiency")
        ->check(CLI::Range(0.01, 1.0));
    ben->add_option("--se-epochs", bm.se_epochs, "Sample-efficiency training epochs")
        ->check(CLI::PositiveNumber);
    ben->add_option("--se-lr", bm.se_lr, "Sample-efficiency learning rate");
    ben->add_option("--throughput-inferences", bm.throughput_inferences,
                    "Inferences per throughput run")
        ->check(CLI::PositiveNumber);
    ben->add_option("--seed", bm.seed, "Split/retrain seed");
    ben->add_option("--out", bm.out, "Report base path (.csv/.md appended)")->required();
    ben->add_option("--threads", bm.threads, "Worker threads (0 = hardware)");
    ben->set_config("--config");

    ExplainArgs ex;
    CLI::App* exp = app.add_subcommand("explain", "Decode capsule perturbations to an image grid");
    exp->add_option("--model", ex.model, "Capsule NNIR path")->required();
    exp->add_option("--data", ex.data, "NGDS path supplying the input image")->required();
    exp->add_option("--sample", ex.sample, "Sample index");
    exp->add_option("--capsule", ex.capsule, "Class capsule (-1 = predicted)");
    exp->add_option("--dims", ex.dims, "Capsule dimensions, comma separated");
    exp->add_option("--deltas", ex.deltas, "Perturbations, comma separated");
    exp->add_option("--out", ex.out, "Output PGM path")->required();
    exp->set_config("--config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) run_gen_data(gd);
        if (*trn) run_train(tr);
        if (*con) run_convert(cv);
        if (*simc) run_simulate(sm);
        if (*ben) run_benchmark(bm);
        if (*exp) run_explain(ex);
    } catch (const usage_error& e) {
        std::fprintf(stderr, "capspike: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "capspike: %s\n", e.what());
        return 1;
    }
    return 0;
}
