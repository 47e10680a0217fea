#include "capspike/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capspike/capsule.hpp"
#include "capspike/rng.hpp"

namespace capspike {

LRSchedule LRSchedule::constant(double lr) {
    if (!(lr > 0.0)) throw contract_error("constant schedule: lr must be positive");
    LRSchedule s;
    s.kind = Kind::Constant;
    s.base_lr = lr;
    return s;
}

LRSchedule LRSchedule::exponential(double base_lr, double rate_per_epoch,
                                   int steps_per_epoch) {
    if (!(base_lr > 0.0) || !(rate_per_epoch > 0.0))
        throw contract_error("exponential schedule: base lr and rate must be positive");
    if (steps_per_epoch < 1)
        throw contract_error("exponential schedule: steps_per_epoch must be at least 1");
    LRSchedule s;
    s.kind = Kind::ExponentialDecay;
    s.base_lr = base_lr;
    s.rate_per_epoch = rate_per_epoch;
    s.steps_per_epoch = steps_per_epoch;
    return s;
}

LRSchedule LRSchedule::cyclical(double base_lr, double max_lr, int step_size) {
    if (!(base_lr > 0.0)) throw contract_error("cyclical schedule: base lr must be positive");
    if (base_lr > max_lr)
        throw contract_error("cyclical schedule: base lr exceeds max lr");
    if (step_size < 1) throw contract_error("cyclical schedule: step_size must be at least 1");
    LRSchedule s;
    s.kind = Kind::Cyclical;
    s.base_lr = base_lr;
    s.max_lr = max_lr;
    s.step_size = step_size;
    return s;
}

double lr_at(const LRSchedule& schedule, long long step) {
    if (step < 0) throw contract_error("lr_at: step must be nonnegative");
    switch (schedule.kind) {
    case LRSchedule::Kind::Constant:
        return schedule.base_lr;
    case LRSchedule::Kind::ExponentialDecay: {
        long long epoch = step / schedule.steps_per_epoch;
        return schedule.base_lr * std::pow(schedule.rate_per_epoch,
                                           static_cast<double>(epoch));
    }
    case LRSchedule::Kind::Cyclical: {
        double s = static_cast<double>(step);
        double ss = static_cast<double>(schedule.step_size);
        double cycle = std::floor(1.0 + s / (2.0 * ss));
        double x = std::fabs(s / ss - 2.0 * cycle + 1.0);
        return schedule.base_lr +
               (schedule.max_lr - schedule.base_lr) * std::max(0.0, 1.0 - x);
    }
    }
    throw contract_error("lr_at: unknown schedule kind");
}

namespace {

// Adam first/second moments (or the SGD velocity in `m`), one slot per
// model parameter, stepped in f64. `steps` counts only the steps a
// parameter actually took, so freezing and multiplier-0 epochs behave
// exactly like a later training start.
struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::vector<long long> steps;
};

void apply_update(const TrainConfig& cfg, OptimizerState& state, std::size_t pi,
                  Tensor& value, const Tensor& grad, double lr) {
    std::vector<double>& m = state.m[pi];
    if (m.empty()) m.assign(value.size(), 0.0);
    long long t = ++state.steps[pi];

    if (cfg.optimizer == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            double g = grad[i];
            m[i] = cfg.momentum * m[i] + g;
            value[i] = static_cast<float>(value[i] - lr * m[i]);
        }
        return;
    }
    std::vector<double>& v = state.v[pi];
    if (v.empty()) v.assign(value.size(), 0.0);
    double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < value.size(); ++i) {
        double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
        value[i] = static_cast<float>(value[i] - update);
    }
}

int argmax_row(const Tensor& t) {
    int best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = static_cast<int>(i);
    return best;
}

void validate_config(const ModelGraph& model, const LabeledImageSet& data,
                     const TrainConfig& cfg) {
    if (data.size() == 0) throw contract_error("train: empty dataset");
    if (cfg.batch_size < 1) throw contract_error("train: batch_size must be positive");
    if (cfg.epochs < 1) throw contract_error("train: epochs must be positive");
    if (cfg.reconstruction_weight < 0.0f)
        throw contract_error("train: reconstruction_weight must be nonnegative");
    int layers = static_cast<int>(model.layers().size());
    for (int idx : cfg.freeze_mask)
        if (idx < 0 || idx >= layers)
            throw contract_error("train: freeze index " + std::to_string(idx) +
                                 " out of range");
    for (const auto& [idx, mult] : cfg.group_lr_multipliers) {
        if (idx < 0 || idx >= layers)
            throw contract_error("train: multiplier index " + std::to_string(idx) +
                                 " out of range");
        if (mult < 0.0)
            throw contract_error("train: negative lr multiplier for layer " +
                                 std::to_string(idx));
    }
    for (int l : data.labels)
        if (l < 0 || l >= model.class_count())
            throw contract_error("train: label " + std::to_string(l) +
                                 " outside model classes");
    if (cfg.loss == LossKind::CapsuleMargin && model.class_caps_layer() < 0)
        throw contract_error("train: capsule margin loss needs a ClassCaps layer");
}

} // namespace

TrainResult train(ModelGraph& model, const LabeledImageSet& data, const TrainConfig& cfg,
                  const LabeledImageSet* validation) {
    validate_config(model, data, cfg);

    LRSchedule schedule = cfg.schedule;
    int n = data.size();
    int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    if (schedule.kind == LRSchedule::Kind::ExponentialDecay)
        schedule.steps_per_epoch = steps_per_epoch;

    // Per-parameter trainability and effective multiplier, fixed per run.
    std::vector<Param>& params = model.params();
    std::vector<double> multiplier(params.size(), 1.0);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        int layer = params[pi].layer_index;
        if (cfg.freeze_mask.count(layer)) multiplier[pi] = 0.0;
        auto it = cfg.group_lr_multipliers.find(layer);
        if (it != cfg.group_lr_multipliers.end()) multiplier[pi] *= it->second;
    }

    OptimizerState state;
    state.m.resize(params.size());
    state.v.resize(params.size());
    state.steps.assign(params.size(), 0);

    TrainResult result;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    long long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RandomStream shuffle_rng(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        seeded_shuffle(order, shuffle_rng);

        double epoch_loss = 0.0;
        long long correct = 0;
        double first_lr = lr_at(schedule, step);

        for (int start = 0; start < n; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, n - start);
            double lr = lr_at(schedule, step);

            Tape tape;
            for (std::size_t pi = 0; pi < params.size(); ++pi)
                if (multiplier[pi] > 0.0) tape.leaf(params[pi].value);

            RandomStream dropout_rng(cfg.seed, "dropout", static_cast<std::uint64_t>(step));
            Tensor total;
            for (int b = 0; b < bsz; ++b) {
                int idx = order[static_cast<std::size_t>(start + b)];
                Tensor image = data.sample(idx);
                int label = data.labels[static_cast<std::size_t>(idx)];

                ForwardResult fwd =
                    model.forward_sample(&tape, image, true, label, &dropout_rng);
                if (argmax_row(fwd.output) == label) ++correct;

                Tensor sample_loss;
                if (cfg.loss == LossKind::CrossEntropy) {
                    sample_loss = cross_entropy_logits(&tape, fwd.logits, {label});
                } else {
                    sample_loss = margin_loss(&tape, fwd.output, label);
                    if (model.has_decoder() && cfg.reconstruction_weight > 0.0f) {
                        Tensor recon = reconstruction_loss(&tape, fwd.decoded, image,
                                                           cfg.reconstruction_weight);
                        sample_loss = add(&tape, sample_loss, recon);
                    }
                }
                total = b == 0 ? sample_loss : add(&tape, total, sample_loss);
            }
            Tensor batch_loss = scale(&tape, total, 1.0f / static_cast<float>(bsz));
            if (!batch_loss.all_finite()) {
                for (Param& p : params) p.value.node = -1;
                throw numeric_error("training aborted: non-finite loss at step " +
                                    std::to_string(step) + " (epoch " +
                                    std::to_string(epoch) + ")");
            }
            epoch_loss += static_cast<double>(batch_loss[0]) * bsz;

            tape.backward(batch_loss.node);
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                if (multiplier[pi] <= 0.0) continue;
                Tensor grad = tape.grad(params[pi].value);
                apply_update(cfg, state, pi, params[pi].value, grad,
                             lr * multiplier[pi]);
            }
            for (Param& p : params) p.value.node = -1;
            ++step;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = epoch_loss / n;
        stats.train_accuracy = static_cast<double>(correct) / n;
        stats.lr = first_lr;
        if (validation) stats.val_accuracy = dataset_accuracy(model, *validation);
        result.history.push_back(stats);
    }
    result.steps = step;
    return result;
}

std::vector<int> predict_labels(const ModelGraph& model, const LabeledImageSet& ds) {
    std::vector<int> preds;
    preds.reserve(static_cast<std::size_t>(ds.size()));
    for (int i = 0; i < ds.size(); ++i) {
        ForwardResult fwd = model.forward_sample(nullptr, ds.sample(i), false);
        preds.push_back(argmax_row(fwd.output));
    }
    return preds;
}

double dataset_accuracy(const ModelGraph& model, const LabeledImageSet& ds) {
    if (ds.size() == 0) throw contract_error("dataset_accuracy: empty dataset");
    std::vector<int> preds = predict_labels(model, ds);
    long long correct = 0;
    for (int i = 0; i < ds.size(); ++i)
        if (preds[static_cast<std::size_t>(i)] == ds.labels[static_cast<std::size_t>(i)])
            ++correct;
    return static_cast<double>(correct) / ds.size();
}

} // namespace capspike
