#pragma once

// Training engine: SGD / Adam, constant / exponential-decay / cyclical
// learning-rate schedules, layer freezing, and per-layer-group learning-rate
// multipliers for staged fine-tuning.

#include "capspike/dataset.hpp"
#include "capspike/model.hpp"

#include <map>
#include <set>
#include <vector>

namespace capspike {

struct LRSchedule {
    enum class Kind { Constant, ExponentialDecay, Cyclical };
    Kind kind = Kind::Constant;
    double base_lr = 0.001;
    double rate_per_epoch = 0.95; // exponential decay factor
    int steps_per_epoch = 1;      // converts optimizer steps to epochs for decay
    double max_lr = 0.006;        // cyclical ceiling
    int step_size = 4;            // cyclical half-period in steps

    static LRSchedule constant(double lr);
    static LRSchedule exponential(double base_lr, double rate_per_epoch,
                                  int steps_per_epoch);
    static LRSchedule cyclical(double base_lr, double max_lr, int step_size);
};

// Learning rate for a zero-based optimizer step. Cyclical follows the
// triangular policy: cycle = floor(1 + step/(2*step_size)),
// x = |step/step_size - 2*cycle + 1|, lr = base + (max-base)*max(0, 1-x).
double lr_at(const LRSchedule& schedule, long long step);

enum class OptimizerKind { Sgd, Adam };
enum class LossKind { CrossEntropy, CapsuleMargin };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double momentum = 0.0; // SGD only

    LRSchedule schedule = LRSchedule::constant(0.001);
    int batch_size = 32;
    int epochs = 50;

    std::set<int> freeze_mask;                   // layer indices left untouched
    std::map<int, double> group_lr_multipliers;  // layer index -> lr multiplier

    LossKind loss = LossKind::CrossEntropy;
    float reconstruction_weight = 0.0005f; // decoder term under CapsuleMargin
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = -1.0; // negative when no validation set was given
    double lr = 0.0;            // rate in effect at the epoch's first step
};

struct TrainResult {
    std::vector<EpochStats> history;
    long long steps = 0;
};

// Trains in place. Frozen layers (and layers whose multiplier is zero for a
// step) receive neither parameter updates nor optimizer-moment updates.
// Aborts with numeric_error naming the step if the loss leaves the reals.
TrainResult train(ModelGraph& model, const LabeledImageSet& data, const TrainConfig& cfg,
                  const LabeledImageSet* validation = nullptr);

// Argmax predictions over a dataset (pure forward, dropout inactive).
std::vector<int> predict_labels(const ModelGraph& model, const LabeledImageSet& ds);
double dataset_accuracy(const ModelGraph& model, const LabeledImageSet& ds);

} // namespace capspike
