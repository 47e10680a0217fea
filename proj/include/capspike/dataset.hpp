#pragma once

// Synthetic 28x28 dataset generation (noisy skull ring + class-coded blob),
// patient-grouped splitting, k-fold cross validation, stratified
// subsampling, and the NGDS binary container.

#include "capspike/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace capspike {

struct LabeledImageSet {
    Tensor images;                        // [N,1,H,W] in [0,1]
    std::vector<int> labels;              // class per sample
    std::vector<int> patient_ids;         // grouping key per sample
    std::vector<std::string> class_names; // index -> display name

    int size() const { return static_cast<int>(labels.size()); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }
    // One sample as [1,H,W].
    Tensor sample(int index) const;
    // Subset by sample indices (preserves order given).
    LabeledImageSet subset(const std::vector<int>& indices) const;
    std::vector<int> class_counts(int k) const;
};

// Deterministic synthetic generator. Class geometry: 0 = blob on the ring
// boundary, 1 = blob strictly interior (away from the inferior cone),
// 2 = blob in a fixed inferior region. Images within a patient share
// deformation parameters (center jitter, radii, eccentricity).
LabeledImageSet gen_synthetic(int n, const std::array<double, 3>& priors,
                              int patients, std::uint64_t seed);

struct SplitResult {
    LabeledImageSet train;
    LabeledImageSet test;
    std::vector<std::string> warnings; // best-effort notes (e.g. one-patient class)
};

// Patient-disjoint, class-stratified split.
SplitResult split_stratified_by_patient(const LabeledImageSet& ds, double test_fraction,
                                        std::uint64_t seed);

struct Fold {
    LabeledImageSet train;
    LabeledImageSet validation;
};

// Patient-disjoint k-fold partition; validation folds cover every sample once.
std::vector<Fold> kfold_by_patient(const LabeledImageSet& ds, int k, std::uint64_t seed);

// Class-stratified subsample; fraction 1 returns the input unchanged.
LabeledImageSet subsample_fraction(const LabeledImageSet& ds, double fraction,
                                   std::uint64_t seed);

// Largest-remainder apportionment of n into weighted buckets.
std::vector<int> largest_remainder_counts(int n, const std::vector<double>& weights);

// NGDS container: magic "NGDS", u16 version, u32 count/H/W/C, per sample
// u16 label + u32 patient_id + H*W*C little-endian f32, CRC32 trailer.
void save_dataset(const LabeledImageSet& ds, const std::string& path);
LabeledImageSet load_dataset(const std::string& path);

} // namespace capspike
