#pragma once

// Confusion-matrix metrics (accuracy, multiclass MCC, per-class P/R/F1),
// the joules-per-inference energy model with neuromorphic bounds, PCA for
// input-size reduction, and the CSV / markdown report writers.

#include "capspike/tensor.hpp"

#include <string>
#include <vector>

namespace capspike {

struct ConfusionMatrix {
    int classes = 0;
    std::vector<long long> counts; // row-major, rows = true, cols = predicted

    long long at(int t, int p) const {
        return counts[static_cast<std::size_t>(t) * classes + p];
    }
    long long& at(int t, int p) {
        return counts[static_cast<std::size_t>(t) * classes + p];
    }
    long long total() const;
    long long trace() const;
    long long row_sum(int t) const; // samples whose true class is t
    long long col_sum(int p) const; // samples predicted as p
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                          int classes);

double accuracy(const ConfusionMatrix& cm);

// Multiclass R_K statistic; zero denominator -> 0 by convention.
double mcc(const ConfusionMatrix& cm);

struct ClassPRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// precision_k over column sums, recall_k over row sums, F1 = 2PR/(P+R);
// every 0/0 collapses to 0.
std::vector<ClassPRF> per_class_prf(const ConfusionMatrix& cm);

// Everything the evaluation harness derives from one prediction run.
struct MetricsReport {
    ConfusionMatrix cm;
    double accuracy = 0.0;
    double mcc = 0.0;
    std::vector<ClassPRF> per_class;
    double macro_f1 = 0.0; // unweighted mean of per-class F1
};

MetricsReport evaluate_predictions(const std::vector<int>& preds,
                                   const std::vector<int>& labels, int classes);

// --- Energy model -----------------------------------------------------------

// dynamic power / throughput. Throughput must be positive.
double joules_per_inference(double dynamic_power_watts, double inferences_per_second);

struct EnergyModel {
    double gpu_joules_per_inference = 0.0;
    double efficiency_factor = 109.0;          // neuromorphic-vs-GPU energy ratio
    double per_core_dynamic_power_watts = 0.01002;
    int cores = 55;
    double inferences_per_second = 0.0;
};

struct EnergyBounds {
    double lower = 0.0; // gpu_joules_per_inference / efficiency_factor
    double upper = 0.0; // per-core power * cores / inferences_per_second
};

// All model fields must be strictly positive. lower <= upper is expected but
// reported as-is, never enforced.
EnergyBounds loihi_energy_bounds(const EnergyModel& m);

// --- PCA --------------------------------------------------------------------

struct PCAResult {
    Tensor components;                      // [k, D], unit rows
    Tensor mean;                            // [D]
    std::vector<double> explained_variance; // eigenvalue per component, descending
    double total_variance = 0.0;            // trace of the covariance matrix
};

// Top-k eigenvectors of the sample covariance (divisor N-1). Rows are
// unit-norm with a deterministic sign: the first nonzero coordinate is
// positive. Requires N >= 2 and 1 <= k <= min(N, D).
PCAResult pca_fit(const Tensor& data, int k);
Tensor pca_transform(const PCAResult& p, const Tensor& data);   // [N,k]
Tensor pca_inverse(const PCAResult& p, const Tensor& coords);   // [N,D]

// Dense symmetric eigensolver (cyclic Jacobi). Returns eigenvalues in
// descending order with matching unit eigenvector rows. Exposed for tests.
void symmetric_eigen(const std::vector<double>& matrix, int n,
                     std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors_rowmajor);

// --- Reports ----------------------------------------------------------------

// Cross-validation summary: rows Accuracy / MCC / F1 Score, one column per
// fold plus the arithmetic-mean Average column.
std::string fold_report_markdown(const std::vector<MetricsReport>& folds);
std::string fold_report_csv(const std::vector<MetricsReport>& folds);

// Per-class table: Class, Precision, Recall, F1.
std::string class_report_markdown(const MetricsReport& r,
                                  const std::vector<std::string>& class_names);
std::string class_report_csv(const MetricsReport& r,
                             const std::vector<std::string>& class_names);

// Benchmark table: Model, Test Accuracy, Sample Efficiency (10% train),
// Joules/Inference. Energy is preformatted so a row can carry a range.
struct BenchmarkRow {
    std::string model;
    double test_accuracy = 0.0;      // fraction in [0,1]
    double sample_efficiency = -1.0; // fraction; negative -> "N/A"
    std::string energy;              // e.g. "0.1745" or "0.0016-0.0052"
};
std::string benchmark_report_markdown(const std::vector<BenchmarkRow>& rows);
std::string benchmark_report_csv(const std::vector<BenchmarkRow>& rows);

} // namespace capspike
