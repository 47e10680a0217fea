#include "capspike/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capspike/io_util.hpp"

namespace capspike {

long long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0ll);
}

long long ConfusionMatrix::trace() const {
    long long t = 0;
    for (int k = 0; k < classes; ++k) t += at(k, k);
    return t;
}

long long ConfusionMatrix::row_sum(int t) const {
    long long s = 0;
    for (int p = 0; p < classes; ++p) s += at(t, p);
    return s;
}

long long ConfusionMatrix::col_sum(int p) const {
    long long s = 0;
    for (int t = 0; t < classes; ++t) s += at(t, p);
    return s;
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                          int classes) {
    if (classes <= 0) throw contract_error("confusion: classes must be positive");
    if (preds.size() != labels.size())
        throw contract_error("confusion: " + std::to_string(preds.size()) +
                             " predictions vs " + std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm;
    cm.classes = classes;
    cm.counts.assign(static_cast<std::size_t>(classes) * classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], t = labels[i];
        if (p < 0 || p >= classes || t < 0 || t >= classes)
            throw contract_error("confusion: class index out of range at sample " +
                                 std::to_string(i));
        ++cm.at(t, p);
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    long long n = cm.total();
    if (n == 0) throw contract_error("accuracy: empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

double mcc(const ConfusionMatrix& cm) {
    if (cm.classes == 0 || cm.total() == 0)
        throw contract_error("mcc: empty confusion matrix");
    double c = static_cast<double>(cm.trace());
    double s = static_cast<double>(cm.total());
    double sum_pt = 0.0, sum_pp = 0.0, sum_tt = 0.0;
    for (int k = 0; k < cm.classes; ++k) {
        double p = static_cast<double>(cm.col_sum(k));
        double t = static_cast<double>(cm.row_sum(k));
        sum_pt += p * t;
        sum_pp += p * p;
        sum_tt += t * t;
    }
    double denom = std::sqrt((s * s - sum_pp) * (s * s - sum_tt));
    if (denom == 0.0) return 0.0;
    return (c * s - sum_pt) / denom;
}

std::vector<ClassPRF> per_class_prf(const ConfusionMatrix& cm) {
    if (cm.classes == 0 || cm.total() == 0)
        throw contract_error("per_class_prf: empty confusion matrix");
    std::vector<ClassPRF> out(static_cast<std::size_t>(cm.classes));
    for (int k = 0; k < cm.classes; ++k) {
        double tp = static_cast<double>(cm.at(k, k));
        double col = static_cast<double>(cm.col_sum(k));
        double row = static_cast<double>(cm.row_sum(k));
        ClassPRF& prf = out[static_cast<std::size_t>(k)];
        prf.precision = col > 0.0 ? tp / col : 0.0;
        prf.recall = row > 0.0 ? tp / row : 0.0;
        double pr = prf.precision + prf.recall;
        prf.f1 = pr > 0.0 ? 2.0 * prf.precision * prf.recall / pr : 0.0;
    }
    return out;
}

MetricsReport evaluate_predictions(const std::vector<int>& preds,
                                   const std::vector<int>& labels, int classes) {
    MetricsReport r;
    r.cm = confusion(preds, labels, classes);
    r.accuracy = accuracy(r.cm);
    r.mcc = mcc(r.cm);
    r.per_class = per_class_prf(r.cm);
    double f1 = 0.0;
    for (const ClassPRF& c : r.per_class) f1 += c.f1;
    r.macro_f1 = f1 / static_cast<double>(classes);
    return r;
}

double joules_per_inference(double dynamic_power_watts, double inferences_per_second) {
    if (!(inferences_per_second > 0.0))
        throw contract_error("joules_per_inference: throughput must be positive");
    return dynamic_power_watts / inferences_per_second;
}

EnergyBounds loihi_energy_bounds(const EnergyModel& m) {
    if (!(m.gpu_joules_per_inference > 0.0) || !(m.efficiency_factor > 0.0) ||
        !(m.per_core_dynamic_power_watts > 0.0) || m.cores <= 0 ||
        !(m.inferences_per_second > 0.0))
        throw contract_error("loihi_energy_bounds: all model fields must be positive");
    EnergyBounds b;
    b.lower = m.gpu_joules_per_inference / m.efficiency_factor;
    b.upper = joules_per_inference(m.per_core_dynamic_power_watts * m.cores,
                                   m.inferences_per_second);
    return b;
}

// --- PCA --------------------------------------------------------------------

void symmetric_eigen(const std::vector<double>& matrix, int n,
                     std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors_rowmajor) {
    if (n <= 0 || matrix.size() != static_cast<std::size_t>(n) * n)
        throw contract_error("symmetric_eigen: bad matrix size");
    std::vector<double> a = matrix;
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

    auto off_norm = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                double x = a[static_cast<std::size_t>(i) * n + j];
                s += x * x;
            }
        return std::sqrt(s);
    };
    double scale = 0.0;
    for (double x : a) scale = std::max(scale, std::fabs(x));
    double tol = std::max(scale, 1.0) * 1e-14;

    // Cyclic Jacobi: rotate away each off-diagonal element in turn until the
    // remaining off-diagonal mass is negligible.
    for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = a[static_cast<std::size_t>(p) * n + q];
                if (std::fabs(apq) <= tol * 1e-2) continue;
                double app = a[static_cast<std::size_t>(p) * n + p];
                double aqq = a[static_cast<std::size_t>(q) * n + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double ccos = 1.0 / std::sqrt(t * t + 1.0);
                double csin = t * ccos;
                for (int i = 0; i < n; ++i) {
                    double aip = a[static_cast<std::size_t>(i) * n + p];
                    double aiq = a[static_cast<std::size_t>(i) * n + q];
                    a[static_cast<std::size_t>(i) * n + p] = ccos * aip - csin * aiq;
                    a[static_cast<std::size_t>(i) * n + q] = csin * aip + ccos * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    double api = a[static_cast<std::size_t>(p) * n + i];
                    double aqi = a[static_cast<std::size_t>(q) * n + i];
                    a[static_cast<std::size_t>(p) * n + i] = ccos * api - csin * aqi;
                    a[static_cast<std::size_t>(q) * n + i] = csin * api + ccos * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    double vip = v[static_cast<std::size_t>(i) * n + p];
                    double viq = v[static_cast<std::size_t>(i) * n + q];
                    v[static_cast<std::size_t>(i) * n + p] = ccos * vip - csin * viq;
                    v[static_cast<std::size_t>(i) * n + q] = csin * vip + ccos * viq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return a[static_cast<std::size_t>(x) * n + x] > a[static_cast<std::size_t>(y) * n + y];
    });

    eigenvalues.assign(static_cast<std::size_t>(n), 0.0);
    eigenvectors_rowmajor.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int r = 0; r < n; ++r) {
        int src = order[static_cast<std::size_t>(r)];
        eigenvalues[static_cast<std::size_t>(r)] = a[static_cast<std::size_t>(src) * n + src];
        for (int i = 0; i < n; ++i)
            eigenvectors_rowmajor[static_cast<std::size_t>(r) * n + i] =
                v[static_cast<std::size_t>(i) * n + src]; // column src -> row r
    }
}

namespace {

// Flip each eigenvector so its first coordinate of nonneglible magnitude is
// positive; makes component signs independent of rotation order.
void canonical_sign(std::vector<double>& vec) {
    for (double x : vec) {
        if (std::fabs(x) > 1e-12) {
            if (x < 0.0)
                for (double& y : vec) y = -y;
            return;
        }
    }
}

} // namespace

PCAResult pca_fit(const Tensor& data, int k) {
    if (data.rank() != 2) throw contract_error("pca_fit: data must be [N,D]");
    int n = data.dim(0), d = data.dim(1);
    if (n < 2) throw contract_error("pca_fit: need at least two samples");
    if (k < 1 || k > std::min(n, d))
        throw contract_error("pca_fit: k must be in [1, min(N,D)]");

    PCAResult res;
    res.mean = Tensor({d});
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            mean[static_cast<std::size_t>(j)] += data[static_cast<std::size_t>(i) * d + j];
    for (int j = 0; j < d; ++j) {
        mean[static_cast<std::size_t>(j)] /= n;
        res.mean[static_cast<std::size_t>(j)] = static_cast<float>(mean[static_cast<std::size_t>(j)]);
    }

    std::vector<double> centered(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            centered[static_cast<std::size_t>(i) * d + j] =
                data[static_cast<std::size_t>(i) * d + j] - mean[static_cast<std::size_t>(j)];

    // Eigensolve the smaller Gram form: covariance [D,D] when D <= N, else
    // X·Xᵀ [N,N] whose eigenvectors map back through Xᵀu.
    bool gram = n < d;
    int m = gram ? n : d;
    std::vector<double> mat(static_cast<std::size_t>(m) * m, 0.0);
    if (!gram) {
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < d; ++a) {
                double xa = centered[static_cast<std::size_t>(i) * d + a];
                if (xa == 0.0) continue;
                for (int b = a; b < d; ++b)
                    mat[static_cast<std::size_t>(a) * d + b] +=
                        xa * centered[static_cast<std::size_t>(i) * d + b];
            }
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < a; ++b)
                mat[static_cast<std::size_t>(a) * d + b] = mat[static_cast<std::size_t>(b) * d + a];
    } else {
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double s = 0.0;
                for (int a = 0; a < d; ++a)
                    s += centered[static_cast<std::size_t>(i) * d + a] *
                         centered[static_cast<std::size_t>(j) * d + a];
                mat[static_cast<std::size_t>(i) * n + j] = s;
                mat[static_cast<std::size_t>(j) * n + i] = s;
            }
    }
    double divisor = static_cast<double>(n - 1);
    for (double& x : mat) x /= divisor;

    std::vector<double> evals, evecs;
    symmetric_eigen(mat, m, evals, evecs);

    res.total_variance = 0.0;
    if (gram) {
        // trace(X·Xᵀ) = trace(Xᵀ·X): the Gram eigenvalues are the nonzero
        // covariance eigenvalues, so the trace already matches.
        for (int i = 0; i < m; ++i) res.total_variance += std::max(0.0, evals[static_cast<std::size_t>(i)]);
    } else {
        for (int a = 0; a < d; ++a) res.total_variance += mat[static_cast<std::size_t>(a) * d + a];
    }

    res.components = Tensor({k, d});
    res.explained_variance.assign(static_cast<std::size_t>(k), 0.0);
    std::vector<double> comp(static_cast<std::size_t>(d));
    for (int r = 0; r < k; ++r) {
        double lambda = evals[static_cast<std::size_t>(r)];
        res.explained_variance[static_cast<std::size_t>(r)] = std::max(0.0, lambda);
        if (!gram) {
            for (int a = 0; a < d; ++a)
                comp[static_cast<std::size_t>(a)] = evecs[static_cast<std::size_t>(r) * d + a];
        } else {
            // v = Xᵀ u / ||Xᵀ u|| for Gram eigenvector u.
            for (int a = 0; a < d; ++a) comp[static_cast<std::size_t>(a)] = 0.0;
            for (int i = 0; i < n; ++i) {
                double ui = evecs[static_cast<std::size_t>(r) * n + i];
                if (ui == 0.0) continue;
                for (int a = 0; a < d; ++a)
                    comp[static_cast<std::size_t>(a)] +=
                        ui * centered[static_cast<std::size_t>(i) * d + a];
            }
            double norm = 0.0;
            for (double x : comp) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-300)
                for (double& x : comp) x /= norm;
        }
        canonical_sign(comp);
        for (int a = 0; a < d; ++a)
            res.components[static_cast<std::size_t>(r) * d + a] =
                static_cast<float>(comp[static_cast<std::size_t>(a)]);
    }
    return res;
}

Tensor pca_transform(const PCAResult& p, const Tensor& data) {
    if (data.rank() != 2 || data.dim(1) != p.components.dim(1))
        throw contract_error("pca_transform: data width does not match components");
    int n = data.dim(0), d = data.dim(1), k = p.components.dim(0);
    Tensor out({n, k});
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < k; ++r) {
            double s = 0.0;
            for (int a = 0; a < d; ++a)
                s += (static_cast<double>(data[static_cast<std::size_t>(i) * d + a]) -
                      p.mean[static_cast<std::size_t>(a)]) *
                     p.components[static_cast<std::size_t>(r) * d + a];
            out[static_cast<std::size_t>(i) * k + r] = static_cast<float>(s);
        }
    return out;
}

Tensor pca_inverse(const PCAResult& p, const Tensor& coords) {
    if (coords.rank() != 2 || coords.dim(1) != p.components.dim(0))
        throw contract_error("pca_inverse: coordinate width does not match components");
    int n = coords.dim(0), k = coords.dim(1), d = p.components.dim(1);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            double s = p.mean[static_cast<std::size_t>(a)];
            for (int r = 0; r < k; ++r)
                s += static_cast<double>(coords[static_cast<std::size_t>(i) * k + r]) *
                     p.components[static_cast<std::size_t>(r) * d + a];
            out[static_cast<std::size_t>(i) * d + a] = static_cast<float>(s);
        }
    return out;
}

// --- Reports ----------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> fold_rows(const std::vector<MetricsReport>& folds) {
    if (folds.empty()) throw contract_error("fold report: no folds");
    auto row = [&](const std::string& name, auto getter) {
        std::vector<std::string> r{name};
        double sum = 0.0;
        for (const MetricsReport& f : folds) {
            double v = getter(f);
            sum += v;
            r.push_back(fmt_fixed(v, 3));
        }
        r.push_back(fmt_fixed(sum / static_cast<double>(folds.size()), 3));
        return r;
    };
    return {row("Accuracy", [](const MetricsReport& f) { return f.accuracy; }),
            row("MCC", [](const MetricsReport& f) { return f.mcc; }),
            row("F1 Score", [](const MetricsReport& f) { return f.macro_f1; })};
}

std::vector<std::string> fold_header(std::size_t k) {
    std::vector<std::string> h{"Metric"};
    for (std::size_t i = 1; i <= k; ++i) h.push_back("Fold " + std::to_string(i));
    h.push_back("Average");
    return h;
}

std::vector<std::vector<std::string>> class_rows(const MetricsReport& r,
                                                 const std::vector<std::string>& names) {
    if (names.size() != r.per_class.size())
        throw contract_error("class report: name count does not match class count");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < r.per_class.size(); ++k)
        rows.push_back({names[k], fmt_fixed(r.per_class[k].precision, 3),
                        fmt_fixed(r.per_class[k].recall, 3),
                        fmt_fixed(r.per_class[k].f1, 3)});
    return rows;
}

const std::vector<std::string> kClassHeader = {"Class", "Precision", "Recall", "F1"};

std::vector<std::vector<std::string>> benchmark_rows(const std::vector<BenchmarkRow>& rows) {
    std::vector<std::vector<std::string>> out;
    for (const BenchmarkRow& r : rows) {
        std::string eff = r.sample_efficiency < 0.0
                              ? "N/A"
                              : fmt_fixed(100.0 * r.sample_efficiency, 2) + "%";
        out.push_back({r.model, fmt_fixed(100.0 * r.test_accuracy, 2) + "%", eff,
                       r.energy.empty() ? "N/A" : r.energy});
    }
    return out;
}

const std::vector<std::string> kBenchmarkHeader = {
    "Model", "Test Accuracy", "Sample Efficiency (10% train)", "Joules/Inference"};

} // namespace

std::string fold_report_markdown(const std::vector<MetricsReport>& folds) {
    return markdown_table(fold_header(folds.size()), fold_rows(folds));
}

std::string fold_report_csv(const std::vector<MetricsReport>& folds) {
    return csv_table(fold_header(folds.size()), fold_rows(folds));
}

std::string class_report_markdown(const MetricsReport& r,
                                  const std::vector<std::string>& class_names) {
    return markdown_table(kClassHeader, class_rows(r, class_names));
}

std::string class_report_csv(const MetricsReport& r,
                             const std::vector<std::string>& class_names) {
    return csv_table(kClassHeader, class_rows(r, class_names));
}

std::string benchmark_report_markdown(const std::vector<BenchmarkRow>& rows) {
    return markdown_table(kBenchmarkHeader, benchmark_rows(rows));
}

std::string benchmark_report_csv(const std::vector<BenchmarkRow>& rows) {
    return csv_table(kBenchmarkHeader, benchmark_rows(rows));
}

} // namespace capspike
