#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "capspike/metrics.hpp"
#include "capspike/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

using namespace capspike;

namespace {

ConfusionMatrix matrix2(long long a, long long b, long long c, long long d) {
    ConfusionMatrix cm;
    cm.classes = 2;
    cm.counts = {a, b, c, d};
    return cm;
}

} // namespace

TEST_CASE("confusion: counting and accuracy") {
    auto cm = confusion({0, 1}, {1, 1}, 2);
    CHECK(cm.at(1, 0) == 1);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(0, 0) == 0);
    CHECK(cm.total() == 2);

    auto diag = confusion({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
    CHECK(accuracy(diag) == doctest::Approx(1.0));

    CHECK(accuracy(matrix2(2, 1, 1, 2)) == doctest::Approx(4.0 / 6.0));

    CHECK_THROWS_AS(confusion({0, 1}, {0}, 2), contract_error);
    CHECK_THROWS_AS(confusion({0, 2}, {0, 0}, 2), contract_error);
    CHECK_THROWS_AS(confusion({0, -1}, {0, 0}, 2), contract_error);
    CHECK_THROWS_AS(accuracy(ConfusionMatrix{}), contract_error);
}

TEST_CASE("mcc: hand values and conventions") {
    CHECK(mcc(matrix2(2, 1, 1, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

    // Perfect predictions, balanced or not.
    ConfusionMatrix perfect;
    perfect.classes = 3;
    perfect.counts = {5, 0, 0, 0, 9, 0, 0, 0, 2};
    CHECK(mcc(perfect) == doctest::Approx(1.0));

    // Everything predicted as one class: zero denominator -> 0.
    ConfusionMatrix onecol;
    onecol.classes = 3;
    onecol.counts = {4, 0, 0, 3, 0, 0, 3, 0, 0};
    CHECK(mcc(onecol) == doctest::Approx(0.0));

    // Total inversion on binary is -1.
    CHECK(mcc(matrix2(0, 3, 3, 0)) == doctest::Approx(-1.0));
}

TEST_CASE("mcc: invariant under simultaneous row/column permutation") {
    ConfusionMatrix cm;
    cm.classes = 3;
    cm.counts = {8, 2, 1, 3, 12, 2, 0, 1, 6};
    double base = mcc(cm);

    // Relabel classes by the cycle 0->1->2->0.
    int perm[3] = {1, 2, 0};
    ConfusionMatrix relabeled;
    relabeled.classes = 3;
    relabeled.counts.assign(9, 0);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p) relabeled.at(perm[t], perm[p]) = cm.at(t, p);
    CHECK(mcc(relabeled) == doctest::Approx(base).epsilon(1e-12));

    // Any permutation-relabeled perfect matrix still scores 1.
    ConfusionMatrix perfect;
    perfect.classes = 3;
    perfect.counts.assign(9, 0);
    perfect.at(0, 0) = 7;
    perfect.at(1, 1) = 2;
    perfect.at(2, 2) = 11;
    ConfusionMatrix relperf;
    relperf.classes = 3;
    relperf.counts.assign(9, 0);
    for (int t = 0; t < 3; ++t) relperf.at(perm[t], perm[t]) = perfect.at(t, t);
    CHECK(mcc(relperf) == doctest::Approx(1.0));
}

TEST_CASE("per_class_prf: hand values and degenerate cells") {
    auto prf = per_class_prf(matrix2(2, 1, 0, 3));
    CHECK(prf[0].precision == doctest::Approx(1.0));
    CHECK(prf[0].recall == doctest::Approx(2.0 / 3.0));
    CHECK(prf[0].f1 == doctest::Approx(0.8));

    ConfusionMatrix perfect;
    perfect.classes = 3;
    perfect.counts = {4, 0, 0, 0, 4, 0, 0, 0, 4};
    for (const ClassPRF& c : per_class_prf(perfect)) {
        CHECK(c.precision == doctest::Approx(1.0));
        CHECK(c.recall == doctest::Approx(1.0));
        CHECK(c.f1 == doctest::Approx(1.0));
    }

    // Class 1 never predicted and never present: all three collapse to 0.
    ConfusionMatrix hollow;
    hollow.classes = 2;
    hollow.counts = {5, 0, 0, 0};
    auto h = per_class_prf(hollow);
    CHECK(h[1].precision == 0.0);
    CHECK(h[1].recall == 0.0);
    CHECK(h[1].f1 == 0.0);
}

TEST_CASE("frequency-weighted recall equals accuracy") {
    RandomStream rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> preds, labels;
        int n = 20 + static_cast<int>(rng.uniform_int(200));
        for (int i = 0; i < n; ++i) {
            preds.push_back(static_cast<int>(rng.uniform_int(3)));
            labels.push_back(static_cast<int>(rng.uniform_int(3)));
        }
        auto cm = confusion(preds, labels, 3);
        auto prf = per_class_prf(cm);
        double weighted = 0.0;
        for (int k = 0; k < 3; ++k)
            weighted += (static_cast<double>(cm.row_sum(k)) / cm.total()) * prf[k].recall;
        CHECK(weighted == doctest::Approx(accuracy(cm)).epsilon(1e-12));
    }
}

TEST_CASE("joules_per_inference: canonical values and scaling laws") {
    CHECK(joules_per_inference(38.556, 324.0) == doctest::Approx(0.1190).epsilon(1e-4));
    CHECK(joules_per_inference(24.9535, 143.0) == doctest::Approx(0.1745).epsilon(1e-4));
    CHECK(joules_per_inference(0.0, 100.0) == doctest::Approx(0.0));

    // Linear in power, inverse in throughput.
    CHECK(joules_per_inference(20.0, 50.0) ==
          doctest::Approx(2.0 * joules_per_inference(10.0, 50.0)));
    CHECK(joules_per_inference(10.0, 100.0) ==
          doctest::Approx(0.5 * joules_per_inference(10.0, 50.0)));

    CHECK_THROWS_AS(joules_per_inference(10.0, 0.0), contract_error);
    CHECK_THROWS_AS(joules_per_inference(10.0, -5.0), contract_error);
}

TEST_CASE("loihi_energy_bounds: canonical range") {
    EnergyModel m;
    m.gpu_joules_per_inference = 0.1745;
    m.inferences_per_second = 106.0;
    // efficiency_factor 109, per-core 0.01002 W, 55 cores are the defaults.
    auto b = loihi_energy_bounds(m);
    CHECK(b.lower == doctest::Approx(0.0016).epsilon(0.01));
    CHECK(b.upper == doctest::Approx(0.0052).epsilon(0.01));
    CHECK(std::fabs(b.lower - 0.1745 / 109.0) < 1e-12);
    CHECK(std::fabs(b.upper - 0.01002 * 55.0 / 106.0) < 1e-12);
    CHECK(b.lower <= b.upper);

    // Factor 1 collapses the lower bound onto the GPU figure.
    EnergyModel flat = m;
    flat.efficiency_factor = 1.0;
    CHECK(loihi_energy_bounds(flat).lower == doctest::Approx(0.1745));

    EnergyModel bad = m;
    bad.cores = 0;
    CHECK_THROWS_AS(loihi_energy_bounds(bad), contract_error);
    bad = m;
    bad.gpu_joules_per_inference = 0.0;
    CHECK_THROWS_AS(loihi_energy_bounds(bad), contract_error);
}

TEST_CASE("symmetric_eigen: known 2x2 and residual property") {
    // [[2,1],[1,2]] has eigenpairs (3, [1,1]/sqrt2) and (1, [1,-1]/sqrt2).
    std::vector<double> evals, evecs;
    symmetric_eigen({2.0, 1.0, 1.0, 2.0}, 2, evals, evecs);
    CHECK(evals[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(evals[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(evecs[0]) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-10));
    CHECK(std::fabs(std::fabs(evecs[2]) - std::sqrt(0.5)) < 1e-10);

    // Random symmetric 12x12: A v = lambda v and orthonormality.
    RandomStream rng(5);
    int n = 12;
    std::vector<double> a(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double v = rng.normal();
            a[static_cast<std::size_t>(i) * n + j] = v;
            a[static_cast<std::size_t>(j) * n + i] = v;
        }
    symmetric_eigen(a, n, evals, evecs);
    for (int r = 0; r < n; ++r) {
        if (r + 1 < n) CHECK(evals[r] >= evals[r + 1] - 1e-12);
        for (int i = 0; i < n; ++i) {
            double av = 0.0;
            for (int j = 0; j < n; ++j)
                av += a[static_cast<std::size_t>(i) * n + j] *
                      evecs[static_cast<std::size_t>(r) * n + j];
            CHECK(av == doctest::Approx(evals[r] * evecs[static_cast<std::size_t>(r) * n + i])
                            .epsilon(1e-8));
        }
        for (int r2 = 0; r2 <= r; ++r2) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j)
                dot += evecs[static_cast<std::size_t>(r) * n + j] *
                       evecs[static_cast<std::size_t>(r2) * n + j];
            CHECK(dot == doctest::Approx(r == r2 ? 1.0 : 0.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("pca: collinear points put >=99.9% variance on one component") {
    // Points along direction (3,4)/5 with a dash of numeric dust.
    int n = 40;
    Tensor data({n, 2});
    RandomStream rng(2);
    for (int i = 0; i < n; ++i) {
        float t = rng.uniform(-2.0f, 2.0f);
        data[static_cast<std::size_t>(i) * 2 + 0] = 0.6f * t;
        data[static_cast<std::size_t>(i) * 2 + 1] = 0.8f * t;
    }
    auto p = pca_fit(data, 1);
    CHECK(p.explained_variance[0] / p.total_variance >= 0.999);
    // The component is (0.6, 0.8) up to sign; canonical sign makes x positive.
    CHECK(p.components[0] == doctest::Approx(0.6).epsilon(1e-4));
    CHECK(p.components[1] == doctest::Approx(0.8).epsilon(1e-4));
}

TEST_CASE("pca: k=D round trip reconstructs within 1e-4") {
    RandomStream rng(7);
    int n = 30, d = 6;
    Tensor data({n, d});
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = rng.normal();
    auto p = pca_fit(data, d);
    Tensor coords = pca_transform(p, data);
    Tensor back = pca_inverse(p, coords);
    for (std::size_t i = 0; i < data.size(); ++i)
        CHECK(std::fabs(back[i] - data[i]) < 1e-4);
}

TEST_CASE("pca: components solve the covariance eigenproblem (random 20x10)") {
    RandomStream rng(11);
    int n = 20, d = 10;
    Tensor data({n, d});
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = rng.normal();

    auto p = pca_fit(data, d);

    // Build the covariance in f64 straight from the data (independent of the
    // fit's internal path) and check C v = lambda v for every component.
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += data[static_cast<std::size_t>(i) * d + j];
    for (double& m : mean) m /= n;
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cov[static_cast<std::size_t>(a) * d + b] +=
                    (data[static_cast<std::size_t>(i) * d + a] - mean[static_cast<std::size_t>(a)]) *
                    (data[static_cast<std::size_t>(i) * d + b] - mean[static_cast<std::size_t>(b)]) /
                    (n - 1);

    for (int r = 0; r < d; ++r) {
        double lambda = p.explained_variance[static_cast<std::size_t>(r)];
        double norm = 0.0;
        for (int a = 0; a < d; ++a) {
            double cv = 0.0;
            for (int b = 0; b < d; ++b)
                cv += cov[static_cast<std::size_t>(a) * d + b] *
                      p.components[static_cast<std::size_t>(r) * d + b];
            CHECK(std::fabs(cv - lambda * p.components[static_cast<std::size_t>(r) * d + a]) < 1e-5);
            norm += static_cast<double>(p.components[static_cast<std::size_t>(r) * d + a]) *
                    p.components[static_cast<std::size_t>(r) * d + a];
        }
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
        // Deterministic sign: first coordinate of visible magnitude positive.
        for (int a = 0; a < d; ++a) {
            float x = p.components[static_cast<std::size_t>(r) * d + a];
            if (std::fabs(x) > 1e-6) {
                CHECK(x > 0.0f);
                break;
            }
        }
    }
}

TEST_CASE("pca: gram path (N < D) agrees with covariance path") {
    // 8 samples in 20 dims forces the N x N route; embed the same data in a
    // wider matrix and compare against explicit covariance eigenvectors.
    RandomStream rng(3);
    int n = 8, d = 20;
    Tensor data({n, d});
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = rng.normal();
    auto p = pca_fit(data, 4);

    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += data[static_cast<std::size_t>(i) * d + j];
    for (double& m : mean) m /= n;
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cov[static_cast<std::size_t>(a) * d + b] +=
                    (data[static_cast<std::size_t>(i) * d + a] - mean[static_cast<std::size_t>(a)]) *
                    (data[static_cast<std::size_t>(i) * d + b] - mean[static_cast<std::size_t>(b)]) /
                    (n - 1);
    for (int r = 0; r < 4; ++r) {
        double lambda = p.explained_variance[static_cast<std::size_t>(r)];
        for (int a = 0; a < d; ++a) {
            double cv = 0.0;
            for (int b = 0; b < d; ++b)
                cv += cov[static_cast<std::size_t>(a) * d + b] *
                      p.components[static_cast<std::size_t>(r) * d + b];
            CHECK(std::fabs(cv - lambda * p.components[static_cast<std::size_t>(r) * d + a]) < 1e-5);
        }
    }
    // Total variance equals the covariance trace either way.
    double trace = 0.0;
    for (int a = 0; a < d; ++a) trace += cov[static_cast<std::size_t>(a) * d + a];
    CHECK(p.total_variance == doctest::Approx(trace).epsilon(1e-6));
}

TEST_CASE("pca: contract violations") {
    Tensor ok({4, 3});
    CHECK_THROWS_AS(pca_fit(ok, 0), contract_error);
    CHECK_THROWS_AS(pca_fit(ok, 4), contract_error); // k > min(N,D)
    Tensor one({1, 3});
    CHECK_THROWS_AS(pca_fit(one, 1), contract_error); // N < 2
    Tensor flat({5});
    CHECK_THROWS_AS(pca_fit(flat, 1), contract_error);
    auto p = pca_fit(ok, 2);
    Tensor wrong({4, 5});
    CHECK_THROWS_AS(pca_transform(p, wrong), contract_error);
    Tensor coords({4, 3});
    CHECK_THROWS_AS(pca_inverse(p, coords), contract_error);
}

TEST_CASE("fold report carries the Average column") {
    std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    std::vector<MetricsReport> folds = {
        evaluate_predictions({0, 0, 1, 1, 2, 2}, labels, 3),
        evaluate_predictions({0, 1, 1, 1, 2, 2}, labels, 3),
    };
    std::string md = fold_report_markdown(folds);
    CHECK(md.find("| Metric") != std::string::npos);
    CHECK(md.find("Fold 1") != std::string::npos);
    CHECK(md.find("Fold 2") != std::string::npos);
    CHECK(md.find("Average") != std::string::npos);
    CHECK(md.find("Accuracy") != std::string::npos);
    CHECK(md.find("MCC") != std::string::npos);
    CHECK(md.find("F1 Score") != std::string::npos);
    // Average accuracy of 1.0 and 5/6 is 0.917.
    CHECK(md.find("0.917") != std::string::npos);

    std::string csv = fold_report_csv(folds);
    CHECK(csv.find("Metric,Fold 1,Fold 2,Average") != std::string::npos);
    CHECK(csv.find("Accuracy,1.000,0.833,0.917") != std::string::npos);
}

TEST_CASE("class report columns ordered Precision, Recall, F1") {
    auto r = evaluate_predictions({0, 0, 1, 0, 1, 1}, {0, 0, 1, 1, 1, 1}, 2);
    std::string md = class_report_markdown(r, {"alpha", "beta"});
    auto pos_p = md.find("Precision");
    auto pos_r = md.find("Recall");
    auto pos_f = md.find("F1");
    CHECK(pos_p != std::string::npos);
    CHECK(pos_p < pos_r);
    CHECK(pos_r < pos_f);
    CHECK(md.find("alpha") != std::string::npos);

    std::string csv = class_report_csv(r, {"alpha", "beta"});
    CHECK(csv.find("Class,Precision,Recall,F1") != std::string::npos);
    // class 0: P = 2/3, R = 1, F1 = 0.8
    CHECK(csv.find("alpha,0.667,1.000,0.800") != std::string::npos);

    CHECK_THROWS_AS(class_report_csv(r, {"only-one"}), contract_error);
}

TEST_CASE("benchmark report formats percentages, N/A, and ranges") {
    std::vector<BenchmarkRow> rows = {
        {"convnet", 0.8370, 0.6190, "0.1190"},
        {"capsule", 0.8930, 0.7530, "0.1745"},
        {"spiking", 0.8560, -1.0, "0.0016-0.0052"},
    };
    std::string md = benchmark_report_markdown(rows);
    CHECK(md.find("83.70%") != std::string::npos);
    CHECK(md.find("75.30%") != std::string::npos);
    CHECK(md.find("N/A") != std::string::npos);
    CHECK(md.find("0.0016-0.0052") != std::string::npos);
    std::string csv = benchmark_report_csv(rows);
    CHECK(csv.find("Model,Test Accuracy,Sample Efficiency (10% train),Joules/Inference") !=
          std::string::npos);
    CHECK(csv.find("capsule,89.30%,75.30%,0.1745") != std::string::npos);
}
