#include "capspike/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "capspike/io_util.hpp"
#include "capspike/rng.hpp"

namespace capspike {
namespace {

constexpr int kH = 28;
constexpr int kW = 28;
constexpr double kPi = 3.14159265358979323846;

std::vector<std::string> default_class_names(int k) {
    if (k == 3) return {"meningioma", "glioma", "pituitary"};
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i) names.push_back("class-" + std::to_string(i));
    return names;
}

// Ring and blob parameters shared by every image of one patient.
struct PatientParams {
    double cx, cy;       // skull center
    double radius;       // skull radius
    double ex, ey;       // ellipse eccentricity per axis
    double ring_gain;    // ring intensity
    double ring_width;   // ring Gaussian width
};

PatientParams patient_params(std::uint64_t seed, int patient_id) {
    RandomStream rng(seed, "patient", static_cast<std::uint64_t>(patient_id));
    PatientParams p;
    p.cx = 13.5 + rng.uniform(-1.2f, 1.2f);
    p.cy = 13.5 + rng.uniform(-1.2f, 1.2f);
    p.radius = rng.uniform(9.0f, 11.0f);
    p.ex = rng.uniform(0.92f, 1.08f);
    p.ey = rng.uniform(0.92f, 1.08f);
    p.ring_gain = rng.uniform(0.65f, 0.85f);
    p.ring_width = rng.uniform(1.2f, 1.8f);
    return p;
}

// Angle of the inferior (image-bottom) direction; y grows downward, so the
// bottom of the skull sits at +pi/2. Class geometry is defined around it.
constexpr double kInferior = kPi / 2.0;
constexpr double kInferiorCone = 0.9; // half-angle excluded from class 1

void render_sample(float* px, const PatientParams& p, int label,
                   std::uint64_t seed, int sample_index) {
    RandomStream rng(seed, "sample", static_cast<std::uint64_t>(sample_index));
    double amp = rng.uniform(0.75f, 0.95f);
    double sigma = rng.uniform(1.3f, 1.9f);

    double theta = 0.0, rho = 0.0;
    switch (label) {
    case 0: // on the ring boundary
        theta = rng.uniform_double() * 2.0 * kPi;
        rho = p.radius;
        break;
    case 1: { // strictly interior, outside the inferior cone
        double arc = 2.0 * kPi - 2.0 * kInferiorCone;
        theta = kInferior + kInferiorCone + rng.uniform_double() * arc;
        rho = (0.15 + 0.40 * rng.uniform_double()) * p.radius;
        break;
    }
    default: // fixed inferior region
        theta = kInferior + (rng.uniform_double() - 0.5) * 0.7;
        rho = (0.55 + 0.17 * rng.uniform_double()) * p.radius;
        break;
    }
    double bx = p.cx + p.ex * rho * std::cos(theta);
    double by = p.cy + p.ey * rho * std::sin(theta);

    double inv2w = 1.0 / (2.0 * p.ring_width * p.ring_width);
    double inv2s = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < kH; ++y) {
        for (int x = 0; x < kW; ++x) {
            double dx = (x - p.cx) / p.ex;
            double dy = (y - p.cy) / p.ey;
            double d = std::sqrt(dx * dx + dy * dy) - p.radius;
            double v = p.ring_gain * std::exp(-d * d * inv2w);
            double ddx = x - bx, ddy = y - by;
            v += amp * std::exp(-(ddx * ddx + ddy * ddy) * inv2s);
            v += rng.normal(0.0f, 0.03f);
            px[y * kW + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
}

} // namespace

Tensor LabeledImageSet::sample(int index) const {
    if (index < 0 || index >= size())
        throw contract_error("sample index " + std::to_string(index) + " out of range");
    int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::size_t n = static_cast<std::size_t>(c) * h * w;
    Tensor out({c, h, w});
    std::memcpy(out.data(), images.data() + static_cast<std::size_t>(index) * n,
                n * sizeof(float));
    return out;
}

LabeledImageSet LabeledImageSet::subset(const std::vector<int>& indices) const {
    int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::size_t per = static_cast<std::size_t>(c) * h * w;
    LabeledImageSet out;
    out.images = Tensor({static_cast<int>(indices.size()), c, h, w});
    out.class_names = class_names;
    out.labels.reserve(indices.size());
    out.patient_ids.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        int src = indices[i];
        if (src < 0 || src >= size())
            throw contract_error("subset index " + std::to_string(src) + " out of range");
        std::memcpy(out.images.data() + i * per, images.data() + src * per,
                    per * sizeof(float));
        out.labels.push_back(labels[static_cast<std::size_t>(src)]);
        out.patient_ids.push_back(patient_ids[static_cast<std::size_t>(src)]);
    }
    return out;
}

std::vector<int> LabeledImageSet::class_counts(int k) const {
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int l : labels) {
        if (l < 0 || l >= k) throw contract_error("label out of range in class_counts");
        ++counts[static_cast<std::size_t>(l)];
    }
    return counts;
}

std::vector<int> largest_remainder_counts(int n, const std::vector<double>& weights) {
    if (n < 0) throw contract_error("largest_remainder_counts: negative total");
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (weights.empty() || wsum <= 0.0)
        throw contract_error("largest_remainder_counts: weights must be positive");
    std::vector<int> counts(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> frac; // (-fraction, index) for stable sort
    int assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        double exact = n * weights[i] / wsum;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        frac.emplace_back(-(exact - counts[i]), i);
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (int r = 0; r < n - assigned; ++r)
        ++counts[frac[static_cast<std::size_t>(r)].second];
    return counts;
}

LabeledImageSet gen_synthetic(int n, const std::array<double, 3>& priors,
                              int patients, std::uint64_t seed) {
    if (n <= 0) throw contract_error("gen_synthetic: n must be positive");
    if (patients <= 0 || patients > n)
        throw contract_error("gen_synthetic: patients must be in [1, n]");
    for (double p : priors)
        if (p <= 0.0) throw contract_error("gen_synthetic: class priors must be positive");
    double psum = priors[0] + priors[1] + priors[2];
    if (std::fabs(psum - 1.0) > 1e-6)
        throw contract_error("gen_synthetic: class priors sum to " + fmt_fixed(psum, 8) +
                             ", expected 1");

    std::vector<double> w(priors.begin(), priors.end());
    std::vector<int> class_n = largest_remainder_counts(n, w);
    std::vector<int> class_p = largest_remainder_counts(patients, w);

    // Every class with samples needs at least one patient; every patient
    // needs at least one sample. Shift allocations until both hold.
    for (std::size_t k = 0; k < 3; ++k) {
        while (class_n[k] > 0 && class_p[k] == 0) {
            std::size_t donor = static_cast<std::size_t>(
                std::max_element(class_p.begin(), class_p.end()) - class_p.begin());
            --class_p[donor];
            ++class_p[k];
        }
        while (class_p[k] > class_n[k]) {
            std::size_t taker = 0;
            for (std::size_t j = 1; j < 3; ++j)
                if (class_n[j] - class_p[j] > class_n[taker] - class_p[taker]) taker = j;
            --class_p[k];
            ++class_p[taker];
        }
    }

    LabeledImageSet ds;
    ds.images = Tensor({n, 1, kH, kW});
    ds.labels.reserve(static_cast<std::size_t>(n));
    ds.patient_ids.reserve(static_cast<std::size_t>(n));
    ds.class_names = default_class_names(3);

    int next_patient = 0;
    int emitted = 0;
    for (int k = 0; k < 3; ++k) {
        int nk = class_n[static_cast<std::size_t>(k)];
        int pk = class_p[static_cast<std::size_t>(k)];
        if (nk == 0) continue;
        std::vector<int> per_patient =
            largest_remainder_counts(nk, std::vector<double>(static_cast<std::size_t>(pk), 1.0));
        for (int j = 0; j < pk; ++j) {
            int pid = next_patient++;
            PatientParams pp = patient_params(seed, pid);
            for (int s = 0; s < per_patient[static_cast<std::size_t>(j)]; ++s) {
                float* px = ds.images.data() +
                            static_cast<std::size_t>(emitted) * kH * kW;
                render_sample(px, pp, k, seed, emitted);
                ds.labels.push_back(k);
                ds.patient_ids.push_back(pid);
                ++emitted;
            }
        }
    }
    return ds;
}

namespace {

struct PatientGroup {
    int patient;
    int label;
    std::vector<int> samples;
};

// Patients in first-appearance order, each with its label and sample indices.
std::vector<PatientGroup> group_by_patient(const LabeledImageSet& ds) {
    std::vector<PatientGroup> groups;
    std::map<int, std::size_t> where;
    for (int i = 0; i < ds.size(); ++i) {
        int pid = ds.patient_ids[static_cast<std::size_t>(i)];
        auto it = where.find(pid);
        if (it == where.end()) {
            where.emplace(pid, groups.size());
            groups.push_back({pid, ds.labels[static_cast<std::size_t>(i)], {i}});
        } else {
            groups[it->second].samples.push_back(i);
        }
    }
    return groups;
}

int max_label(const LabeledImageSet& ds) {
    int m = 0;
    for (int l : ds.labels) m = std::max(m, l);
    return m;
}

} // namespace

SplitResult split_stratified_by_patient(const LabeledImageSet& ds, double test_fraction,
                                        std::uint64_t seed) {
    if (ds.size() == 0) throw contract_error("split: empty dataset");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw contract_error("split: test_fraction must be in (0,1)");

    std::vector<PatientGroup> groups = group_by_patient(ds);
    int classes = max_label(ds) + 1;

    SplitResult res;
    std::vector<int> train_idx, test_idx;
    for (int k = 0; k < classes; ++k) {
        std::vector<std::size_t> mine;
        std::size_t class_total = 0;
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (groups[g].label == k) {
                mine.push_back(g);
                class_total += groups[g].samples.size();
            }
        if (mine.empty()) continue;
        if (mine.size() == 1) {
            res.warnings.push_back("class " + std::to_string(k) +
                                   " has a single patient; kept in train (no "
                                   "patient-disjoint split possible)");
            for (int s : groups[mine[0]].samples) train_idx.push_back(s);
            continue;
        }
        RandomStream rng(seed, "split", static_cast<std::uint64_t>(k));
        seeded_shuffle(mine, rng);

        double target = test_fraction * static_cast<double>(class_total);
        double in_test = 0.0;
        std::vector<std::size_t> test_groups;
        for (std::size_t g : mine) {
            double sz = static_cast<double>(groups[g].samples.size());
            // Take the patient only if it moves the test count closer to target.
            if (std::abs(in_test + sz - target) < std::abs(in_test - target)) {
                test_groups.push_back(g);
                in_test += sz;
            }
        }
        // Both sides must see the class when two or more patients exist.
        if (test_groups.empty()) test_groups.push_back(mine.back());
        if (test_groups.size() == mine.size()) test_groups.pop_back();

        for (std::size_t g : mine) {
            bool is_test = std::find(test_groups.begin(), test_groups.end(), g) !=
                           test_groups.end();
            for (int s : groups[g].samples)
                (is_test ? test_idx : train_idx).push_back(s);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    res.train = ds.subset(train_idx);
    res.test = ds.subset(test_idx);
    return res;
}

std::vector<Fold> kfold_by_patient(const LabeledImageSet& ds, int k, std::uint64_t seed) {
    if (ds.size() == 0) throw contract_error("kfold: empty dataset");
    std::vector<PatientGroup> groups = group_by_patient(ds);
    if (k < 2) throw contract_error("kfold: k must be at least 2");
    if (static_cast<std::size_t>(k) > groups.size())
        throw contract_error("kfold: k exceeds the number of patients (" +
                             std::to_string(groups.size()) + ")");

    // Deal patients to folds round-robin, class by class, so folds stay
    // stratified while every fold receives floor(P/k) or ceil(P/k) patients.
    int classes = max_label(ds) + 1;
    std::vector<std::vector<std::size_t>> fold_groups(static_cast<std::size_t>(k));
    std::size_t cursor = 0;
    for (int c = 0; c < classes; ++c) {
        std::vector<std::size_t> mine;
        for (std::size_t g = 0; g < groups.size(); ++g)
            if (groups[g].label == c) mine.push_back(g);
        RandomStream rng(seed, "kfold", static_cast<std::uint64_t>(c));
        seeded_shuffle(mine, rng);
        for (std::size_t g : mine)
            fold_groups[cursor++ % static_cast<std::size_t>(k)].push_back(g);
    }

    std::vector<Fold> folds;
    for (int f = 0; f < k; ++f) {
        std::vector<int> val_idx, train_idx;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            bool in_fold = std::find(fold_groups[static_cast<std::size_t>(f)].begin(),
                                     fold_groups[static_cast<std::size_t>(f)].end(),
                                     g) != fold_groups[static_cast<std::size_t>(f)].end();
            for (int s : groups[g].samples) (in_fold ? val_idx : train_idx).push_back(s);
        }
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
        folds.push_back({ds.subset(train_idx), ds.subset(val_idx)});
    }
    return folds;
}

LabeledImageSet subsample_fraction(const LabeledImageSet& ds, double fraction,
                                   std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw contract_error("subsample: fraction must be in (0,1]");
    if (fraction == 1.0) return ds;

    int classes = max_label(ds) + 1;
    std::vector<int> keep;
    for (int k = 0; k < classes; ++k) {
        std::vector<int> mine;
        for (int i = 0; i < ds.size(); ++i)
            if (ds.labels[static_cast<std::size_t>(i)] == k) mine.push_back(i);
        if (mine.empty()) continue;
        int m = static_cast<int>(std::llround(fraction * static_cast<double>(mine.size())));
        if (m == 0)
            throw contract_error("subsample: fraction " + fmt_fixed(fraction, 4) +
                                 " leaves class " + std::to_string(k) + " empty");
        RandomStream rng(seed, "subsample", static_cast<std::uint64_t>(k));
        seeded_shuffle(mine, rng);
        keep.insert(keep.end(), mine.begin(), mine.begin() + m);
    }
    std::sort(keep.begin(), keep.end());
    return ds.subset(keep);
}

void save_dataset(const LabeledImageSet& ds, const std::string& path) {
    int c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    ByteWriter wr;
    wr.text("NGDS");
    wr.u16(1);
    wr.u32(static_cast<std::uint32_t>(ds.size()));
    wr.u32(static_cast<std::uint32_t>(h));
    wr.u32(static_cast<std::uint32_t>(w));
    wr.u32(static_cast<std::uint32_t>(c));
    std::size_t per = static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < ds.size(); ++i) {
        wr.u16(static_cast<std::uint16_t>(ds.labels[static_cast<std::size_t>(i)]));
        wr.u32(static_cast<std::uint32_t>(ds.patient_ids[static_cast<std::size_t>(i)]));
        const float* px = ds.images.data() + static_cast<std::size_t>(i) * per;
        for (std::size_t j = 0; j < per; ++j) wr.f32(px[j]);
    }
    wr.write_file_with_crc(path);
}

LabeledImageSet load_dataset(const std::string& path) {
    ByteReader rd(path);
    if (rd.text(4) != "NGDS") throw bad_magic_error(path + ": not an NGDS file");
    std::uint16_t version = rd.u16();
    if (version != 1)
        throw version_error(path + ": unsupported NGDS version " + std::to_string(version));
    int n = static_cast<int>(rd.u32());
    int h = static_cast<int>(rd.u32());
    int w = static_cast<int>(rd.u32());
    int c = static_cast<int>(rd.u32());
    if (n <= 0 || h <= 0 || w <= 0 || c <= 0)
        throw io_error(path + ": degenerate NGDS dimensions");

    LabeledImageSet ds;
    ds.images = Tensor({n, c, h, w});
    ds.labels.reserve(static_cast<std::size_t>(n));
    ds.patient_ids.reserve(static_cast<std::size_t>(n));
    std::size_t per = static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < n; ++i) {
        ds.labels.push_back(static_cast<int>(rd.u16()));
        ds.patient_ids.push_back(static_cast<int>(rd.u32()));
        float* px = ds.images.data() + static_cast<std::size_t>(i) * per;
        for (std::size_t j = 0; j < per; ++j) px[j] = rd.f32();
    }
    if (rd.remaining() != 0) throw io_error(path + ": trailing bytes after samples");
    ds.class_names = default_class_names(max_label(ds) + 1);
    return ds;
}

} // namespace capspike
