#include "capspike/convert.hpp"

#include "capspike/errors.hpp"
#include "capspike/io_util.hpp"
#include "capspike/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace capspike {

namespace {

constexpr std::uint16_t kSnnVersion = 1;

bool is_weight_layer(LayerKind k) {
    return k == LayerKind::Conv2D || k == LayerKind::Dense;
}

// Per-channel scale s = gamma/sqrt(var+eps) folded into the preceding weight
// layer. Both conv [F,C,k,k] and dense [U,I] weights are channel-major, so
// each output channel owns one contiguous block.
void fold_into(const LayerSpec& bn, Tensor& w, Tensor& b) {
    std::size_t channels = bn.gamma.size();
    std::size_t block = w.size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
        double s = static_cast<double>(bn.gamma[c]) /
                   std::sqrt(static_cast<double>(bn.var[c]) + bn.eps);
        double shift = static_cast<double>(bn.beta[c]) - s * bn.mean[c];
        float* row = w.data() + c * block;
        for (std::size_t j = 0; j < block; ++j)
            row[j] = static_cast<float>(s * row[j]);
        b[c] = static_cast<float>(s * b[c] + shift);
    }
}

// One spiking population: a dense matrix (with any preceding data-movement
// composed in), its bias, and the model layer whose rectified output
// calibrates the population's scale.
struct Stage {
    Tensor matrix;           // [out, in-of-previous-stage]
    std::vector<float> bias; // out
    int ref_layer = -1;
};

Tensor matmul_f64(const Tensor& a, const Tensor& b) {
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
                acc += static_cast<double>(a[static_cast<std::size_t>(i * k + t)]) *
                       b[static_cast<std::size_t>(t * n + j)];
            out[static_cast<std::size_t>(i * n + j)] = static_cast<float>(acc);
        }
    return out;
}

Tensor conv_as_matrix(const LayerSpec& spec, const std::vector<int>& in,
                      const std::vector<int>& out, const Tensor& w) {
    int ci = in[0], h = in[1], wd = in[2];
    int f = out[0], oh = out[1], ow = out[2];
    int k = spec.kernel;
    Tensor m({f * oh * ow, ci * h * wd});
    for (int fc = 0; fc < f; ++fc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                std::size_t row = static_cast<std::size_t>((fc * oh + oy) * ow + ox);
                for (int c = 0; c < ci; ++c)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            int iy = oy * spec.stride - spec.padding + ky;
                            int ix = ox * spec.stride - spec.padding + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            m[row * m.dim(1) + static_cast<std::size_t>((c * h + iy) * wd + ix)] =
                                w[static_cast<std::size_t>(((fc * ci + c) * k + ky) * k + kx)];
                        }
            }
    return m;
}

Tensor pool_as_matrix(const LayerSpec& spec, const std::vector<int>& in,
                      const std::vector<int>& out) {
    int c = in[0], h = in[1], wd = in[2];
    int oh = out[1], ow = out[2];
    float share = 1.0f / static_cast<float>(spec.window * spec.window);
    Tensor m({c * oh * ow, c * h * wd});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                std::size_t row = static_cast<std::size_t>((ch * oh + oy) * ow + ox);
                for (int wy = 0; wy < spec.window; ++wy)
                    for (int wx = 0; wx < spec.window; ++wx) {
                        int iy = oy * spec.stride + wy;
                        int ix = ox * spec.stride + wx;
                        m[row * m.dim(1) + static_cast<std::size_t>((ch * h + iy) * wd + ix)] = share;
                    }
            }
    return m;
}

Tensor pad_as_matrix(const LayerSpec& spec, const std::vector<int>& in,
                     const std::vector<int>& out) {
    int c = in[0], h = in[1], wd = in[2];
    int oh = out[1], ow = out[2];
    int a = spec.amount;
    Tensor m({c * oh * ow, c * h * wd});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wd; ++x) {
                std::size_t row = static_cast<std::size_t>((ch * oh + y + a) * ow + x + a);
                m[row * m.dim(1) + static_cast<std::size_t>((ch * h + y) * wd + x)] = 1.0f;
            }
    return m;
}

// Lower a validated, batchnorm-free model to a chain of dense stages.
// Flatten/ReLU/Softmax contribute no stage; ZeroPad composes into the next
// weight layer's matrix.
std::vector<Stage> plan_stages(const ModelGraph& m) {
    const std::vector<LayerSpec>& layers = m.layers();
    int n = static_cast<int>(layers.size());
    std::vector<Stage> stages;
    Tensor pending;
    auto in_shape = [&](int i) {
        return i == 0 ? m.input_shape() : m.layer_shapes()[static_cast<std::size_t>(i - 1)];
    };
    auto ref_for = [&](int i) {
        return (i + 1 < n && layers[static_cast<std::size_t>(i + 1)].kind == LayerKind::ReLU)
                   ? i + 1
                   : i;
    };
    auto consume_pending = [&](Tensor matrix) {
        if (!pending.defined()) return matrix;
        Tensor composed = matmul_f64(matrix, pending);
        pending = Tensor();
        return composed;
    };
    for (int i = 0; i < n; ++i) {
        const LayerSpec& spec = layers[static_cast<std::size_t>(i)];
        const std::vector<int>& out = m.layer_shapes()[static_cast<std::size_t>(i)];
        switch (spec.kind) {
        case LayerKind::Conv2D: {
            std::vector<int> pix = m.layer_param_indices(i);
            const Tensor& w = m.params()[static_cast<std::size_t>(pix[0])].value;
            const Tensor& b = m.params()[static_cast<std::size_t>(pix[1])].value;
            Stage st;
            st.matrix = consume_pending(conv_as_matrix(spec, in_shape(i), out, w));
            st.bias.resize(static_cast<std::size_t>(out[0] * out[1] * out[2]));
            for (int fc = 0; fc < out[0]; ++fc)
                for (int p = 0; p < out[1] * out[2]; ++p)
                    st.bias[static_cast<std::size_t>(fc * out[1] * out[2] + p)] = b[static_cast<std::size_t>(fc)];
            st.ref_layer = ref_for(i);
            stages.push_back(std::move(st));
            break;
        }
        case LayerKind::Dense: {
            std::vector<int> pix = m.layer_param_indices(i);
            const Tensor& w = m.params()[static_cast<std::size_t>(pix[0])].value;
            const Tensor& b = m.params()[static_cast<std::size_t>(pix[1])].value;
            Stage st;
            // cloned: tensor copies alias, and the caller rescales the matrix
            st.matrix = consume_pending(w.clone());
            st.bias.assign(b.data(), b.data() + b.size());
            st.ref_layer = ref_for(i);
            stages.push_back(std::move(st));
            break;
        }
        case LayerKind::AvgPool: {
            Stage st;
            st.matrix = consume_pending(pool_as_matrix(spec, in_shape(i), out));
            st.bias.assign(static_cast<std::size_t>(st.matrix.dim(0)), 0.0f);
            st.ref_layer = ref_for(i);
            stages.push_back(std::move(st));
            break;
        }
        case LayerKind::ZeroPad: {
            Tensor p = pad_as_matrix(spec, in_shape(i), out);
            pending = pending.defined() ? matmul_f64(p, pending) : std::move(p);
            break;
        }
        case LayerKind::Flatten:
        case LayerKind::ReLU:
        case LayerKind::Softmax:
            break; // no values / the spike nonlinearity / stripped
        default:
            throw compile_error("layer " + std::to_string(i) + ": " +
                                layer_kind_name(spec.kind) + " reached the lowering stage");
        }
    }
    if (pending.defined())
        throw compile_error("zero-padding at the end of the network feeds no weight layer");
    if (stages.empty())
        throw compile_error("network has no weight layers to compile");
    return stages;
}

int argmax_of(const Tensor& t) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(t.size()); ++i)
        if (t[static_cast<std::size_t>(i)] > t[static_cast<std::size_t>(best)]) best = i;
    return best;
}

bool has_batchnorm(const ModelGraph& m) {
    for (const LayerSpec& s : m.layers())
        if (s.kind == LayerKind::BatchNorm) return true;
    return false;
}

// Nearest-rank percentile of an unsorted value pool (p in (0,100]).
double percentile_value(std::vector<float>& values, double p) {
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return static_cast<double>(values[rank - 1]);
}

} // namespace

ModelGraph fold_batchnorm(const ModelGraph& model) {
    const std::vector<LayerSpec>& layers = model.layers();
    int n = static_cast<int>(layers.size());

    std::vector<int> remap(static_cast<std::size_t>(n), -1);
    std::vector<LayerSpec> kept;
    for (int i = 0; i < n; ++i) {
        if (layers[static_cast<std::size_t>(i)].kind == LayerKind::BatchNorm) {
            if (i == 0 || !is_weight_layer(layers[static_cast<std::size_t>(i - 1)].kind))
                throw compile_error("layer " + std::to_string(i) +
                                    ": batchnorm must immediately follow conv2d or dense to fold");
            remap[static_cast<std::size_t>(i)] = remap[static_cast<std::size_t>(i - 1)];
            continue;
        }
        remap[static_cast<std::size_t>(i)] = static_cast<int>(kept.size());
        kept.push_back(layers[static_cast<std::size_t>(i)]);
    }
    // Residual sources point at surviving indices (a source that was a
    // batchnorm maps to the layer it folded into).
    for (int i = 0; i < n; ++i) {
        const LayerSpec& s = layers[static_cast<std::size_t>(i)];
        if (s.kind != LayerKind::Add) continue;
        kept[static_cast<std::size_t>(remap[static_cast<std::size_t>(i)])].source_layer_index =
            remap[static_cast<std::size_t>(s.source_layer_index)];
    }

    ModelGraph out(model.input_shape(), kept, model.class_count(), 0);
    for (int i = 0; i < n; ++i) {
        const LayerSpec& s = layers[static_cast<std::size_t>(i)];
        if (s.kind == LayerKind::BatchNorm) continue;
        for (int pi : model.layer_param_indices(i)) {
            const Param& p = model.params()[static_cast<std::size_t>(pi)];
            std::string suffix = p.name.substr(p.name.find('.') + 1);
            // cloned so folding never writes through to the source model
            out.param("layer" + std::to_string(remap[static_cast<std::size_t>(i)]) + "." + suffix) =
                p.value.clone();
        }
        if (is_weight_layer(s.kind) && i + 1 < n &&
            layers[static_cast<std::size_t>(i + 1)].kind == LayerKind::BatchNorm) {
            std::string base = "layer" + std::to_string(remap[static_cast<std::size_t>(i)]);
            fold_into(layers[static_cast<std::size_t>(i + 1)], out.param(base + ".weight"),
                      out.param(base + ".bias"));
        }
    }
    return out;
}

std::vector<std::string> validate_convertible(const ModelGraph& model) {
    std::vector<std::string> violations;
    const std::vector<LayerSpec>& layers = model.layers();
    int n = static_cast<int>(layers.size());
    for (int i = 0; i < n; ++i) {
        std::string at = "layer " + std::to_string(i) + ": ";
        switch (layers[static_cast<std::size_t>(i)].kind) {
        case LayerKind::Conv2D:
        case LayerKind::AvgPool:
        case LayerKind::Dense:
        case LayerKind::Flatten:
        case LayerKind::ZeroPad:
        case LayerKind::ReLU:
            break;
        case LayerKind::Softmax:
            if (i + 1 != n) violations.push_back(at + "softmax is only supported as the final layer");
            break;
        case LayerKind::BatchNorm:
            if (i == 0 || !is_weight_layer(layers[static_cast<std::size_t>(i - 1)].kind))
                violations.push_back(at + "batchnorm is foldable only after conv2d or dense");
            break;
        case LayerKind::Add:
            violations.push_back(at + "residual skip-connection unsupported");
            break;
        case LayerKind::PrimaryCaps:
        case LayerKind::ClassCaps:
            violations.push_back(at + "capsule layer unsupported");
            break;
        case LayerKind::MaxPool:
            violations.push_back(at + "max pooling unsupported (rate-coded max is inexact)");
            break;
        case LayerKind::Dropout:
            violations.push_back(at + "dropout unsupported in a compiled network");
            break;
        case LayerKind::DecoderDense:
            violations.push_back(at + "decoder layer unsupported");
            break;
        }
    }
    return violations;
}

std::pair<SpikingNetwork, ConversionReport>
normalize_and_convert(const ModelGraph& model, const LabeledImageSet& calibration,
                      double percentile) {
    if (calibration.size() == 0)
        throw contract_error("normalize_and_convert: calibration set is empty");
    if (!(percentile > 0.0 && percentile <= 100.0))
        throw contract_error("normalize_and_convert: percentile must lie in (0, 100], got " +
                             fmt_fixed(percentile, 3));

    ModelGraph folded = has_batchnorm(model) ? fold_batchnorm(model) : model;
    {
        std::vector<std::string> violations = validate_convertible(folded);
        if (!violations.empty()) {
            std::string msg = "model is not convertible:";
            for (const std::string& v : violations) msg += "\n  " + v;
            throw compile_error(msg);
        }
    }

    std::vector<Stage> stages = plan_stages(folded);
    std::size_t count = stages.size();

    // Calibration pass: pool rectified activations per stage, track ANN hits.
    std::vector<std::vector<float>> acts(count);
    for (std::size_t s = 0; s < count; ++s)
        acts[s].reserve(calibration.size() *
                        static_cast<std::size_t>(stages[s].matrix.dim(0)));
    long long hits = 0;
    for (int i = 0; i < static_cast<int>(calibration.size()); ++i) {
        ForwardResult fwd = folded.forward_sample(nullptr, calibration.sample(i), false);
        if (argmax_of(fwd.output) == calibration.labels[static_cast<std::size_t>(i)]) ++hits;
        for (std::size_t s = 0; s < count; ++s) {
            const Tensor& a = fwd.layer_outputs[static_cast<std::size_t>(stages[s].ref_layer)];
            for (std::size_t j = 0; j < a.size(); ++j)
                acts[s].push_back(a[j] > 0.0f ? a[j] : 0.0f);
        }
    }

    ConversionReport report;
    report.percentile = percentile;
    report.ann_accuracy = static_cast<double>(hits) / static_cast<double>(calibration.size());

    std::vector<double> lambda(count);
    for (std::size_t s = 0; s < count; ++s) {
        if (*std::max_element(acts[s].begin(), acts[s].end()) <= 0.0f)
            throw compile_error("layer " + std::to_string(stages[s].ref_layer) +
                                " produced all-zero activations on the calibration set; "
                                "the normalization scale is degenerate");
        lambda[s] = percentile_value(acts[s], percentile);
        if (lambda[s] <= 0.0)
            throw compile_error("layer " + std::to_string(stages[s].ref_layer) +
                                ": activation percentile " + fmt_fixed(percentile, 3) +
                                " is zero; the normalization scale is degenerate");
    }
    report.scale_factors = lambda;

    SpikingNetwork net;
    net.input_size = stages[0].matrix.dim(1);
    net.class_count = folded.class_count();
    for (std::size_t s = 0; s < count; ++s) {
        SpikingLayer layer;
        layer.in_size = stages[s].matrix.dim(1);
        layer.out_size = stages[s].matrix.dim(0);
        double wscale = (s == 0 ? 1.0 : lambda[s - 1]) / lambda[s];
        layer.weights = std::move(stages[s].matrix);
        for (std::size_t j = 0; j < layer.weights.size(); ++j)
            layer.weights[j] = static_cast<float>(layer.weights[j] * wscale);
        layer.bias_current.resize(stages[s].bias.size());
        for (std::size_t j = 0; j < stages[s].bias.size(); ++j)
            layer.bias_current[j] = static_cast<float>(stages[s].bias[j] / lambda[s]);
        layer.threshold = 1.0f;
        net.layers.push_back(std::move(layer));
    }

    std::vector<int> preds = simulate_dataset(net, calibration, SimConfig{});
    long long snn_hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == calibration.labels[i]) ++snn_hits;
    report.snn_accuracy = static_cast<double>(snn_hits) / static_cast<double>(preds.size());
    report.conversion_gap = report.ann_accuracy - report.snn_accuracy;
    return {std::move(net), std::move(report)};
}

std::vector<double> rate_correspondence(const SpikingNetwork& net, const ModelGraph& source_model,
                                        const std::vector<double>& lambdas, const Tensor& sample,
                                        int timesteps) {
    if (timesteps < 1) throw contract_error("rate_correspondence: timesteps must be >= 1");
    ModelGraph folded = has_batchnorm(source_model) ? fold_batchnorm(source_model) : source_model;
    std::vector<Stage> stages = plan_stages(folded);
    if (stages.size() != net.layers.size() || lambdas.size() != stages.size())
        throw contract_error("rate_correspondence: network does not match the source model");
    for (std::size_t s = 0; s < stages.size(); ++s)
        if (stages[s].matrix.dim(0) != net.layers[s].out_size)
            throw contract_error("rate_correspondence: network does not match the source model");

    ForwardResult fwd = folded.forward_sample(nullptr, sample, false);
    SimConfig cfg;
    cfg.timesteps = timesteps;
    RunTrace trace = run_inference(net, sample, cfg);

    std::vector<double> deviations(stages.size());
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const Tensor& a = fwd.layer_outputs[static_cast<std::size_t>(stages[s].ref_layer)];
        const std::vector<long long>& counts = trace.layer_spike_counts[s];
        double total = 0.0;
        for (std::size_t j = 0; j < counts.size(); ++j) {
            double rate = static_cast<double>(counts[j]) / timesteps;
            double ideal = std::max(0.0, static_cast<double>(a[j])) / lambdas[s];
            total += std::abs(rate - ideal);
        }
        deviations[s] = total / static_cast<double>(counts.size());
    }
    return deviations;
}

void save_snn(const SpikingNetwork& net, const std::string& path) {
    ByteWriter w;
    w.text("SNNC");
    w.u16(kSnnVersion);
    w.u8(net.encoding == InputEncoding::Poisson ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(net.input_size));
    w.u32(static_cast<std::uint32_t>(net.class_count));
    w.u32(static_cast<std::uint32_t>(net.layers.size()));
    for (const SpikingLayer& l : net.layers) {
        w.u32(static_cast<std::uint32_t>(l.in_size));
        w.u32(static_cast<std::uint32_t>(l.out_size));
        w.f32(l.threshold);
    }
    for (const SpikingLayer& l : net.layers) {
        for (std::size_t i = 0; i < l.weights.size(); ++i) w.f32(l.weights[i]);
        for (float b : l.bias_current) w.f32(b);
    }
    w.write_file_with_crc(path);
}

SpikingNetwork load_snn(const std::string& path) {
    ByteReader r(path); // verifies the CRC32 trailer
    if (r.text(4) != "SNNC") throw bad_magic_error(path + ": not a spiking network file");
    std::uint16_t version = r.u16();
    if (version != kSnnVersion)
        throw version_error(path + ": format version " + std::to_string(version) + ", expected " +
                            std::to_string(kSnnVersion));
    std::uint8_t enc = r.u8();
    if (enc > 1) throw io_error(path + ": unknown encoding tag " + std::to_string(enc));

    SpikingNetwork net;
    net.encoding = enc == 1 ? InputEncoding::Poisson : InputEncoding::ConstantCurrent;
    net.input_size = static_cast<int>(r.u32());
    net.class_count = static_cast<int>(r.u32());
    std::uint32_t n_layers = r.u32();
    if (n_layers == 0) throw io_error(path + ": network has no layers");

    for (std::uint32_t i = 0; i < n_layers; ++i) {
        SpikingLayer l;
        l.in_size = static_cast<int>(r.u32());
        l.out_size = static_cast<int>(r.u32());
        l.threshold = r.f32();
        if (l.in_size < 1 || l.out_size < 1)
            throw io_error(path + ": layer " + std::to_string(i) + " has degenerate size");
        if (!(l.threshold > 0.0f))
            throw io_error(path + ": layer " + std::to_string(i) + " threshold must be positive");
        int expect_in = i == 0 ? net.input_size : net.layers.back().out_size;
        if (l.in_size != expect_in)
            throw io_error(path + ": layer " + std::to_string(i) + " fan-in " +
                           std::to_string(l.in_size) + " breaks the chain (expected " +
                           std::to_string(expect_in) + ")");
        net.layers.push_back(std::move(l));
    }
    if (net.layers.back().out_size != net.class_count)
        throw io_error(path + ": output layer size " + std::to_string(net.layers.back().out_size) +
                       " does not match class count " + std::to_string(net.class_count));

    for (SpikingLayer& l : net.layers) {
        l.weights = Tensor({l.out_size, l.in_size});
        for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] = r.f32();
        l.bias_current.resize(static_cast<std::size_t>(l.out_size));
        for (std::size_t i = 0; i < l.bias_current.size(); ++i) l.bias_current[i] = r.f32();
    }
    if (r.remaining() != 0)
        throw io_error(path + ": " + std::to_string(r.remaining()) + " trailing bytes");
    return net;
}

} // namespace capspike
