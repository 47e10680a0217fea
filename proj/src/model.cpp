#include "capspike/model.hpp"

#include "capspike/errors.hpp"
#include "capspike/io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace capspike {

using nlohmann::json;

namespace {

const char* kKindNames[] = {
    "conv2d", "dense", "avgpool", "maxpool", "flatten", "zeropad", "relu",
    "softmax", "dropout", "batchnorm", "add", "primary_caps", "class_caps",
    "decoder_dense",
};

} // namespace

std::string layer_kind_name(LayerKind kind) {
    return kKindNames[static_cast<int>(kind)];
}

LayerKind layer_kind_from_name(const std::string& name) {
    for (int i = 0; i < static_cast<int>(std::size(kKindNames)); ++i)
        if (name == kKindNames[i]) return static_cast<LayerKind>(i);
    throw version_error("unknown layer kind tag '" + name + "'");
}

LayerSpec LayerSpec::conv2d(int filters, int kernel, int stride, int padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}
LayerSpec LayerSpec::dense(int units) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    return s;
}
LayerSpec LayerSpec::avgpool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::AvgPool;
    s.window = window;
    s.stride = stride;
    return s;
}
LayerSpec LayerSpec::maxpool(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.window = window;
    s.stride = stride;
    return s;
}
LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}
LayerSpec LayerSpec::zeropad(int amount) {
    LayerSpec s;
    s.kind = LayerKind::ZeroPad;
    s.amount = amount;
    return s;
}
LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    return s;
}
LayerSpec LayerSpec::softmax_out() {
    LayerSpec s;
    s.kind = LayerKind::Softmax;
    return s;
}
LayerSpec LayerSpec::dropout(float rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}
LayerSpec LayerSpec::batchnorm(std::vector<float> gamma, std::vector<float> beta,
                               std::vector<float> mean, std::vector<float> var, float eps) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.gamma = std::move(gamma);
    s.beta = std::move(beta);
    s.mean = std::move(mean);
    s.var = std::move(var);
    s.eps = eps;
    return s;
}
LayerSpec LayerSpec::add_from(int source_layer_index) {
    LayerSpec s;
    s.kind = LayerKind::Add;
    s.source_layer_index = source_layer_index;
    return s;
}
LayerSpec LayerSpec::primary_caps(int channels, int caps_dim, int kernel, int stride) {
    LayerSpec s;
    s.kind = LayerKind::PrimaryCaps;
    s.channels = channels;
    s.caps_dim = caps_dim;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}
LayerSpec LayerSpec::class_caps(int num_caps, int caps_dim, int routing_iters) {
    LayerSpec s;
    s.kind = LayerKind::ClassCaps;
    s.num_caps = num_caps;
    s.caps_dim = caps_dim;
    s.routing_iters = routing_iters;
    return s;
}
LayerSpec LayerSpec::decoder_dense(int units) {
    LayerSpec s;
    s.kind = LayerKind::DecoderDense;
    s.units = units;
    return s;
}

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(std::vector<int> input_shape, std::vector<LayerSpec> layers,
                       int class_count, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), class_count_(class_count) {
    validate_and_register();
    init_params(seed);
}

void ModelGraph::validate_and_register() {
    if (class_count_ < 2) throw contract_error("model: class_count must be >= 2");
    if (input_shape_.empty()) throw contract_error("model: empty input shape");
    if (layers_.empty()) throw contract_error("model: empty layer list");

    std::vector<int> cur = input_shape_;
    layer_shapes_.clear();
    param_index_.assign(layers_.size(), {});
    params_.clear();
    class_caps_layer_ = -1;
    first_decoder_layer_ = -1;

    auto add_param = [&](int layer, const std::string& suffix, std::vector<int> shape) {
        Param p;
        p.name = "layer" + std::to_string(layer) + "." + suffix;
        p.layer_index = layer;
        p.value = Tensor::zeros(std::move(shape));
        param_index_[static_cast<std::size_t>(layer)].push_back(static_cast<int>(params_.size()));
        params_.push_back(std::move(p));
    };
    auto spatial = [](const std::vector<int>& s, const char* who) {
        if (s.size() != 3)
            throw dim_error(std::string(who) + " expects a [C,H,W] input, got " + shape_str(s));
    };

    int caps_dim_out = 0;
    for (int i = 0; i < static_cast<int>(layers_.size()); ++i) {
        LayerSpec& spec = layers_[static_cast<std::size_t>(i)];
        bool in_decoder = class_caps_layer_ >= 0;
        if (in_decoder && spec.kind != LayerKind::DecoderDense && spec.kind != LayerKind::ReLU)
            throw contract_error("layer " + std::to_string(i) + ": only decoder_dense/relu may follow class_caps");
        switch (spec.kind) {
        case LayerKind::Conv2D: {
            spatial(cur, "conv2d");
            if (spec.kernel > cur[1] + 2 * spec.padding || spec.kernel > cur[2] + 2 * spec.padding)
                throw dim_error("layer " + std::to_string(i) + ": conv kernel exceeds padded input");
            add_param(i, "weight", {spec.filters, cur[0], spec.kernel, spec.kernel});
            add_param(i, "bias", {spec.filters});
            int oh = (cur[1] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            int ow = (cur[2] + 2 * spec.padding - spec.kernel) / spec.stride + 1;
            cur = {spec.filters, oh, ow};
            break;
        }
        case LayerKind::Dense: {
            if (cur.size() != 1)
                throw dim_error("layer " + std::to_string(i) + ": dense expects a flat input, got " +
                                shape_str(cur) + " (insert flatten)");
            add_param(i, "weight", {spec.units, cur[0]});
            add_param(i, "bias", {spec.units});
            cur = {spec.units};
            break;
        }
        case LayerKind::AvgPool:
        case LayerKind::MaxPool: {
            spatial(cur, "pool2d");
            if (spec.window > cur[1] || spec.window > cur[2])
                throw dim_error("layer " + std::to_string(i) + ": pool window exceeds input");
            cur = {cur[0], (cur[1] - spec.window) / spec.stride + 1,
                   (cur[2] - spec.window) / spec.stride + 1};
            break;
        }
        case LayerKind::Flatten:
            cur = {static_cast<int>(shape_product(cur))};
            break;
        case LayerKind::ZeroPad:
            spatial(cur, "zeropad");
            cur = {cur[0], cur[1] + 2 * spec.amount, cur[2] + 2 * spec.amount};
            break;
        case LayerKind::ReLU:
        case LayerKind::Softmax:
            break;
        case LayerKind::Dropout:
            if (spec.rate < 0.0f || spec.rate >= 1.0f)
                throw contract_error("layer " + std::to_string(i) + ": dropout rate must be in [0,1)");
            break;
        case LayerKind::BatchNorm: {
            if (cur.size() != 1 && cur.size() != 3)
                throw dim_error("layer " + std::to_string(i) + ": batchnorm expects [C,H,W] or [N]");
            std::size_t cc = static_cast<std::size_t>(cur[0]);
            if (spec.gamma.empty()) spec.gamma.assign(cc, 1.0f);
            if (spec.beta.empty()) spec.beta.assign(cc, 0.0f);
            if (spec.mean.empty()) spec.mean.assign(cc, 0.0f);
            if (spec.var.empty()) spec.var.assign(cc, 1.0f);
            if (spec.gamma.size() != cc || spec.beta.size() != cc ||
                spec.mean.size() != cc || spec.var.size() != cc)
                throw dim_error("layer " + std::to_string(i) + ": batchnorm statistics sized " +
                                std::to_string(spec.gamma.size()) + ", channels " + std::to_string(cur[0]));
            break;
        }
        case LayerKind::Add: {
            int src = spec.source_layer_index;
            if (src < 0 || src >= i)
                throw contract_error("layer " + std::to_string(i) + ": add source " +
                                     std::to_string(src) + " must point at an earlier layer");
            if (layer_shapes_[static_cast<std::size_t>(src)] != cur)
                throw dim_error("layer " + std::to_string(i) + ": add source shape " +
                                shape_str(layer_shapes_[static_cast<std::size_t>(src)]) +
                                " != current " + shape_str(cur));
            break;
        }
        case LayerKind::PrimaryCaps: {
            spatial(cur, "primary_caps");
            if (spec.kernel > cur[1] || spec.kernel > cur[2])
                throw dim_error("layer " + std::to_string(i) + ": primary_caps kernel exceeds input");
            int out_ch = spec.channels * spec.caps_dim;
            add_param(i, "weight", {out_ch, cur[0], spec.kernel, spec.kernel});
            add_param(i, "bias", {out_ch});
            int oh = (cur[1] - spec.kernel) / spec.stride + 1;
            int ow = (cur[2] - spec.kernel) / spec.stride + 1;
            cur = {spec.channels * oh * ow, spec.caps_dim};
            break;
        }
        case LayerKind::ClassCaps: {
            if (cur.size() != 2)
                throw dim_error("layer " + std::to_string(i) + ": class_caps expects capsule input [N,dim]");
            if (class_caps_layer_ >= 0)
                throw contract_error("layer " + std::to_string(i) + ": second class_caps layer");
            add_param(i, "weight", {cur[0], spec.num_caps, spec.caps_dim, cur[1]});
            class_caps_layer_ = i;
            caps_dim_out = spec.caps_dim;
            cur = {spec.num_caps};
            break;
        }
        case LayerKind::DecoderDense: {
            if (class_caps_layer_ < 0)
                throw contract_error("layer " + std::to_string(i) + ": decoder_dense before class_caps");
            int in;
            if (first_decoder_layer_ < 0) {
                first_decoder_layer_ = i;
                in = layers_[static_cast<std::size_t>(class_caps_layer_)].num_caps * caps_dim_out;
            } else {
                in = cur[0];
            }
            add_param(i, "weight", {spec.units, in});
            add_param(i, "bias", {spec.units});
            cur = {spec.units};
            break;
        }
        }
        layer_shapes_.push_back(cur);
    }

    // Main-path output must be one score per class.
    std::vector<int> head = class_caps_layer_ >= 0
        ? layer_shapes_[static_cast<std::size_t>(class_caps_layer_)]
        : layer_shapes_.back();
    if (head.size() != 1 || head[0] != class_count_)
        throw dim_error("model head produces " + shape_str(head) + ", expected [" +
                        std::to_string(class_count_) + "]");
    if (first_decoder_layer_ >= 0) {
        int img = static_cast<int>(shape_product(input_shape_));
        if (layer_shapes_.back() != std::vector<int>{img})
            throw dim_error("decoder output " + shape_str(layer_shapes_.back()) +
                            " must match the flattened input [" + std::to_string(img) + "]");
    }
}

void ModelGraph::init_params(std::uint64_t seed) {
    RandomStream rng(mix64(seed ^ hash_tag("model-init")));
    for (Param& p : params_) {
        bool is_bias = p.name.size() >= 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0;
        if (is_bias) continue; // biases stay zero
        const LayerSpec& spec = layers_[static_cast<std::size_t>(p.layer_index)];
        float limit;
        if (spec.kind == LayerKind::ClassCaps) {
            // prediction-vector transforms: small uniform keeps routing
            // inputs out of squash saturation
            limit = 0.1f;
        } else {
            std::size_t fan_in = 1;
            for (int d = 1; d < p.value.rank(); ++d) fan_in *= static_cast<std::size_t>(p.value.dim(d));
            limit = std::sqrt(6.0f / static_cast<float>(fan_in));
        }
        for (std::size_t k = 0; k < p.value.size(); ++k)
            p.value[k] = limit * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
    }
}

Tensor& ModelGraph::param(const std::string& name) {
    for (Param& p : params_)
        if (p.name == name) return p.value;
    throw contract_error("unknown parameter '" + name + "'");
}

const Tensor& ModelGraph::param(const std::string& name) const {
    for (const Param& p : params_)
        if (p.name == name) return p.value;
    throw contract_error("unknown parameter '" + name + "'");
}

bool ModelGraph::has_param(const std::string& name) const {
    for (const Param& p : params_)
        if (p.name == name) return true;
    return false;
}

std::vector<int> ModelGraph::layer_param_indices(int layer_index) const {
    if (layer_index < 0 || layer_index >= static_cast<int>(layers_.size()))
        throw contract_error("layer index out of range");
    return param_index_[static_cast<std::size_t>(layer_index)];
}

ForwardResult ModelGraph::forward_sample(Tape* tape, const Tensor& image, bool training,
                                         int decode_label, RandomStream* dropout_rng) const {
    if (image.shape() != input_shape_)
        throw dim_error("forward: input " + shape_str(image.shape()) + " does not match model input " +
                        shape_str(input_shape_));
    RandomStream fallback_rng(1);
    RandomStream* rng = dropout_rng ? dropout_rng : &fallback_rng;

    ForwardResult result;
    result.layer_outputs.resize(layers_.size());
    Tensor cur = image;
    Tensor pre_softmax;
    int last_main = class_caps_layer_ >= 0 ? class_caps_layer_ : static_cast<int>(layers_.size()) - 1;

    for (int i = 0; i <= last_main; ++i) {
        const LayerSpec& spec = layers_[static_cast<std::size_t>(i)];
        const auto& pidx = param_index_[static_cast<std::size_t>(i)];
        switch (spec.kind) {
        case LayerKind::Conv2D:
            cur = conv2d(tape, cur, params_[static_cast<std::size_t>(pidx[0])].value,
                         spec.stride, spec.padding);
            cur = bias_add_channel(tape, cur, params_[static_cast<std::size_t>(pidx[1])].value);
            break;
        case LayerKind::Dense:
            cur = dense(tape, cur, params_[static_cast<std::size_t>(pidx[0])].value,
                        params_[static_cast<std::size_t>(pidx[1])].value);
            break;
        case LayerKind::AvgPool:
            cur = pool2d(tape, cur, spec.window, spec.stride, PoolMode::Avg);
            break;
        case LayerKind::MaxPool:
            cur = pool2d(tape, cur, spec.window, spec.stride, PoolMode::Max);
            break;
        case LayerKind::Flatten:
            cur = reshape_op(tape, cur, {static_cast<int>(cur.size())});
            break;
        case LayerKind::ZeroPad:
            cur = zero_pad2d(tape, cur, spec.amount);
            break;
        case LayerKind::ReLU:
            cur = relu(tape, cur);
            break;
        case LayerKind::Softmax:
            pre_softmax = cur;
            cur = softmax(tape, cur);
            break;
        case LayerKind::Dropout:
            if (training) cur = dropout(tape, cur, spec.rate, *rng);
            break;
        case LayerKind::BatchNorm:
            cur = batchnorm_fixed(tape, cur, spec.gamma, spec.beta, spec.mean, spec.var, spec.eps);
            break;
        case LayerKind::Add:
            cur = add(tape, cur, result.layer_outputs[static_cast<std::size_t>(spec.source_layer_index)]);
            break;
        case LayerKind::PrimaryCaps:
            cur = primary_caps(tape, cur, params_[static_cast<std::size_t>(pidx[0])].value,
                               params_[static_cast<std::size_t>(pidx[1])].value,
                               spec.channels, spec.caps_dim, spec.stride);
            break;
        case LayerKind::ClassCaps: {
            Tensor u_hat = caps_transform(tape, cur, params_[static_cast<std::size_t>(pidx[0])].value);
            result.routing = dynamic_routing(tape, u_hat, spec.routing_iters);
            result.caps = result.routing.v;
            cur = caps_length(tape, result.caps);
            break;
        }
        case LayerKind::DecoderDense:
            throw contract_error("unreachable: decoder layer in main path");
        }
        result.layer_outputs[static_cast<std::size_t>(i)] = cur;
    }

    result.output = cur;
    result.logits = pre_softmax.defined() ? pre_softmax : cur;

    if (first_decoder_layer_ >= 0) {
        int idx = decode_label;
        if (!training || idx < 0) {
            idx = 0;
            for (int k = 1; k < class_count_; ++k)
                if (result.output[static_cast<std::size_t>(k)] > result.output[static_cast<std::size_t>(idx)])
                    idx = k;
        }
        Tensor dec = caps_mask(tape, result.caps, idx);
        result.decoded = run_decoder(tape, dec);
    }
    return result;
}

Tensor ModelGraph::run_decoder(Tape* tape, Tensor dec) const {
    int last_dec = -1;
    for (int i = first_decoder_layer_; i < static_cast<int>(layers_.size()); ++i)
        if (layers_[static_cast<std::size_t>(i)].kind == LayerKind::DecoderDense) last_dec = i;
    for (int i = first_decoder_layer_; i < static_cast<int>(layers_.size()); ++i) {
        const LayerSpec& spec = layers_[static_cast<std::size_t>(i)];
        const auto& pidx = param_index_[static_cast<std::size_t>(i)];
        if (spec.kind == LayerKind::ReLU) {
            dec = relu(tape, dec);
        } else {
            dec = dense(tape, dec, params_[static_cast<std::size_t>(pidx[0])].value,
                        params_[static_cast<std::size_t>(pidx[1])].value);
            if (i == last_dec) dec = sigmoid(tape, dec); // decoder ends in sigmoid
        }
    }
    return dec;
}

Tensor ModelGraph::decode_caps(Tape* tape, const Tensor& caps, int capsule_index) const {
    if (first_decoder_layer_ < 0) throw contract_error("model has no decoder");
    return run_decoder(tape, caps_mask(tape, caps, capsule_index));
}

Tensor ModelGraph::forward(const Tensor& batch, bool training) const {
    bool single = batch.shape() == input_shape_;
    int B = single ? 1 : batch.dim(0);
    if (!single) {
        std::vector<int> rest(batch.shape().begin() + 1, batch.shape().end());
        if (rest != input_shape_)
            throw dim_error("forward: batch " + shape_str(batch.shape()) +
                            " does not match model input " + shape_str(input_shape_));
    }
    RandomStream rng(1);
    Tensor out({B, class_count_});
    std::size_t sample_size = shape_product(input_shape_);
    for (int b = 0; b < B; ++b) {
        Tensor sample(input_shape_);
        const float* src = batch.data() + static_cast<std::size_t>(b) * sample_size;
        std::copy(src, src + sample_size, sample.data());
        ForwardResult r = forward_sample(nullptr, sample, training, -1, &rng);
        for (int k = 0; k < class_count_; ++k)
            out[static_cast<std::size_t>(b) * class_count_ + k] = r.output[static_cast<std::size_t>(k)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json layer_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = layer_kind_name(s.kind);
    j["filters"] = s.filters;
    j["kernel"] = s.kernel;
    j["stride"] = s.stride;
    j["padding"] = s.padding;
    j["units"] = s.units;
    j["window"] = s.window;
    j["amount"] = s.amount;
    j["rate"] = s.rate;
    j["source_layer_index"] = s.source_layer_index;
    j["channels"] = s.channels;
    j["caps_dim"] = s.caps_dim;
    j["num_caps"] = s.num_caps;
    j["routing_iters"] = s.routing_iters;
    if (s.kind == LayerKind::BatchNorm) {
        j["gamma"] = s.gamma;
        j["beta"] = s.beta;
        j["mean"] = s.mean;
        j["var"] = s.var;
        j["eps"] = s.eps;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec s;
    s.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    s.filters = j.at("filters").get<int>();
    s.kernel = j.at("kernel").get<int>();
    s.stride = j.at("stride").get<int>();
    s.padding = j.at("padding").get<int>();
    s.units = j.at("units").get<int>();
    s.window = j.at("window").get<int>();
    s.amount = j.at("amount").get<int>();
    s.rate = j.at("rate").get<float>();
    s.source_layer_index = j.at("source_layer_index").get<int>();
    s.channels = j.at("channels").get<int>();
    s.caps_dim = j.at("caps_dim").get<int>();
    s.num_caps = j.at("num_caps").get<int>();
    s.routing_iters = j.at("routing_iters").get<int>();
    if (s.kind == LayerKind::BatchNorm) {
        s.gamma = j.at("gamma").get<std::vector<float>>();
        s.beta = j.at("beta").get<std::vector<float>>();
        s.mean = j.at("mean").get<std::vector<float>>();
        s.var = j.at("var").get<std::vector<float>>();
        s.eps = j.at("eps").get<float>();
    }
    return s;
}

constexpr std::uint16_t kModelVersion = 1;

} // namespace

void save_model(const ModelGraph& model, const std::string& path) {
    json manifest;
    manifest["input_shape"] = model.input_shape();
    manifest["class_count"] = model.class_count();
    json jl = json::array();
    for (const LayerSpec& s : model.layers()) jl.push_back(layer_to_json(s));
    manifest["layers"] = jl;
    json jp = json::array();
    for (const Param& p : model.params())
        jp.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    manifest["params"] = jp;
    std::string text = manifest.dump();

    ByteWriter w;
    w.text("NNIR");
    w.u16(kModelVersion);
    w.u64(text.size());
    w.text(text);
    std::uint64_t blob_bytes = 0;
    for (const Param& p : model.params()) blob_bytes += p.value.size() * 4;
    w.u64(blob_bytes);
    for (const Param& p : model.params())
        for (std::size_t i = 0; i < p.value.size(); ++i) w.f32(p.value[i]);
    w.write_file_with_crc(path);
}

ModelGraph load_model(const std::string& path) {
    ByteReader r(path); // verifies the CRC32 trailer
    if (r.text(4) != "NNIR") throw bad_magic_error(path + ": not a model file");
    std::uint16_t version = r.u16();
    if (version != kModelVersion)
        throw version_error(path + ": model format version " + std::to_string(version) +
                            ", expected " + std::to_string(kModelVersion));
    std::uint64_t manifest_len = r.u64();
    std::string text = r.text(manifest_len);
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw io_error(path + ": bad manifest: " + e.what());
    }

    ModelGraph model;
    try {
        model.input_shape_ = manifest.at("input_shape").get<std::vector<int>>();
        model.class_count_ = manifest.at("class_count").get<int>();
        for (const json& j : manifest.at("layers"))
            model.layers_.push_back(layer_from_json(j));
    } catch (const json::exception& e) {
        throw io_error(path + ": bad manifest: " + e.what());
    }
    model.validate_and_register();

    std::uint64_t blob_bytes = r.u64();
    std::uint64_t expected = 0;
    for (const Param& p : model.params_) expected += p.value.size() * 4;
    if (blob_bytes != expected)
        throw io_error(path + ": parameter blob holds " + std::to_string(blob_bytes) +
                       " bytes, layer graph needs " + std::to_string(expected));
    for (Param& p : model.params_)
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = r.f32();
    return model;
}

std::vector<Tensor> perturb_and_decode(const ModelGraph& model, const Tensor& image,
                                       int capsule_index, int dim_index,
                                       const std::vector<float>& deltas) {
    if (!model.has_decoder())
        throw contract_error("perturb_and_decode: model has no decoder");
    const LayerSpec& cc = model.layers()[static_cast<std::size_t>(model.class_caps_layer())];
    if (capsule_index < 0 || capsule_index >= cc.num_caps)
        throw contract_error("perturb_and_decode: capsule index " + std::to_string(capsule_index) +
                             " out of range [0," + std::to_string(cc.num_caps) + ")");
    if (dim_index < 0 || dim_index >= cc.caps_dim)
        throw contract_error("perturb_and_decode: dimension index " + std::to_string(dim_index) +
                             " out of range [0," + std::to_string(cc.caps_dim) + ")");

    ForwardResult base = model.forward_sample(nullptr, image, false);
    std::vector<Tensor> images;
    images.reserve(deltas.size());
    for (float delta : deltas) {
        Tensor caps = base.caps.clone();
        caps[static_cast<std::size_t>(capsule_index) * cc.caps_dim + dim_index] += delta;
        images.push_back(model.decode_caps(nullptr, caps, capsule_index));
    }
    return images;
}

} // namespace capspike
