#pragma once

// Layer-graph model representation, forward execution, and bit-exact
// serialization (NNIR container).

#include "capspike/capsule.hpp"
#include "capspike/rng.hpp"
#include "capspike/tensor.hpp"

#include <string>
#include <vector>

namespace capspike {

enum class LayerKind {
    Conv2D,
    Dense,
    AvgPool,
    MaxPool,
    Flatten,
    ZeroPad,
    ReLU,
    Softmax,
    Dropout,
    BatchNorm,
    Add,
    PrimaryCaps,
    ClassCaps,
    DecoderDense,
};

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name); // throws version_error

struct LayerSpec {
    LayerKind kind;
    int filters = 0;     // Conv2D
    int kernel = 0;      // Conv2D, PrimaryCaps
    int stride = 1;      // Conv2D, pools, PrimaryCaps
    int padding = 0;     // Conv2D
    int units = 0;       // Dense, DecoderDense
    int window = 0;      // AvgPool, MaxPool
    int amount = 0;      // ZeroPad
    float rate = 0.0f;   // Dropout
    int source_layer_index = -1; // Add
    int channels = 0;    // PrimaryCaps
    int caps_dim = 0;    // PrimaryCaps, ClassCaps
    int num_caps = 0;    // ClassCaps
    int routing_iters = 3; // ClassCaps
    // BatchNorm fixed statistics (sized to the channel count)
    std::vector<float> gamma, beta, mean, var;
    float eps = 1e-5f;

    static LayerSpec conv2d(int filters, int kernel, int stride = 1, int padding = 0);
    static LayerSpec dense(int units);
    static LayerSpec avgpool(int window, int stride);
    static LayerSpec maxpool(int window, int stride);
    static LayerSpec flatten();
    static LayerSpec zeropad(int amount);
    static LayerSpec relu();
    static LayerSpec softmax_out();
    static LayerSpec dropout(float rate);
    static LayerSpec batchnorm(std::vector<float> gamma, std::vector<float> beta,
                               std::vector<float> mean, std::vector<float> var,
                               float eps = 1e-5f);
    static LayerSpec add_from(int source_layer_index);
    static LayerSpec primary_caps(int channels, int caps_dim, int kernel, int stride);
    static LayerSpec class_caps(int num_caps, int caps_dim, int routing_iters = 3);
    static LayerSpec decoder_dense(int units);
};

struct Param {
    std::string name;
    int layer_index = -1;
    Tensor value;
};

struct ForwardResult {
    Tensor output;   // final per-class vector: logits/probabilities or capsule lengths
    Tensor logits;   // pre-softmax version of output (== output when no softmax)
    Tensor caps;     // class capsule activations [num_caps, caps_dim] (capsule models)
    Tensor decoded;  // decoder reconstruction (capsule models with a decoder)
    RoutingResult routing;              // couplings from the ClassCaps layer
    std::vector<Tensor> layer_outputs;  // per-layer activations (main path)
};

class ModelGraph {
public:
    // Chain-checks shapes end to end and initializes parameters (He-uniform,
    // seed-controlled). Throws dim_error / contract_error on bad graphs.
    ModelGraph(std::vector<int> input_shape, std::vector<LayerSpec> layers,
               int class_count, std::uint64_t seed);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::vector<int>& input_shape() const { return input_shape_; }
    int class_count() const { return class_count_; }
    const std::vector<std::vector<int>>& layer_shapes() const { return layer_shapes_; }

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    bool has_param(const std::string& name) const;
    // Parameter indices owned by a layer (empty for parameterless layers).
    std::vector<int> layer_param_indices(int layer_index) const;

    // Single-sample forward. `image` must match input_shape. When training,
    // dropout is active (needs rng) and the decoder reconstructs the
    // `decode_label` capsule; otherwise the argmax capsule is decoded.
    ForwardResult forward_sample(Tape* tape, const Tensor& image, bool training,
                                 int decode_label = -1,
                                 RandomStream* dropout_rng = nullptr) const;

    // Batch forward: [N, ...input_shape] or a single sample -> [N, class_count].
    Tensor forward(const Tensor& batch, bool training) const;

    int first_decoder_layer() const { return first_decoder_layer_; }
    int class_caps_layer() const { return class_caps_layer_; }
    bool has_decoder() const { return first_decoder_layer_ >= 0; }

    // Mask one capsule row of `caps` and run the decoder stack on it.
    Tensor decode_caps(Tape* tape, const Tensor& caps, int capsule_index) const;

private:
    friend ModelGraph load_model(const std::string& path);
    ModelGraph() = default;
    void validate_and_register();
    void init_params(std::uint64_t seed);
    Tensor run_decoder(Tape* tape, Tensor dec) const;

    std::vector<int> input_shape_;
    std::vector<LayerSpec> layers_;
    int class_count_ = 0;
    std::vector<Param> params_;
    std::vector<std::vector<int>> layer_shapes_; // main-path output shape per layer
    std::vector<std::vector<int>> param_index_;  // per layer, indices into params_
    int class_caps_layer_ = -1;
    int first_decoder_layer_ = -1;
};

// NNIR container: magic "NNIR", u16 version, u64-length manifest text,
// u64-length little-endian f32 parameter blob, CRC32 trailer.
void save_model(const ModelGraph& model, const std::string& path);
ModelGraph load_model(const std::string& path);

// Explainability sweep: add each delta to one dimension of one output
// capsule's activation and decode. Requires a decoder.
std::vector<Tensor> perturb_and_decode(const ModelGraph& model, const Tensor& image,
                                       int capsule_index, int dim_index,
                                       const std::vector<float>& deltas);

} // namespace capspike
