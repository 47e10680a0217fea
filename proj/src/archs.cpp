#include "capspike/archs.hpp"

#include "capspike/errors.hpp"

namespace capspike {

ModelGraph build_capsnet(std::uint64_t seed) {
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::conv2d(256, 9));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dropout(0.25f));
    layers.push_back(LayerSpec::primary_caps(32, 8, 9, 2));
    layers.push_back(LayerSpec::dropout(0.25f));
    layers.push_back(LayerSpec::class_caps(3, 16, 3));
    layers.push_back(LayerSpec::decoder_dense(512));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::decoder_dense(1024));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::decoder_dense(28 * 28));
    return ModelGraph({1, 28, 28}, layers, 3, seed);
}

ModelGraph build_capsnet_small(std::uint64_t seed) {
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::conv2d(32, 9));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dropout(0.25f));
    layers.push_back(LayerSpec::primary_caps(8, 8, 9, 2));
    layers.push_back(LayerSpec::dropout(0.25f));
    layers.push_back(LayerSpec::class_caps(3, 16, 3));
    layers.push_back(LayerSpec::decoder_dense(512));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::decoder_dense(1024));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::decoder_dense(28 * 28));
    return ModelGraph({1, 28, 28}, layers, 3, seed);
}

ModelGraph build_cnn(std::uint64_t seed) {
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::conv2d(4, 5, 2));   // 28 -> 12
    layers.push_back(LayerSpec::batchnorm({}, {}, {}, {}));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::avgpool(2, 2));     // 12 -> 6
    layers.push_back(LayerSpec::zeropad(1));        // 6 -> 8
    layers.push_back(LayerSpec::conv2d(8, 3));      // 8 -> 6
    layers.push_back(LayerSpec::batchnorm({}, {}, {}, {}));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::flatten());         // 8*6*6 = 288
    layers.push_back(LayerSpec::dense(32));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(3));
    layers.push_back(LayerSpec::softmax_out());
    return ModelGraph({1, 28, 28}, layers, 3, seed);
}

ModelGraph build_dense(int input_dim, int hidden, int classes, std::uint64_t seed) {
    if (input_dim < 1 || hidden < 1 || classes < 2) {
        throw contract_error("build_dense: input_dim and hidden must be >= 1 and classes >= 2");
    }
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(hidden));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::dense(classes));
    layers.push_back(LayerSpec::softmax_out());
    return ModelGraph({1, 1, input_dim}, layers, classes, seed);
}

ModelGraph build_resnet(int blocks, std::uint64_t seed) {
    if (blocks < 1 || blocks > 10) {
        throw contract_error("build_resnet: blocks must be in [1, 10]");
    }
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::conv2d(8, 3, 1, 1)); // 28 -> 28
    layers.push_back(LayerSpec::batchnorm({}, {}, {}, {}));
    layers.push_back(LayerSpec::relu());
    for (int b = 0; b < blocks; ++b) {
        int entry = static_cast<int>(layers.size()) - 1; // the ReLU feeding this block
        layers.push_back(LayerSpec::conv2d(8, 3, 1, 1));
        layers.push_back(LayerSpec::batchnorm({}, {}, {}, {}));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::conv2d(8, 3, 1, 1));
        layers.push_back(LayerSpec::batchnorm({}, {}, {}, {}));
        layers.push_back(LayerSpec::add_from(entry));
        layers.push_back(LayerSpec::relu());
    }
    layers.push_back(LayerSpec::avgpool(4, 4));      // 28 -> 7
    layers.push_back(LayerSpec::flatten());          // 8*7*7 = 392
    layers.push_back(LayerSpec::dense(3));
    layers.push_back(LayerSpec::softmax_out());
    return ModelGraph({1, 28, 28}, layers, 3, seed);
}

ModelGraph build_by_name(const std::string& name, std::uint64_t seed) {
    if (name == "capsnet") return build_capsnet(seed);
    if (name == "capsnet-small") return build_capsnet_small(seed);
    if (name == "cnn") return build_cnn(seed);
    if (name == "dense") return build_dense(28 * 28, 64, 3, seed);
    if (name == "resnet") return build_resnet(2, seed);
    throw contract_error("unknown architecture '" + name +
                         "' (expected capsnet, capsnet-small, cnn, dense, or resnet)");
}

} // namespace capspike
