#ifndef ADDLAB_NETWORK_HPP
#define ADDLAB_NETWORK_HPP

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace addlab {

/// Flat float tensor, rank <= 4, row-major, batch x channels x height x
/// width layout for activations.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);

    std::size_t numel() const { return data.size(); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Conv2dSpec {
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 3;  // odd
    int stride = 1;
    int pad = 0;     // zero-padding
};

struct DenseSpec {
    int in_dim = 0;
    int out_dim = 0;
};

struct LayerSpec {
    enum class Kind { Conv2d, ReLU, MaxPool2, Flatten, Dense };

    Kind kind = Kind::ReLU;
    Conv2dSpec conv{};
    DenseSpec dense{};

    static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride,
                            int pad);
    static LayerSpec relu();
    static LayerSpec maxpool2();
    static LayerSpec flatten();
    static LayerSpec make_dense(int in_dim, int out_dim);

    bool learnable() const {
        return kind == Kind::Conv2d || kind == Kind::Dense;
    }
};

/// Layer stack plus the input geometry it expects.
struct NetworkSpec {
    int in_ch = 1;
    int in_h = 0;
    int in_w = 0;
    std::vector<LayerSpec> layers;
};

/// Activation shape between layers: {c, h, w} spatial or {d} flat.
struct ActShape {
    std::vector<int> dims;

    int numel() const {
        int n = 1;
        for (int d : dims) n *= d;
        return n;
    }
};

/// Checks shape compatibility of consecutive layers (rejecting non-integral
/// convolution output sizes) and returns the activation shape after each
/// layer; element 0 is the input shape. Throws ConfigError naming the first
/// offending layer.
std::vector<ActShape> validate_spec(const NetworkSpec& spec);

/// out_dim of the final Dense layer.
int output_classes(const NetworkSpec& spec);

/// Weight and bias of one learnable layer; Gradients mirror Parameters
/// shape-for-shape.
struct ParamTensors {
    Tensor weight;
    Tensor bias;

    friend bool operator==(const ParamTensors&, const ParamTensors&) =
        default;
};

struct Parameters {
    std::vector<ParamTensors> layers;  // one entry per learnable layer

    friend bool operator==(const Parameters&, const Parameters&) = default;
};

using Gradients = Parameters;

/// He-normal weights (std = sqrt(2 / fan_in)) from a seeded SplitMix64 +
/// Box-Muller stream; biases zero. Equal seeds give bit-identical values.
Parameters init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Per-layer activations retained by forward for the matching backward.
struct ForwardCache {
    int batch = 0;
    std::vector<std::vector<float>> acts;        // acts[l] feeds layer l
    std::vector<std::vector<int>> pool_argmax;   // per maxpool layer
    std::vector<std::vector<float>> conv_padded; // zero-padded conv inputs
};

/// Runs the stack on a [B, C, H, W] batch (pixels already normalized to
/// [0,1]); returns [B, classes] logits. Pass a cache to enable backward.
Tensor forward(const NetworkSpec& spec, const Parameters& params,
               const Tensor& batch, ForwardCache* cache = nullptr);

struct LossResult {
    double loss = 0.0;  // mean -log softmax[label], max-subtraction stabilized
    Tensor dlogits;     // (softmax - onehot) / batch
};

LossResult loss_softmax_xent(const Tensor& logits,
                             const std::vector<int>& labels);

/// Exact analytic gradients for every parameter tensor. The cache must come
/// from the matching forward call. Gradient accumulation over the batch is
/// reduced in image order, so results do not depend on the worker count.
Gradients backward(const NetworkSpec& spec, const Parameters& params,
                   const ForwardCache& cache, const Tensor& dlogits);

/// Stabilized softmax of one logits row.
std::vector<float> softmax_row(std::span<const float> logits);

/// Top-k (class, probability) pairs, descending; ties break toward the
/// lower class index. Throws when k exceeds the class count.
std::vector<std::pair<int, float>> predict_topk(
    std::span<const float> logits_row, int k);

enum class Precision { f32, f64 };

/// Compares backward() against central finite differences for every
/// parameter of the spec and returns max |a-n| / max(|a|, |n|, 1e-8).
/// The probe batch is regenerated (seeded) until every ReLU input and
/// pooling margin clears a kink guard, so the comparison stays smooth.
double grad_check(const NetworkSpec& spec, std::uint64_t seed, double eps,
                  Precision mode);

/// The default stack: three 3x3 conv+pool stages (16/32/64 channels) and a
/// 128-wide dense head. input_hw must be a positive multiple of 8.
NetworkSpec small_cnn(int input_hw, int classes);

/// Minimal stack for gradient checking: conv 1->2 k3 (same padding), ReLU,
/// pool, dense.
NetworkSpec toy_spec(int input_hw = 8, int classes = 3);

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text);

}  // namespace addlab

#endif
