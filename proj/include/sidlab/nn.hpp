#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidlab/tensor.hpp"

namespace sidlab::nn {

enum class OptimizerKind { sgd, adam };
enum class LossKind { ce_hard, ce_soft, bce };

struct TrainConfig {
    double learning_rate = 1e-3;
    double l2_alpha = 0.0;  // weight of sum ||W||^2, biases excluded
    int batch_size = 32;    // 0 = full batch
    int max_epochs = 60;
    OptimizerKind optimizer = OptimizerKind::adam;
    uint64_t seed = 0;
    double early_stop_train_acc = 0.995;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Named parameter tensors in fixed construction order.
template <class S>
struct ParamSetT {
    uint64_t init_seed = 0;
    std::vector<std::string> names;
    std::vector<TensorT<S>> tensors;
    std::vector<uint8_t> is_weight;  // participates in L2

    int add(const std::string& name, TensorT<S> t, bool weight);
    int index_of(const std::string& name) const;  // -1 when absent

    template <class T2>
    ParamSetT<T2> cast() const {
        ParamSetT<T2> out;
        out.init_seed = init_seed;
        out.names = names;
        out.is_weight = is_weight;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<T2>());
        return out;
    }

    double sum_weight_sq() const;  // sum ||W||^2 over weight tensors
};

using ParamSet = ParamSetT<float>;

// Batch-level gradient accumulator. Per-sample gradients are summed in double
// so accumulation order effects stay far below test tolerances.
class GradAccum {
public:
    template <class S>
    void init(const ParamSetT<S>& params) {
        grads_.clear();
        for (const auto& t : params.tensors)
            grads_.emplace_back(static_cast<size_t>(t.size()), 0.0);
    }
    void zero();
    std::vector<double>& operator[](size_t i) { return grads_[i]; }
    const std::vector<double>& operator[](size_t i) const { return grads_[i]; }
    size_t size() const { return grads_.size(); }

    // grads = accumulated * scale, plus 2 * l2_alpha * W on weight tensors.
    template <class S>
    std::vector<TensorT<S>> finalize(const ParamSetT<S>& params, double scale,
                                     double l2_alpha) const;

private:
    std::vector<std::vector<double>> grads_;
};

// Primitive ops --------------------------------------------------------------

// p_i = exp(z_i / T) / sum_j exp(z_j / T), max-subtracted. Throws on
// non-finite logits or T <= 0.
template <class S>
std::vector<S> softmax_t(const std::vector<S>& logits, double temperature);

// dL/dz given dL/dp for p = softmax_t(z, T).
template <class S>
std::vector<S> softmax_t_backward(const std::vector<S>& posterior,
                                  const std::vector<S>& dposterior, double temperature);

template <class S>
struct Conv1dCacheT {
    TensorT<S> cols;          // im2col input, [in_ch*kernel, t_conv]
    TensorT<S> act;           // post-ReLU pre-pool activations, [out_ch, t_conv]
    std::vector<int> pool_src;  // argmax source column per pooled output
    int in_ch = 0, t_in = 0, t_conv = 0, t_out = 0;
    bool relu = false, pool = false;
};

// Valid cross-correlation + bias, optional ReLU, optional width-2 max-pool
// (floor; a trailing odd column is dropped). weights [out_ch, in_ch*kernel].
template <class S>
TensorT<S> conv1d_block_forward(const TensorT<S>& input, const TensorT<S>& weights,
                                const TensorT<S>& bias, int kernel, int stride,
                                bool relu = true, bool pool = true,
                                Conv1dCacheT<S>* cache = nullptr);

// dweights/dbias accumulate in double; returns d(input) when need_dx.
template <class S>
std::optional<TensorT<S>> conv1d_block_backward(const TensorT<S>& dy,
                                                const Conv1dCacheT<S>& cache,
                                                const TensorT<S>& weights, int kernel,
                                                int stride, std::vector<double>& dweights,
                                                std::vector<double>& dbias, bool need_dx);

// y = W x + b, weights [out, in].
template <class S>
std::vector<S> dense_forward(const std::vector<S>& input, const TensorT<S>& weights,
                             const TensorT<S>& bias);

// Losses (fused with the output nonlinearity; dlogits returned) -------------

template <class S>
S ce_hard_loss_grad(const std::vector<S>& logits, int target, double temperature,
                    std::vector<S>& dlogits);
template <class S>
S ce_soft_loss_grad(const std::vector<S>& logits, const std::vector<S>& soft_target,
                    double temperature, std::vector<S>& dlogits);
template <class S>
S bce_loss_grad(S logit, S target01, S& dlogit);

template <class S>
S sigmoid(S x);

// Architectures --------------------------------------------------------------

struct ConvBlockSpec {
    int out_channels = 0;
    int kernel = 7;
    int stride = 2;
    bool pool = true;
};

struct SidArch {
    int in_channels = 257;  // frequency bins
    int in_frames = 298;
    std::vector<ConvBlockSpec> blocks;
    int hidden = 256;
    int n_classes = 0;

    nlohmann::json to_json() const;
    static SidArch from_json(const nlohmann::json& j);
    // All shapes except the final layer, for cross-model structural checks.
    std::vector<std::vector<int>> backbone_shapes() const;
    int64_t param_count() const;
};

SidArch default_sid_arch(int n_classes);
SidArch tiny_sid_arch(int n_classes);  // gradient-check scale, <= 5k params

struct MlpArch {
    int in_dim = 3;
    std::vector<int> hidden = {64, 64};  // output dim is 1

    nlohmann::json to_json() const;
    static MlpArch from_json(const nlohmann::json& j);
    int64_t param_count() const;
};

MlpArch attack_arch();
MlpArch detector_arch(int bins);

// Networks -------------------------------------------------------------------

template <class S>
class SidNetT {
public:
    SidNetT(SidArch arch, ParamSetT<S> params);

    static ParamSetT<S> init_params(const SidArch& arch, uint64_t seed);

    const SidArch& arch() const { return arch_; }
    ParamSetT<S>& params() { return params_; }
    const ParamSetT<S>& params() const { return params_; }

    // x: [in_channels, frames]. training=true retains caches for backward().
    std::vector<S> forward(const TensorT<S>& x, bool training);
    // Accumulates parameter gradients for the sample last forwarded with
    // training=true.
    void backward(const std::vector<S>& dlogits, GradAccum& acc);

private:
    SidArch arch_;
    ParamSetT<S> params_;
    std::vector<Conv1dCacheT<S>> block_caches_;
    std::vector<S> gap_in_mean_;  // cached GAP output
    int gap_t_ = 0;
    std::vector<S> fc1_in_, fc1_act_;
};

template <class S>
class MlpNetT {
public:
    MlpNetT(MlpArch arch, ParamSetT<S> params);

    static ParamSetT<S> init_params(const MlpArch& arch, uint64_t seed);

    const MlpArch& arch() const { return arch_; }
    ParamSetT<S>& params() { return params_; }
    const ParamSetT<S>& params() const { return params_; }

    // Returns the pre-sigmoid logit.
    S forward(const std::vector<S>& x, bool training);
    // d(input) returned when need_dx (used by the min-max defense).
    std::vector<S> backward(S dlogit, GradAccum& acc, bool need_dx = false);

private:
    MlpArch arch_;
    ParamSetT<S> params_;
    std::vector<std::vector<S>> acts_;  // layer inputs (post-ReLU)
};

using SidNet = SidNetT<float>;
using MlpNet = MlpNetT<float>;

// Batched loss + gradients ----------------------------------------------------

template <class S>
struct SidBatch {
    std::vector<const TensorT<S>*> inputs;
    std::vector<int> labels;  // ce_hard
    const std::vector<std::vector<S>>* soft_targets = nullptr;  // ce_soft
};

// Mean loss over the batch plus l2_alpha * sum ||W||^2; grads_out matches
// params order. Checks loss kind versus targets supplied.
template <class S>
double loss_and_grads(SidNetT<S>& net, const SidBatch<S>& batch, LossKind kind,
                      double temperature, double l2_alpha,
                      std::vector<TensorT<S>>& grads_out);
template <class S>
double batch_loss(SidNetT<S>& net, const SidBatch<S>& batch, LossKind kind,
                  double temperature, double l2_alpha);

template <class S>
struct MlpBatch {
    std::vector<const std::vector<S>*> inputs;
    std::vector<S> targets;  // in [0,1]
};

template <class S>
double mlp_loss_and_grads(MlpNetT<S>& net, const MlpBatch<S>& batch, double l2_alpha,
                          std::vector<TensorT<S>>& grads_out);
template <class S>
double mlp_batch_loss(MlpNetT<S>& net, const MlpBatch<S>& batch, double l2_alpha);

// Optimizer -------------------------------------------------------------------

template <class S>
struct OptStateT {
    std::vector<TensorT<S>> m, v;  // adam moments
    int64_t step_count = 0;

    void init(const ParamSetT<S>& params);
};

using OptState = OptStateT<float>;

// SGD: p -= lr * g. Adam: beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected.
template <class S>
void optimizer_step(ParamSetT<S>& params, const std::vector<TensorT<S>>& grads,
                    OptStateT<S>& state, const TrainConfig& config);

// Gradient verification --------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    std::string worst_param;
};

// Backprop versus central differences (eps=1e-3) on double shadow copies over
// every parameter. corrupt_param >= 0 perturbs that analytic gradient entry
// (negative-control fixture).
GradCheckReport gradient_check(const SidArch& arch, uint64_t seed, int corrupt_param = -1);
GradCheckReport gradient_check(const MlpArch& arch, uint64_t seed, int corrupt_param = -1);

}  // namespace sidlab::nn
