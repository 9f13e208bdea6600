#include "sidlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "sidlab/rng.hpp"

namespace sidlab::nn {

using nlohmann::json;

// TrainConfig -----------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (l2_alpha < 0.0) throw std::invalid_argument("l2_alpha must be >= 0");
    if (batch_size < 0) throw std::invalid_argument("batch_size must be >= 0");
    if (max_epochs <= 0) throw std::invalid_argument("max_epochs must be > 0");
}

json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"l2_alpha", l2_alpha},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"optimizer", optimizer == OptimizerKind::adam ? "adam" : "sgd"},
            {"seed", seed},
            {"early_stop_train_acc", early_stop_train_acc}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.l2_alpha = j.at("l2_alpha").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.optimizer = j.at("optimizer").get<std::string>() == "sgd" ? OptimizerKind::sgd
                                                                : OptimizerKind::adam;
    c.seed = j.at("seed").get<uint64_t>();
    c.early_stop_train_acc = j.at("early_stop_train_acc").get<double>();
    return c;
}

// ParamSet ---------------------------------------------------------------------

template <class S>
int ParamSetT<S>::add(const std::string& name, TensorT<S> t, bool weight) {
    if (index_of(name) >= 0) throw std::invalid_argument("duplicate parameter name: " + name);
    names.push_back(name);
    tensors.push_back(std::move(t));
    is_weight.push_back(weight ? 1 : 0);
    return static_cast<int>(tensors.size()) - 1;
}

template <class S>
int ParamSetT<S>::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

template <class S>
double ParamSetT<S>::sum_weight_sq() const {
    double total = 0.0;
    for (size_t i = 0; i < tensors.size(); ++i) {
        if (!is_weight[i]) continue;
        for (S v : tensors[i].data) total += static_cast<double>(v) * v;
    }
    return total;
}

// GradAccum ---------------------------------------------------------------------

void GradAccum::zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

template <class S>
std::vector<TensorT<S>> GradAccum::finalize(const ParamSetT<S>& params, double scale,
                                            double l2_alpha) const {
    if (grads_.size() != params.tensors.size())
        throw std::invalid_argument("grad accumulator does not match params");
    std::vector<TensorT<S>> out;
    out.reserve(grads_.size());
    for (size_t i = 0; i < grads_.size(); ++i) {
        TensorT<S> g(params.tensors[i].shape);
        const auto& acc = grads_[i];
        const S* w = params.tensors[i].ptr();
        const bool add_l2 = l2_alpha > 0.0 && params.is_weight[i];
        for (size_t j = 0; j < acc.size(); ++j) {
            double v = acc[j] * scale;
            if (add_l2) v += 2.0 * l2_alpha * static_cast<double>(w[j]);
            g.data[j] = static_cast<S>(v);
        }
        out.push_back(std::move(g));
    }
    return out;
}

// GEMM kernels -------------------------------------------------------------------

namespace {

// C[M,N] += A[M,K] * B[K,N]. Four C rows per pass so each streamed B row is
// reused four times.
template <class S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C) {
    int m = 0;
    for (; m + 4 <= M; m += 4) {
        const S* a0 = A + static_cast<size_t>(m) * K;
        const S* a1 = a0 + K;
        const S* a2 = a1 + K;
        const S* a3 = a2 + K;
        S* c0 = C + static_cast<size_t>(m) * N;
        S* c1 = c0 + N;
        S* c2 = c1 + N;
        S* c3 = c2 + N;
        for (int k = 0; k < K; ++k) {
            const S* b_row = B + static_cast<size_t>(k) * N;
            const S v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            for (int n = 0; n < N; ++n) {
                const S b = b_row[n];
                c0[n] += v0 * b;
                c1[n] += v1 * b;
                c2[n] += v2 * b;
                c3[n] += v3 * b;
            }
        }
    }
    for (; m < M; ++m) {
        const S* a_row = A + static_cast<size_t>(m) * K;
        S* c_row = C + static_cast<size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const S a = a_row[k];
            const S* b_row = B + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) c_row[n] += a * b_row[n];
        }
    }
}


// C[M,N] += A[K,M]^T * B[K,N]
template <class S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C) {
    for (int k = 0; k < K; ++k) {
        const S* a_row = A + static_cast<size_t>(k) * M;
        const S* b_row = B + static_cast<size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const S a = a_row[m];
            if (a == S(0)) continue;
            S* c_row = C + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) c_row[n] += a * b_row[n];
        }
    }
}

template <class S>
bool all_finite(const std::vector<S>& v) {
    for (S x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace

// softmax -------------------------------------------------------------------------

template <class S>
std::vector<S> softmax_t(const std::vector<S>& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    if (logits.empty()) throw std::invalid_argument("empty logits");
    if (!all_finite(logits)) throw std::invalid_argument("non-finite logits");
    double max_u = -1e300;
    for (S z : logits) max_u = std::max(max_u, static_cast<double>(z) / temperature);
    std::vector<S> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(static_cast<double>(logits[i]) / temperature - max_u);
        p[i] = static_cast<S>(e);
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (auto& v : p) v = static_cast<S>(static_cast<double>(v) * inv);
    return p;
}

template <class S>
std::vector<S> softmax_t_backward(const std::vector<S>& posterior,
                                  const std::vector<S>& dposterior, double temperature) {
    double dot = 0.0;
    for (size_t i = 0; i < posterior.size(); ++i)
        dot += static_cast<double>(dposterior[i]) * posterior[i];
    std::vector<S> dz(posterior.size());
    for (size_t i = 0; i < posterior.size(); ++i)
        dz[i] = static_cast<S>(static_cast<double>(posterior[i]) *
                               (static_cast<double>(dposterior[i]) - dot) / temperature);
    return dz;
}

// conv block ------------------------------------------------------------------------

template <class S>
TensorT<S> conv1d_block_forward(const TensorT<S>& input, const TensorT<S>& weights,
                                const TensorT<S>& bias, int kernel, int stride,
                                bool relu, bool pool, Conv1dCacheT<S>* cache) {
    if (input.shape.size() != 2) throw std::invalid_argument("conv input must be [channels, time]");
    const int in_ch = input.shape[0];
    const int t_in = input.shape[1];
    if (kernel <= 0 || stride <= 0) throw std::invalid_argument("bad kernel/stride");
    if (t_in < kernel) throw std::invalid_argument("kernel does not fit input length");
    const int out_ch = weights.shape[0];
    if (weights.shape.size() != 2 || weights.shape[1] != in_ch * kernel)
        throw std::invalid_argument("conv weight shape mismatch");
    if (bias.size() != out_ch) throw std::invalid_argument("conv bias shape mismatch");

    const int t_conv = (t_in - kernel) / stride + 1;
    const int t_out = pool ? t_conv / 2 : t_conv;
    if (t_out < 1) throw std::invalid_argument("conv output collapsed to zero length");

    Conv1dCacheT<S> local;
    Conv1dCacheT<S>& c = cache ? *cache : local;
    c.in_ch = in_ch;
    c.t_in = t_in;
    c.t_conv = t_conv;
    c.t_out = t_out;
    c.relu = relu;
    c.pool = pool;

    // Buffers are fully overwritten; reuse them across calls.
    const std::vector<int> cols_shape = {in_ch * kernel, t_conv};
    if (c.cols.shape != cols_shape) c.cols = TensorT<S>(cols_shape);
    for (int ic = 0; ic < in_ch; ++ic) {
        const S* x_row = input.ptr() + static_cast<size_t>(ic) * t_in;
        for (int k = 0; k < kernel; ++k) {
            S* col_row = c.cols.ptr() + static_cast<size_t>(ic * kernel + k) * t_conv;
            for (int t = 0; t < t_conv; ++t) col_row[t] = x_row[t * stride + k];
        }
    }

    const std::vector<int> act_shape = {out_ch, t_conv};
    if (c.act.shape != act_shape) c.act = TensorT<S>(act_shape);
    for (int oc = 0; oc < out_ch; ++oc) {
        S* row = c.act.ptr() + static_cast<size_t>(oc) * t_conv;
        const S b = bias.data[oc];
        for (int t = 0; t < t_conv; ++t) row[t] = b;
    }
    gemm_nn(out_ch, t_conv, in_ch * kernel, weights.ptr(), c.cols.ptr(), c.act.ptr());

    if (relu) {
        for (auto& v : c.act.data)
            if (v < S(0)) v = S(0);
    }

    TensorT<S> out({out_ch, t_out});
    if (pool) {
        c.pool_src.assign(static_cast<size_t>(out_ch) * t_out, 0);
        for (int oc = 0; oc < out_ch; ++oc) {
            const S* a = c.act.ptr() + static_cast<size_t>(oc) * t_conv;
            S* y = out.ptr() + static_cast<size_t>(oc) * t_out;
            for (int t = 0; t < t_out; ++t) {
                const int i0 = 2 * t, i1 = 2 * t + 1;
                const bool second = a[i1] > a[i0];
                y[t] = second ? a[i1] : a[i0];
                c.pool_src[static_cast<size_t>(oc) * t_out + t] = second ? i1 : i0;
            }
        }
    } else {
        out.data = c.act.data;
    }
    return out;
}

template <class S>
std::optional<TensorT<S>> conv1d_block_backward(const TensorT<S>& dy,
                                                const Conv1dCacheT<S>& cache,
                                                const TensorT<S>& weights, int kernel,
                                                int stride, std::vector<double>& dweights,
                                                std::vector<double>& dbias, bool need_dx) {
    const int out_ch = weights.shape[0];
    const int in_k = weights.shape[1];
    const int t_conv = cache.t_conv;
    if (dy.shape[0] != out_ch || dy.shape[1] != cache.t_out)
        throw std::invalid_argument("conv backward shape mismatch");

    // Route pool gradient, apply ReLU mask.
    TensorT<S> dz({out_ch, t_conv});
    if (cache.pool) {
        for (int oc = 0; oc < out_ch; ++oc) {
            const S* dy_row = dy.ptr() + static_cast<size_t>(oc) * cache.t_out;
            S* dz_row = dz.ptr() + static_cast<size_t>(oc) * t_conv;
            for (int t = 0; t < cache.t_out; ++t)
                dz_row[cache.pool_src[static_cast<size_t>(oc) * cache.t_out + t]] = dy_row[t];
        }
    } else {
        dz.data = dy.data;
    }
    if (cache.relu) {
        const S* act = cache.act.ptr();
        for (size_t i = 0; i < dz.data.size(); ++i)
            if (act[i] <= S(0)) dz.data[i] = S(0);
    }

    // dW^T = cols * dz^T as a plain gemm_nn so the inner loops vectorize
    // without reassociating any reduction; per-sample values in working
    // precision, batch accumulation in double.
    TensorT<S> dz_t({t_conv, out_ch});
    for (int oc = 0; oc < out_ch; ++oc) {
        const S* dz_row = dz.ptr() + static_cast<size_t>(oc) * t_conv;
        for (int t = 0; t < t_conv; ++t) dz_t.data[static_cast<size_t>(t) * out_ch + oc] = dz_row[t];
    }
    TensorT<S> dw_t({in_k, out_ch});
    gemm_nn(in_k, out_ch, t_conv, cache.cols.ptr(), dz_t.ptr(), dw_t.ptr());
    for (int j = 0; j < in_k; ++j)
        for (int oc = 0; oc < out_ch; ++oc)
            dweights[static_cast<size_t>(oc) * in_k + j] +=
                static_cast<double>(dw_t.data[static_cast<size_t>(j) * out_ch + oc]);
    for (int oc = 0; oc < out_ch; ++oc) {
        const S* dz_row = dz.ptr() + static_cast<size_t>(oc) * t_conv;
        double db = 0.0;
        for (int t = 0; t < t_conv; ++t) db += static_cast<double>(dz_row[t]);
        dbias[oc] += db;
    }

    if (!need_dx) return std::nullopt;

    TensorT<S> dcols({in_k, t_conv});
    gemm_tn(in_k, t_conv, out_ch, weights.ptr(), dz.ptr(), dcols.ptr());

    TensorT<S> dx({cache.in_ch, cache.t_in});
    for (int ic = 0; ic < cache.in_ch; ++ic) {
        S* dx_row = dx.ptr() + static_cast<size_t>(ic) * cache.t_in;
        for (int k = 0; k < kernel; ++k) {
            const S* dcol_row = dcols.ptr() + static_cast<size_t>(ic * kernel + k) * t_conv;
            for (int t = 0; t < t_conv; ++t) dx_row[t * stride + k] += dcol_row[t];
        }
    }
    return dx;
}

// dense ---------------------------------------------------------------------------

template <class S>
std::vector<S> dense_forward(const std::vector<S>& input, const TensorT<S>& weights,
                             const TensorT<S>& bias) {
    if (weights.shape.size() != 2 || weights.shape[1] != static_cast<int>(input.size()))
        throw std::invalid_argument("dense weight columns must match input length");
    const int out = weights.shape[0];
    if (bias.size() != out) throw std::invalid_argument("dense bias shape mismatch");
    std::vector<S> y(out);
    for (int o = 0; o < out; ++o) {
        const S* w = weights.ptr() + static_cast<size_t>(o) * input.size();
        S acc = bias.data[o];
        for (size_t i = 0; i < input.size(); ++i) acc += w[i] * input[i];
        y[o] = acc;
    }
    return y;
}

// losses ----------------------------------------------------------------------------

template <class S>
S ce_hard_loss_grad(const std::vector<S>& logits, int target, double temperature,
                    std::vector<S>& dlogits) {
    if (target < 0 || target >= static_cast<int>(logits.size()))
        throw std::invalid_argument("target class out of range");
    const std::vector<S> p = softmax_t(logits, temperature);
    dlogits.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        const double y = (static_cast<int>(i) == target) ? 1.0 : 0.0;
        dlogits[i] = static_cast<S>((static_cast<double>(p[i]) - y) / temperature);
    }
    // loss via stable logsumexp
    double max_u = -1e300;
    for (S z : logits) max_u = std::max(max_u, static_cast<double>(z) / temperature);
    double sum = 0.0;
    for (S z : logits) sum += std::exp(static_cast<double>(z) / temperature - max_u);
    const double lse = max_u + std::log(sum);
    return static_cast<S>(lse - static_cast<double>(logits[target]) / temperature);
}

template <class S>
S ce_soft_loss_grad(const std::vector<S>& logits, const std::vector<S>& soft_target,
                    double temperature, std::vector<S>& dlogits) {
    if (soft_target.size() != logits.size())
        throw std::invalid_argument("soft target length mismatch");
    const std::vector<S> p = softmax_t(logits, temperature);
    dlogits.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
        dlogits[i] = static_cast<S>(
            (static_cast<double>(p[i]) - static_cast<double>(soft_target[i])) / temperature);
    double max_u = -1e300;
    for (S z : logits) max_u = std::max(max_u, static_cast<double>(z) / temperature);
    double sum = 0.0;
    for (S z : logits) sum += std::exp(static_cast<double>(z) / temperature - max_u);
    const double lse = max_u + std::log(sum);
    double loss = 0.0;
    for (size_t i = 0; i < logits.size(); ++i)
        loss += static_cast<double>(soft_target[i]) *
                (lse - static_cast<double>(logits[i]) / temperature);
    return static_cast<S>(loss);
}

template <class S>
S sigmoid(S x) {
    const double v = static_cast<double>(x);
    if (v >= 0.0) {
        const double e = std::exp(-v);
        return static_cast<S>(1.0 / (1.0 + e));
    }
    const double e = std::exp(v);
    return static_cast<S>(e / (1.0 + e));
}

template <class S>
S bce_loss_grad(S logit, S target01, S& dlogit) {
    const double u = static_cast<double>(logit);
    const double y = static_cast<double>(target01);
    const double softplus_pos = std::max(u, 0.0) + std::log1p(std::exp(-std::fabs(u)));
    const double softplus_neg = std::max(-u, 0.0) + std::log1p(std::exp(-std::fabs(u)));
    const double loss = y * softplus_neg + (1.0 - y) * softplus_pos;
    dlogit = static_cast<S>(static_cast<double>(sigmoid(logit)) - y);
    return static_cast<S>(loss);
}

// architectures -----------------------------------------------------------------------

json SidArch::to_json() const {
    json blocks_j = json::array();
    for (const auto& b : blocks)
        blocks_j.push_back({{"out_channels", b.out_channels},
                            {"kernel", b.kernel},
                            {"stride", b.stride},
                            {"pool", b.pool}});
    return {{"type", "sid_conv1d"}, {"in_channels", in_channels}, {"in_frames", in_frames},
            {"blocks", blocks_j},   {"hidden", hidden},           {"n_classes", n_classes}};
}

SidArch SidArch::from_json(const json& j) {
    SidArch a;
    a.in_channels = j.at("in_channels").get<int>();
    a.in_frames = j.at("in_frames").get<int>();
    for (const auto& bj : j.at("blocks")) {
        ConvBlockSpec b;
        b.out_channels = bj.at("out_channels").get<int>();
        b.kernel = bj.at("kernel").get<int>();
        b.stride = bj.at("stride").get<int>();
        b.pool = bj.at("pool").get<bool>();
        a.blocks.push_back(b);
    }
    a.hidden = j.at("hidden").get<int>();
    a.n_classes = j.at("n_classes").get<int>();
    return a;
}

std::vector<std::vector<int>> SidArch::backbone_shapes() const {
    std::vector<std::vector<int>> shapes;
    int ch = in_channels;
    for (const auto& b : blocks) {
        shapes.push_back({b.out_channels, ch * b.kernel});
        shapes.push_back({b.out_channels});
        ch = b.out_channels;
    }
    shapes.push_back({hidden, ch});
    shapes.push_back({hidden});
    return shapes;  // final layer deliberately excluded
}

int64_t SidArch::param_count() const {
    int64_t n = 0;
    int ch = in_channels;
    for (const auto& b : blocks) {
        n += static_cast<int64_t>(b.out_channels) * ch * b.kernel + b.out_channels;
        ch = b.out_channels;
    }
    n += static_cast<int64_t>(hidden) * ch + hidden;
    n += static_cast<int64_t>(n_classes) * hidden + n_classes;
    return n;
}

SidArch default_sid_arch(int n_classes) {
    SidArch a;
    a.in_channels = 257;  // one-sided bins of the 512-point STFT
    a.in_frames = 298;
    a.blocks = {{16, 7, 2, true}, {32, 7, 2, true}, {64, 7, 2, true}};
    a.hidden = 128;
    a.n_classes = n_classes;
    return a;
}

SidArch tiny_sid_arch(int n_classes) {
    SidArch a;
    a.in_channels = 12;
    a.in_frames = 80;
    a.blocks = {{6, 7, 2, true}, {8, 7, 2, true}, {10, 3, 1, false}};
    a.hidden = 16;
    a.n_classes = n_classes;
    return a;
}

json MlpArch::to_json() const {
    return {{"type", "mlp_sigmoid"}, {"in_dim", in_dim}, {"hidden", hidden}};
}

MlpArch MlpArch::from_json(const json& j) {
    MlpArch a;
    a.in_dim = j.at("in_dim").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    return a;
}

int64_t MlpArch::param_count() const {
    int64_t n = 0;
    int prev = in_dim;
    for (int h : hidden) {
        n += static_cast<int64_t>(h) * prev + h;
        prev = h;
    }
    return n + prev + 1;
}

MlpArch attack_arch() { return MlpArch{3, {64, 64}}; }

MlpArch detector_arch(int bins) { return MlpArch{bins, {64, 64}}; }

// parameter init -------------------------------------------------------------------

namespace {

template <class S>
TensorT<S> glorot_uniform(std::vector<int> shape, Rng& rng) {
    TensorT<S> t(std::move(shape));
    const double rows = t.shape[0];
    const double cols = t.shape.size() > 1 ? t.shape[1] : 1;
    const double limit = std::sqrt(6.0 / (rows + cols));
    for (auto& v : t.data) v = static_cast<S>(rng.next_uniform(-limit, limit));
    return t;
}

}  // namespace

// SidNet -----------------------------------------------------------------------------

template <class S>
SidNetT<S>::SidNetT(SidArch arch, ParamSetT<S> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
    block_caches_.resize(arch_.blocks.size());
    if (params_.tensors.size() != arch_.blocks.size() * 2 + 4)
        throw std::invalid_argument("param set does not match architecture");
}

template <class S>
ParamSetT<S> SidNetT<S>::init_params(const SidArch& arch, uint64_t seed) {
    ParamSetT<S> p;
    p.init_seed = seed;
    Rng rng(seed);
    int ch = arch.in_channels;
    for (size_t b = 0; b < arch.blocks.size(); ++b) {
        const auto& blk = arch.blocks[b];
        const std::string base = "conv" + std::to_string(b);
        p.add(base + ".weight", glorot_uniform<S>({blk.out_channels, ch * blk.kernel}, rng),
              true);
        p.add(base + ".bias", TensorT<S>({blk.out_channels}), false);
        ch = blk.out_channels;
    }
    p.add("fc1.weight", glorot_uniform<S>({arch.hidden, ch}, rng), true);
    p.add("fc1.bias", TensorT<S>({arch.hidden}), false);
    p.add("fc2.weight", glorot_uniform<S>({arch.n_classes, arch.hidden}, rng), true);
    p.add("fc2.bias", TensorT<S>({arch.n_classes}), false);
    return p;
}

template <class S>
std::vector<S> SidNetT<S>::forward(const TensorT<S>& x, bool training) {
    (void)training;  // caches are always refreshed; backward reads the latest
    TensorT<S> h = x;
    for (size_t b = 0; b < arch_.blocks.size(); ++b) {
        const auto& blk = arch_.blocks[b];
        h = conv1d_block_forward(h, params_.tensors[2 * b], params_.tensors[2 * b + 1],
                                 blk.kernel, blk.stride, true, blk.pool, &block_caches_[b]);
    }
    // Global average pool over time.
    const int ch = h.shape[0];
    gap_t_ = h.shape[1];
    gap_in_mean_.assign(ch, S(0));
    for (int c = 0; c < ch; ++c) {
        const S* row = h.ptr() + static_cast<size_t>(c) * gap_t_;
        double acc = 0.0;
        for (int t = 0; t < gap_t_; ++t) acc += static_cast<double>(row[t]);
        gap_in_mean_[c] = static_cast<S>(acc / gap_t_);
    }
    const size_t fc1_w = params_.tensors.size() - 4;
    fc1_in_ = gap_in_mean_;
    fc1_act_ = dense_forward(fc1_in_, params_.tensors[fc1_w], params_.tensors[fc1_w + 1]);
    for (auto& v : fc1_act_)
        if (v < S(0)) v = S(0);
    return dense_forward(fc1_act_, params_.tensors[fc1_w + 2], params_.tensors[fc1_w + 3]);
}

template <class S>
void SidNetT<S>::backward(const std::vector<S>& dlogits, GradAccum& acc) {
    const size_t fc1_w = params_.tensors.size() - 4;
    const auto& w_fc2 = params_.tensors[fc1_w + 2];
    const int n_out = w_fc2.shape[0];
    const int n_hidden = w_fc2.shape[1];
    if (static_cast<int>(dlogits.size()) != n_out)
        throw std::invalid_argument("dlogits length mismatch");

    // fc2
    std::vector<S> da(n_hidden, S(0));
    for (int o = 0; o < n_out; ++o) {
        const double d = static_cast<double>(dlogits[o]);
        acc[fc1_w + 3][o] += d;
        const S* w_row = w_fc2.ptr() + static_cast<size_t>(o) * n_hidden;
        double* dw_row = acc[fc1_w + 2].data() + static_cast<size_t>(o) * n_hidden;
        for (int i = 0; i < n_hidden; ++i) {
            dw_row[i] += d * static_cast<double>(fc1_act_[i]);
            da[i] += static_cast<S>(d) * w_row[i];
        }
    }
    // relu on fc1
    for (int i = 0; i < n_hidden; ++i)
        if (fc1_act_[i] <= S(0)) da[i] = S(0);
    // fc1
    const auto& w_fc1 = params_.tensors[fc1_w];
    const int gap_ch = w_fc1.shape[1];
    std::vector<S> dg(gap_ch, S(0));
    for (int o = 0; o < n_hidden; ++o) {
        const double d = static_cast<double>(da[o]);
        if (d == 0.0) continue;
        acc[fc1_w + 1][o] += d;
        const S* w_row = w_fc1.ptr() + static_cast<size_t>(o) * gap_ch;
        double* dw_row = acc[fc1_w].data() + static_cast<size_t>(o) * gap_ch;
        for (int i = 0; i < gap_ch; ++i) {
            dw_row[i] += d * static_cast<double>(fc1_in_[i]);
            dg[i] += static_cast<S>(d) * w_row[i];
        }
    }
    // GAP
    TensorT<S> dh({gap_ch, gap_t_});
    const S inv_t = static_cast<S>(1.0 / gap_t_);
    for (int c = 0; c < gap_ch; ++c) {
        S* row = dh.ptr() + static_cast<size_t>(c) * gap_t_;
        const S v = dg[c] * inv_t;
        for (int t = 0; t < gap_t_; ++t) row[t] = v;
    }
    // conv blocks, last to first; the first block's input gradient is unused
    for (int b = static_cast<int>(arch_.blocks.size()) - 1; b >= 0; --b) {
        const auto& blk = arch_.blocks[b];
        auto dx = conv1d_block_backward(dh, block_caches_[b], params_.tensors[2 * b],
                                        blk.kernel, blk.stride, acc[2 * b], acc[2 * b + 1],
                                        b > 0);
        if (b > 0) dh = std::move(*dx);
    }
}

// MlpNet --------------------------------------------------------------------------------

template <class S>
MlpNetT<S>::MlpNetT(MlpArch arch, ParamSetT<S> params)
    : arch_(std::move(arch)), params_(std::move(params)) {
    if (params_.tensors.size() != (arch_.hidden.size() + 1) * 2)
        throw std::invalid_argument("param set does not match architecture");
}

template <class S>
ParamSetT<S> MlpNetT<S>::init_params(const MlpArch& arch, uint64_t seed) {
    ParamSetT<S> p;
    p.init_seed = seed;
    Rng rng(seed);
    int prev = arch.in_dim;
    for (size_t i = 0; i < arch.hidden.size(); ++i) {
        const std::string base = "fc" + std::to_string(i);
        p.add(base + ".weight", glorot_uniform<S>({arch.hidden[i], prev}, rng), true);
        p.add(base + ".bias", TensorT<S>({arch.hidden[i]}), false);
        prev = arch.hidden[i];
    }
    p.add("out.weight", glorot_uniform<S>({1, prev}, rng), true);
    p.add("out.bias", TensorT<S>({1}), false);
    return p;
}

template <class S>
S MlpNetT<S>::forward(const std::vector<S>& x, bool training) {
    (void)training;
    if (static_cast<int>(x.size()) != arch_.in_dim)
        throw std::invalid_argument("mlp input length mismatch");
    acts_.clear();
    acts_.push_back(x);
    std::vector<S> h = x;
    for (size_t i = 0; i < arch_.hidden.size(); ++i) {
        h = dense_forward(h, params_.tensors[2 * i], params_.tensors[2 * i + 1]);
        for (auto& v : h)
            if (v < S(0)) v = S(0);
        acts_.push_back(h);
    }
    const size_t out_w = params_.tensors.size() - 2;
    const auto y =
        dense_forward(h, params_.tensors[out_w], params_.tensors[out_w + 1]);
    return y[0];
}

template <class S>
std::vector<S> MlpNetT<S>::backward(S dlogit, GradAccum& acc, bool need_dx) {
    const size_t out_w = params_.tensors.size() - 2;
    const auto& w_out = params_.tensors[out_w];
    const int last = w_out.shape[1];

    std::vector<S> dh(last);
    {
        const double d = static_cast<double>(dlogit);
        acc[out_w + 1][0] += d;
        const std::vector<S>& a = acts_.back();
        double* dw = acc[out_w].data();
        const S* w = w_out.ptr();
        for (int i = 0; i < last; ++i) {
            dw[i] += d * static_cast<double>(a[i]);
            dh[i] = static_cast<S>(d) * w[i];
        }
    }
    for (int layer = static_cast<int>(arch_.hidden.size()) - 1; layer >= 0; --layer) {
        const std::vector<S>& out_act = acts_[layer + 1];
        for (size_t i = 0; i < dh.size(); ++i)
            if (out_act[i] <= S(0)) dh[i] = S(0);
        const auto& w = params_.tensors[2 * layer];
        const std::vector<S>& in_act = acts_[layer];
        const int n_out = w.shape[0], n_in = w.shape[1];
        std::vector<S> dx(n_in, S(0));
        for (int o = 0; o < n_out; ++o) {
            const double d = static_cast<double>(dh[o]);
            acc[2 * layer + 1][o] += d;
            const S* w_row = w.ptr() + static_cast<size_t>(o) * n_in;
            double* dw_row = acc[2 * layer].data() + static_cast<size_t>(o) * n_in;
            for (int i = 0; i < n_in; ++i) {
                dw_row[i] += d * static_cast<double>(in_act[i]);
                dx[i] += static_cast<S>(d) * w_row[i];
            }
        }
        if (layer == 0) return need_dx ? dx : std::vector<S>{};
        dh = std::move(dx);
    }
    // no hidden layers: gradient wrt input of the output layer
    if (need_dx) {
        std::vector<S> dx(arch_.in_dim);
        const S* w = w_out.ptr();
        for (int i = 0; i < arch_.in_dim; ++i) dx[i] = static_cast<S>(dlogit) * w[i];
        return dx;
    }
    return {};
}

// batched losses -----------------------------------------------------------------------

template <class S>
double loss_and_grads(SidNetT<S>& net, const SidBatch<S>& batch, LossKind kind,
                      double temperature, double l2_alpha,
                      std::vector<TensorT<S>>& grads_out) {
    if (batch.inputs.empty()) throw std::invalid_argument("empty batch");
    if (kind == LossKind::bce)
        throw std::invalid_argument("bce is incompatible with the softmax head");
    if (kind == LossKind::ce_soft && batch.soft_targets == nullptr)
        throw std::invalid_argument("ce_soft requires soft targets");
    if (kind == LossKind::ce_hard && batch.labels.size() != batch.inputs.size())
        throw std::invalid_argument("labels do not match batch");

    GradAccum acc;
    acc.init(net.params());
    double total = 0.0;
    std::vector<S> dlogits;
    for (size_t i = 0; i < batch.inputs.size(); ++i) {
        const auto logits = net.forward(*batch.inputs[i], true);
        S loss;
        if (kind == LossKind::ce_hard)
            loss = ce_hard_loss_grad(logits, batch.labels[i], temperature, dlogits);
        else
            loss = ce_soft_loss_grad(logits, (*batch.soft_targets)[i], temperature, dlogits);
        total += static_cast<double>(loss);
        net.backward(dlogits, acc);
    }
    const double scale = 1.0 / static_cast<double>(batch.inputs.size());
    grads_out = acc.finalize(net.params(), scale, l2_alpha);
    return total * scale + l2_alpha * net.params().sum_weight_sq();
}

template <class S>
double batch_loss(SidNetT<S>& net, const SidBatch<S>& batch, LossKind kind,
                  double temperature, double l2_alpha) {
    double total = 0.0;
    std::vector<S> dlogits;
    for (size_t i = 0; i < batch.inputs.size(); ++i) {
        const auto logits = net.forward(*batch.inputs[i], false);
        S loss;
        if (kind == LossKind::ce_hard)
            loss = ce_hard_loss_grad(logits, batch.labels[i], temperature, dlogits);
        else
            loss = ce_soft_loss_grad(logits, (*batch.soft_targets)[i], temperature, dlogits);
        total += static_cast<double>(loss);
    }
    return total / batch.inputs.size() + l2_alpha * net.params().sum_weight_sq();
}

template <class S>
double mlp_loss_and_grads(MlpNetT<S>& net, const MlpBatch<S>& batch, double l2_alpha,
                          std::vector<TensorT<S>>& grads_out) {
    if (batch.inputs.empty()) throw std::invalid_argument("empty batch");
    if (batch.targets.size() != batch.inputs.size())
        throw std::invalid_argument("targets do not match batch");
    GradAccum acc;
    acc.init(net.params());
    double total = 0.0;
    for (size_t i = 0; i < batch.inputs.size(); ++i) {
        const S logit = net.forward(*batch.inputs[i], true);
        S dlogit;
        total += static_cast<double>(bce_loss_grad(logit, batch.targets[i], dlogit));
        net.backward(dlogit, acc);
    }
    const double scale = 1.0 / static_cast<double>(batch.inputs.size());
    grads_out = acc.finalize(net.params(), scale, l2_alpha);
    return total * scale + l2_alpha * net.params().sum_weight_sq();
}

template <class S>
double mlp_batch_loss(MlpNetT<S>& net, const MlpBatch<S>& batch, double l2_alpha) {
    double total = 0.0;
    for (size_t i = 0; i < batch.inputs.size(); ++i) {
        const S logit = net.forward(*batch.inputs[i], false);
        S dlogit;
        total += static_cast<double>(bce_loss_grad(logit, batch.targets[i], dlogit));
    }
    return total / batch.inputs.size() + l2_alpha * net.params().sum_weight_sq();
}

// optimizer ------------------------------------------------------------------------------

template <class S>
void OptStateT<S>::init(const ParamSetT<S>& params) {
    m.clear();
    v.clear();
    for (const auto& t : params.tensors) {
        m.emplace_back(t.shape);
        v.emplace_back(t.shape);
    }
    step_count = 0;
}

template <class S>
void optimizer_step(ParamSetT<S>& params, const std::vector<TensorT<S>>& grads,
                    OptStateT<S>& state, const TrainConfig& config) {
    if (grads.size() != params.tensors.size())
        throw std::invalid_argument("grads do not match params");
    if (config.optimizer == OptimizerKind::adam &&
        (state.m.size() != params.tensors.size() || state.v.size() != params.tensors.size()))
        throw std::invalid_argument("optimizer state does not match params");

    const S lr = static_cast<S>(config.learning_rate);
    if (config.optimizer == OptimizerKind::sgd) {
        for (size_t i = 0; i < params.tensors.size(); ++i) {
            if (grads[i].size() != params.tensors[i].size())
                throw std::invalid_argument("grad shape mismatch");
            S* p = params.tensors[i].ptr();
            const S* g = grads[i].ptr();
            for (int64_t j = 0; j < grads[i].size(); ++j) p[j] -= lr * g[j];
        }
        return;
    }

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step_count));
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        if (grads[i].size() != params.tensors[i].size())
            throw std::invalid_argument("grad shape mismatch");
        S* p = params.tensors[i].ptr();
        const S* g = grads[i].ptr();
        S* m = state.m[i].ptr();
        S* v = state.v[i].ptr();
        for (int64_t j = 0; j < grads[i].size(); ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * gj;
            const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * gj * gj;
            m[j] = static_cast<S>(mj);
            v[j] = static_cast<S>(vj);
            p[j] -= static_cast<S>(config.learning_rate * (mj / bc1) /
                                   (std::sqrt(vj / bc2) + eps));
        }
    }
}

// gradient check -----------------------------------------------------------------------

namespace {

// Small step so the probe never straddles a ReLU kink or a pool-argmax flip;
// double precision keeps the roundoff floor far below the tolerance.
constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-4;

struct FlatIndex {
    size_t tensor;
    size_t offset;
};

FlatIndex locate(const std::vector<TensorD>& grads, int flat) {
    size_t remaining = static_cast<size_t>(flat);
    for (size_t t = 0; t < grads.size(); ++t) {
        if (remaining < grads[t].data.size()) return {t, remaining};
        remaining -= grads[t].data.size();
    }
    throw std::out_of_range("corrupt_param index out of range");
}

template <class EvalLoss>
GradCheckReport run_check(ParamSetT<double>& params, std::vector<TensorD> analytic,
                          EvalLoss eval_loss, int corrupt_param) {
    if (corrupt_param >= 0) {
        const FlatIndex fi = locate(analytic, corrupt_param);
        analytic[fi.tensor].data[fi.offset] += 0.5;
    }
    GradCheckReport report;
    for (size_t t = 0; t < params.tensors.size(); ++t) {
        auto& tensor = params.tensors[t];
        for (size_t j = 0; j < tensor.data.size(); ++j) {
            const double saved = tensor.data[j];
            tensor.data[j] = saved + kFdEps;
            const double lp = eval_loss();
            tensor.data[j] = saved - kFdEps;
            const double lm = eval_loss();
            tensor.data[j] = saved;
            const double numeric = (lp - lm) / (2.0 * kFdEps);
            const double a = analytic[t].data[j];
            const double rel =
                std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-2});
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param =
                    params.names[t] + "[" + std::to_string(j) + "]";
            }
        }
    }
    report.pass = report.max_rel_error < kFdTol;
    return report;
}

}  // namespace

GradCheckReport gradient_check(const SidArch& arch, uint64_t seed, int corrupt_param) {
    SidNetT<double> net(arch, SidNetT<double>::init_params(arch, seed));
    Rng rng(seed_combine(seed, 0xFD));
    std::vector<TensorD> inputs;
    std::vector<int> labels;
    for (int i = 0; i < 3; ++i) {
        TensorD x({arch.in_channels, arch.in_frames});
        for (auto& v : x.data) v = rng.next_sym();
        inputs.push_back(std::move(x));
        labels.push_back(static_cast<int>(rng.next_below(arch.n_classes)));
    }
    SidBatch<double> batch;
    for (const auto& x : inputs) batch.inputs.push_back(&x);
    batch.labels = labels;
    const double l2 = 1e-3;

    std::vector<TensorD> analytic;
    loss_and_grads(net, batch, LossKind::ce_hard, 1.0, l2, analytic);
    return run_check(
        net.params(), std::move(analytic),
        [&] { return batch_loss(net, batch, LossKind::ce_hard, 1.0, l2); }, corrupt_param);
}

GradCheckReport gradient_check(const MlpArch& arch, uint64_t seed, int corrupt_param) {
    MlpNetT<double> net(arch, MlpNetT<double>::init_params(arch, seed));
    Rng rng(seed_combine(seed, 0xFD));
    std::vector<std::vector<double>> inputs;
    std::vector<double> targets;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> x(arch.in_dim);
        for (auto& v : x) v = rng.next_sym();
        inputs.push_back(std::move(x));
        targets.push_back(static_cast<double>(rng.next_below(2)));
    }
    MlpBatch<double> batch;
    for (const auto& x : inputs) batch.inputs.push_back(&x);
    batch.targets = targets;
    const double l2 = 1e-3;

    std::vector<TensorD> analytic;
    mlp_loss_and_grads(net, batch, l2, analytic);
    return run_check(
        net.params(), std::move(analytic), [&] { return mlp_batch_loss(net, batch, l2); },
        corrupt_param);
}

// explicit instantiations ------------------------------------------------------------------

#define SIDLAB_NN_INSTANTIATE(S)                                                          \
    template struct ParamSetT<S>;                                                         \
    template std::vector<TensorT<S>> GradAccum::finalize(const ParamSetT<S>&, double,     \
                                                         double) const;                   \
    template void GradAccum::init(const ParamSetT<S>&);                                   \
    template std::vector<S> softmax_t(const std::vector<S>&, double);                     \
    template std::vector<S> softmax_t_backward(const std::vector<S>&,                     \
                                               const std::vector<S>&, double);            \
    template TensorT<S> conv1d_block_forward(const TensorT<S>&, const TensorT<S>&,        \
                                             const TensorT<S>&, int, int, bool, bool,     \
                                             Conv1dCacheT<S>*);                           \
    template std::optional<TensorT<S>> conv1d_block_backward(                             \
        const TensorT<S>&, const Conv1dCacheT<S>&, const TensorT<S>&, int, int,           \
        std::vector<double>&, std::vector<double>&, bool);                                \
    template std::vector<S> dense_forward(const std::vector<S>&, const TensorT<S>&,       \
                                          const TensorT<S>&);                             \
    template S ce_hard_loss_grad(const std::vector<S>&, int, double, std::vector<S>&);    \
    template S ce_soft_loss_grad(const std::vector<S>&, const std::vector<S>&, double,    \
                                 std::vector<S>&);                                        \
    template S bce_loss_grad(S, S, S&);                                                   \
    template S sigmoid(S);                                                                \
    template class SidNetT<S>;                                                            \
    template class MlpNetT<S>;                                                            \
    template double loss_and_grads(SidNetT<S>&, const SidBatch<S>&, LossKind, double,     \
                                   double, std::vector<TensorT<S>>&);                     \
    template double batch_loss(SidNetT<S>&, const SidBatch<S>&, LossKind, double,         \
                               double);                                                   \
    template double mlp_loss_and_grads(MlpNetT<S>&, const MlpBatch<S>&, double,           \
                                       std::vector<TensorT<S>>&);                         \
    template double mlp_batch_loss(MlpNetT<S>&, const MlpBatch<S>&, double);              \
    template struct OptStateT<S>;                                                         \
    template void optimizer_step(ParamSetT<S>&, const std::vector<TensorT<S>>&,           \
                                 OptStateT<S>&, const TrainConfig&);

SIDLAB_NN_INSTANTIATE(float)
SIDLAB_NN_INSTANTIATE(double)

#undef SIDLAB_NN_INSTANTIATE

}  // namespace sidlab::nn
