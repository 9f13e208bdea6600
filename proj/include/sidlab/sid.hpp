#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sidlab/checkpoint.hpp"
#include "sidlab/corpus.hpp"
#include "sidlab/features.hpp"
#include "sidlab/nn.hpp"

namespace sidlab {

// In-memory log(1+|STFT|) features for a whole corpus, channel-major
// [bins, frames] per clip, shared read-only across training runs.
class FeatureCache {
public:
    explicit FeatureCache(const Corpus& corpus, int n_threads = 1);
    // transform is applied to each clip before the STFT (e.g. key noise).
    // Must be pure; it may run from several threads.
    FeatureCache(const Corpus& corpus,
                 const std::function<AudioClip(const AudioClip&)>& transform,
                 int n_threads);

    const nn::Tensor& log_features(const ClipRef& ref) const;
    int bins() const { return bins_; }
    int frames() const { return frames_; }

private:
    int bins_ = 0, frames_ = 0, clips_per_speaker_ = 0;
    std::vector<nn::Tensor> feats_;
};

// Per-bin moments over a training split; identical arithmetic to
// compute_feature_stats on the raw spectrograms.
FeatureStats stats_from_cache(const FeatureCache& cache, const std::vector<ClipRef>& refs);

// (log1p(x) - mean_b) / std_b, channel-major, ready for the conv stack.
nn::Tensor standardized_features(const FeatureCache& cache, const ClipRef& ref,
                                 const FeatureStats& stats);

struct SidModel {
    nn::SidArch arch;
    nn::ParamSet params;
    std::vector<int> class_speakers;  // class index -> speaker_id, ascending
    double serving_temperature = 1.0;
    FeatureStats feature_stats;
    nlohmann::json defense = nlohmann::json::object();

    int n_classes() const { return static_cast<int>(class_speakers.size()); }
    int class_of(int speaker_id) const;  // throws on unknown speaker
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;  // measured on pre-update forwards during the epoch
    double eval_acc = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double final_train_acc = 0.0;  // exact post-training pass
    double final_eval_acc = 0.0;
    double wall_seconds = 0.0;
    uint64_t init_seed = 0;
    uint64_t train_seed = 0;
};

struct SidTrainOptions {
    nn::TrainConfig config;
    double loss_temperature = 1.0;  // distillation trains through softmax_t(T)
    // Soft targets aligned with the training refs; switches the loss to
    // soft-target cross-entropy.
    const std::vector<std::vector<float>>* soft_targets = nullptr;
    std::optional<uint64_t> init_seed;  // default derives from config.seed

    // Min-max defense hooks. pre_batch runs before each parameter update and
    // may query the current classifier; grad_hook may add to each sample's
    // dlogits. Both must leave the trainer's own RNG stream untouched.
    struct HookContext {
        const std::vector<int>* batch = nullptr;  // indices into train_refs
        std::function<std::vector<float>(int)> train_logits;  // by train index
        std::function<std::vector<float>(const nn::Tensor&)> forward;
    };
    std::function<void(const HookContext&)> pre_batch;
    std::function<void(int, const std::vector<float>&, std::vector<float>&)> grad_hook;

    // Divergence guard: abort when the data loss exceeds this multiple of its
    // initial value (0 disables).
    double divergence_factor = 0.0;
};

// Trains on train_refs (hard cross-entropy by default, plus l2_alpha-weighted
// sum ||W||^2), evaluates on eval_refs each epoch, early-stops once train
// accuracy reaches config.early_stop_train_acc. Feature stats come from the
// training refs only.
std::pair<SidModel, TrainReport> train_sid(const FeatureCache& cache,
                                           const std::vector<ClipRef>& train_refs,
                                           const std::vector<ClipRef>& eval_refs,
                                           const nn::SidArch& arch,
                                           const SidTrainOptions& options);

// Features -> forward -> softmax at the model's serving temperature.
std::vector<float> predict_posteriors(const SidModel& model, const AudioClip& clip);
std::vector<float> predict_posteriors_cached(const SidModel& model, const FeatureCache& cache,
                                             const ClipRef& ref);
// Posterior from an already standardized [bins, frames] tensor.
std::vector<float> predict_posteriors_features(const SidModel& model, const nn::Tensor& x);

// Reusable forward pass over one model (avoids re-copying parameters per
// query). Not thread-safe; make one per thread.
class SidPredictor {
public:
    explicit SidPredictor(const SidModel& model);
    std::vector<float> posteriors(const nn::Tensor& standardized);
    std::vector<float> posteriors(const FeatureCache& cache, const ClipRef& ref);

private:
    const SidModel& model_;
    nn::SidNetT<float> net_;
};

// Fraction of clips whose argmax class is the true speaker. Throws on an
// empty clip set or a speaker outside the model's cohort.
double evaluate_sid(const SidModel& model, const Corpus& corpus,
                    const std::vector<ClipRef>& refs);
double evaluate_sid_cached(const SidModel& model, const FeatureCache& cache,
                           const std::vector<ClipRef>& refs);

// Checkpoint I/O (nncore format plus class_map.json).
void save_sid_model(const SidModel& model, const nlohmann::json& train_config,
                    const std::filesystem::path& dir);
SidModel load_sid_model(const std::filesystem::path& dir);

}  // namespace sidlab
