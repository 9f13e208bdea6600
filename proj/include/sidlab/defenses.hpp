#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sidlab/attack.hpp"
#include "sidlab/sid.hpp"

namespace sidlab {

// Adversarial regularization ---------------------------------------------------

struct AdvRegConfig {
    double privacy_lambda = 1.0;
    int inner_attack_steps = 5;
    // Fraction of the defender's in-set size carved from its spare held-out
    // clips as the inference head's nonmember reference.
    double reference_fraction = 0.2;

    void validate() const;
};

// Min-max training: an inference head h (attack-net architecture over sorted
// top-3 posteriors) is trained to separate member posteriors from reference
// posteriors; each classifier update minimizes CE + lambda * mean log
// h(member posterior), gradients flowing through the classifier only.
// At lambda == 0 the trajectory is bit-identical to train_sid on train_refs
// under equal seeds.
std::pair<SidModel, TrainReport> train_adversarially_regularized(
    const FeatureCache& cache, const std::vector<ClipRef>& train_refs,
    const std::vector<ClipRef>& eval_refs, const std::vector<ClipRef>& reference_refs,
    const nn::SidArch& arch, const AdvRegConfig& config, const nn::TrainConfig& base);

// d(lambda * log h(top3(softmax(logits)))) / dlogits for one sample; the
// classifier-side gradient of the privacy gain.
std::vector<float> advreg_gain_dlogits(nn::MlpNetT<float>& inference_head,
                                       const std::vector<float>& logits,
                                       double privacy_lambda);

// Prediction obfuscation --------------------------------------------------------

struct ObfuscationConfig {
    enum class Mode { full, topk, rank };
    Mode mode = Mode::full;
    int k = 3;  // topk only, 1 <= k < n_classes

    std::string to_string() const;  // "full" | "topk:K" | "rank"
    static ObfuscationConfig parse(const std::string& text);
};

struct ObfuscatedOutput {
    ObfuscationConfig::Mode mode = ObfuscationConfig::Mode::full;
    std::vector<float> posteriors;               // full
    std::vector<std::pair<int, float>> topk;     // (class, p) descending
    std::vector<int> ranks;                      // 1-based rank per class index
};

ObfuscatedOutput obfuscate(const std::vector<float>& posterior,
                           const ObfuscationConfig& config);

// What an attacker can still extract: full -> top-3; topk -> probabilities
// zero-padded to 3; rank -> a constant feature.
AttackFeature feature_from_obfuscated(const ObfuscatedOutput& output);

// Distillation -------------------------------------------------------------------

struct DistillConfig {
    double temperature = 1.0;  // >= 1
    nn::TrainConfig teacher_config;
    nn::TrainConfig student_config;
    // The defense works by serving the T-softened posteriors; this switch
    // serves T=1 instead for comparison runs.
    bool serve_softened = true;

    void validate() const;
};

// Teacher trained through softmax_t(T); student of the same architecture
// fits the teacher's temperature-T posteriors on the training set; the
// returned model serves at temperature T.
std::pair<SidModel, TrainReport> train_distilled(const FeatureCache& cache,
                                                 const std::vector<ClipRef>& train_refs,
                                                 const std::vector<ClipRef>& eval_refs,
                                                 const nn::SidArch& arch,
                                                 const DistillConfig& config);

// Model key ------------------------------------------------------------------------

struct KeyConfig {
    double noise_amplitude = 0.35;  // > 0
    nn::TrainConfig detector_config;
    uint64_t key_seed = 0x6b6579;  // key-noise stream root
    double min_detector_accuracy = 0.95;

    void validate() const;
};

// Per-sample uniform [0,1] noise scaled by amplitude, added then
// re-normalized.
AudioClip apply_key(const AudioClip& clip, double amplitude, uint64_t sample_seed);

uint64_t key_noise_seed(const KeyConfig& config, const ClipRef& ref);

struct NoiseDetector {
    nn::MlpArch arch;
    nn::ParamSet params;
    FeatureStats stats;  // over mean-pooled log spectrogram features
    double validation_accuracy = 0.0;

    // Probability the clip carries the key.
    double keyed_score(const AudioClip& clip) const;
};

struct KeyedModel {
    SidModel model;        // trained exclusively on keyed inputs
    NoiseDetector detector;
    TrainReport report;
    double noise_amplitude = 0.0;
    uint64_t key_seed = 0;
};

// keyed_cache must be a FeatureCache built over key-transformed clips.
// Rejects the configuration when the detector's validation accuracy (keyed
// vs clean on eval clips) falls below config.min_detector_accuracy.
KeyedModel train_keyed(const Corpus& corpus, const FeatureCache& keyed_cache,
                       const FeatureCache& clean_cache,
                       const std::vector<ClipRef>& train_refs,
                       const std::vector<ClipRef>& eval_refs, const nn::SidArch& arch,
                       const KeyConfig& config, const nn::TrainConfig& base);

// Keyed input -> ordinary posterior; anything else -> a fresh flat-simplex
// random posterior (query_seed gives each query its own stream).
std::vector<float> keyed_predict(const SidModel& model, const NoiseDetector& detector,
                                 const AudioClip& clip, uint64_t query_seed);

// Flat over the probability simplex: normalized unit exponentials.
std::vector<float> random_simplex_posterior(int n_classes, uint64_t query_seed);

}  // namespace sidlab
