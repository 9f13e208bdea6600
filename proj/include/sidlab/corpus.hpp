#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace sidlab {

constexpr int kSampleRate = 16000;
constexpr double kClipDurationSeconds = 3.0;
constexpr int kClipSamples = 48000;  // duration * sample_rate, exact

enum class Condition { clean, noisy };
enum class ReverbPreset { none, room_a, room_b };

std::string to_string(Condition c);
std::string to_string(ReverbPreset p);
Condition condition_from_string(const std::string& s);
ReverbPreset reverb_from_string(const std::string& s);

struct FormantSpec {
    double center_hz = 0.0;
    double bandwidth_hz = 0.0;
};

// A synthetic voice: harmonic source at f0 shaped by three formant
// resonators. Speakers come in two cohorts (low / high pitch range) that
// stand in for the stratification groups of a real corpus.
struct SpeakerProfile {
    int speaker_id = -1;
    double f0_hz = 0.0;
    std::array<FormantSpec, 3> formants{};
    double jitter = 0.0;  // relative per-frame f0 perturbation, [0, 0.05]
    uint64_t seed = 0;

    int cohort() const { return speaker_id % 2; }
    void validate() const;  // range + ordering invariants
};

struct AudioClip {
    std::vector<float> samples;  // peak-normalized, |s| <= 1
    int sample_rate = kSampleRate;
    int speaker_id = -1;
    int clip_id = -1;
    Condition condition = Condition::clean;
};

struct CorpusSpec {
    int n_speakers = 20;
    int clips_per_speaker = 40;
    double duration_s = kClipDurationSeconds;
    Condition condition = Condition::clean;
    double noise_snr_db = 15.0;                    // noisy only; > 0 or +inf
    ReverbPreset reverb_preset = ReverbPreset::room_a;  // noisy only
    uint64_t master_seed = 1;

    void validate() const;  // n_speakers even, clips divisible by 4, ...
};

struct ClipRef {
    int speaker_id = -1;
    int clip_id = -1;
    friend bool operator==(const ClipRef&, const ClipRef&) = default;
};

struct Corpus {
    CorpusSpec spec;
    std::vector<SpeakerProfile> speakers;
    std::vector<AudioClip> clips;  // index = speaker_id * clips_per_speaker + clip_id

    const AudioClip& clip(int speaker_id, int clip_id) const;
    const AudioClip& clip(const ClipRef& r) const { return clip(r.speaker_id, r.clip_id); }
};

// Per-speaker clip buckets. in_train feeds SID training; in_eval measures SID
// test accuracy; the out buckets hold clips never shown to the model. Order
// within each bucket is the (seeded) shuffle order and is meaningful: balanced
// attack pools take deterministic prefixes.
struct SpeakerSplit {
    std::vector<int> in_train;
    std::vector<int> in_eval;
    std::vector<int> out_attack_train;
    std::vector<int> out_attack_eval;
};

struct SplitPlan {
    uint64_t split_seed = 0;
    std::vector<int> target_speakers;  // sorted
    std::vector<int> shadow_speakers;  // sorted
    std::vector<SpeakerSplit> by_speaker;  // indexed by speaker_id

    void validate(const CorpusSpec& spec) const;

    // Balanced membership pools derived from the plan.
    // Shadow side: training pool (in_train prefix vs out_attack_train) and a
    // disjoint validation pool (in_train remainder vs out_attack_eval prefix).
    // Target side: evaluation pool (in_train prefix vs out_attack_eval).
    // Target out_attack_train is left for the defender (advreg reference).
    struct Pool {
        std::vector<ClipRef> members;
        std::vector<ClipRef> nonmembers;
    };
    Pool attack_train_pool() const;  // shadow cohort
    Pool attack_val_pool() const;    // shadow cohort
    Pool attack_eval_pool() const;   // target cohort

    std::vector<ClipRef> cohort_refs(const std::vector<int>& speakers,
                                     const std::vector<int> SpeakerSplit::*bucket) const;
    // Defender-side nonmember reference clips: a prefix of the target
    // cohort's out_attack_train buckets, fraction of the in-set size.
    std::vector<ClipRef> defender_reference(double reference_fraction) const;
};

// Operations ---------------------------------------------------------------

// Deterministic profile from (master_seed, index). Even indices fall in the
// low-pitch cohort, odd in the high-pitch cohort.
SpeakerProfile make_speaker(uint64_t master_seed, int index);

AudioClip synthesize_clip(const SpeakerProfile& profile, uint64_t clip_seed,
                          const CorpusSpec& spec);

// Convolve with the preset's fixed impulse response, add white noise at
// snr_db (measured against the pre-noise signal), re-normalize. noise_seed
// makes the added noise a pure function of the caller's identifiers.
// snr_db <= 0 is rejected; +inf adds no noise.
AudioClip degrade_clip(const AudioClip& clip, double snr_db, ReverbPreset preset,
                       uint64_t noise_seed);

Corpus build_corpus(const CorpusSpec& spec, int n_threads = 1);

SplitPlan plan_splits(const Corpus& corpus, uint64_t split_seed);

// Persistence ---------------------------------------------------------------

// Directory layout: manifest.json + spk{S}_clip{C}.f32 raw little-endian
// float32 files. Digest = SHA-256 over clip files concatenated in
// (speaker_id, clip_id) order.
void save_corpus(const Corpus& corpus, const SplitPlan& plan,
                 const std::filesystem::path& dir);
std::pair<Corpus, SplitPlan> load_corpus(const std::filesystem::path& dir);
std::string corpus_digest(const Corpus& corpus);

nlohmann::json corpus_spec_to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

}  // namespace sidlab
