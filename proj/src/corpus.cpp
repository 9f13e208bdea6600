#include "sidlab/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "sidlab/fft.hpp"
#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"
#include "sidlab/sha256.hpp"

namespace sidlab {

using nlohmann::json;

namespace {

constexpr uint64_t kTagProfile = 0x70726f66;  // seed-domain separators
constexpr uint64_t kTagClip = 0x636c6970;
constexpr uint64_t kTagNoise = 0x6e6f6973;
constexpr uint64_t kTagSplitCohort = 0x73706c63;
constexpr uint64_t kTagSplitClips = 0x73706c6b;

// Per-clip scatter so a speaker's clips are distinct takes, not copies. The
// scatter is deliberately large relative to between-speaker spacing: the SID
// task must be learnable but leave room to overfit individual takes. Pitch
// scatter scales with the profile's jitter so a jitter-free profile stays
// exactly periodic.
constexpr double kClipF0ScatterPerJitter = 4.0;
constexpr double kClipFormantScatter = 0.22;
constexpr double kAspirationLevel = 0.16;
constexpr double kFloorNoiseLevel = 0.02;  // broadband floor, post-filter
constexpr int kJitterFrame = 160;  // 10 ms
constexpr int kFadeSamples = 160;

struct Resonator {
    // y[n] = a0*x[n] + b1*y[n-1] + b2*y[n-2], unity gain at DC. The center
    // may move during a clip; the pole radius stays fixed per bandwidth.
    double r = 0.0, sample_rate = 1.0;
    double a0 = 1.0, b1 = 0.0, b2 = 0.0;
    double y1 = 0.0, y2 = 0.0;

    Resonator(double bandwidth_hz, double sr) : sample_rate(sr) {
        r = std::exp(-M_PI * bandwidth_hz / sr);
        b2 = -r * r;
    }

    void set_center(double center_hz) {
        b1 = 2.0 * r * std::cos(2.0 * M_PI * center_hz / sample_rate);
        a0 = 1.0 - b1 - b2;
    }

    double process(double x) {
        const double y = a0 * x + b1 * y1 + b2 * y2;
        y2 = y1;
        y1 = y;
        return y;
    }
};

std::vector<double> make_impulse_response(ReverbPreset preset) {
    double decay_s, wet;
    uint64_t seed;
    switch (preset) {
        case ReverbPreset::room_a: decay_s = 0.05; wet = 0.35; seed = 0xA001; break;
        case ReverbPreset::room_b: decay_s = 0.12; wet = 0.50; seed = 0xB002; break;
        default: return {1.0};
    }
    const int ir_len = kSampleRate / 4;  // 250 ms tail
    std::vector<double> ir(ir_len, 0.0);
    ir[0] = 1.0;
    Rng rng(seed);
    for (int n = 1; n < ir_len; ++n)
        ir[n] = wet * std::exp(-n / (decay_s * kSampleRate)) * rng.next_sym();
    return ir;
}

std::vector<float> convolve_truncated(const std::vector<float>& x,
                                      const std::vector<double>& ir) {
    const int64_t full = static_cast<int64_t>(x.size()) + static_cast<int64_t>(ir.size()) - 1;
    const int64_t n = next_power_of_two(full);
    std::vector<std::complex<double>> fx(n), fh(n);
    for (size_t i = 0; i < x.size(); ++i) fx[i] = x[i];
    for (size_t i = 0; i < ir.size(); ++i) fh[i] = ir[i];
    fft_inplace(fx, false);
    fft_inplace(fh, false);
    for (int64_t i = 0; i < n; ++i) fx[i] *= fh[i];
    fft_inplace(fx, true);
    std::vector<float> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(fx[i].real());
    return out;
}

void peak_normalize(std::vector<float>& s) {
    float peak = 0.0f;
    for (float v : s) peak = std::max(peak, std::fabs(v));
    if (peak > 0.0f) {
        for (float& v : s) v /= peak;
    }
}

uint64_t clip_key(int speaker_id, int clip_id) {
    return static_cast<uint64_t>(speaker_id) * 1000003ULL + static_cast<uint64_t>(clip_id);
}

}  // namespace

std::string to_string(Condition c) { return c == Condition::clean ? "clean" : "noisy"; }

std::string to_string(ReverbPreset p) {
    switch (p) {
        case ReverbPreset::none: return "none";
        case ReverbPreset::room_a: return "room_a";
        default: return "room_b";
    }
}

Condition condition_from_string(const std::string& s) {
    if (s == "clean") return Condition::clean;
    if (s == "noisy") return Condition::noisy;
    throw std::invalid_argument("unknown condition: " + s);
}

ReverbPreset reverb_from_string(const std::string& s) {
    if (s == "none") return ReverbPreset::none;
    if (s == "room_a") return ReverbPreset::room_a;
    if (s == "room_b") return ReverbPreset::room_b;
    throw std::invalid_argument("unknown reverb preset: " + s);
}

void SpeakerProfile::validate() const {
    if (f0_hz < 80.0 || f0_hz > 300.0)
        throw std::invalid_argument("speaker f0 out of [80, 300] Hz");
    if (jitter < 0.0 || jitter > 0.05)
        throw std::invalid_argument("speaker jitter out of [0, 0.05]");
    for (int i = 1; i < 3; ++i) {
        if (formants[i].center_hz <= formants[i - 1].center_hz)
            throw std::invalid_argument("formant centers must be strictly increasing");
    }
}

void CorpusSpec::validate() const {
    if (n_speakers < 4 || n_speakers % 2 != 0)
        throw std::invalid_argument("n_speakers must be even and >= 4");
    if (clips_per_speaker < 8 || clips_per_speaker % 4 != 0)
        throw std::invalid_argument("clips_per_speaker must be divisible by 4 and >= 8");
    if (duration_s != kClipDurationSeconds)
        throw std::invalid_argument("duration_s is fixed at 3.0");
    if (condition == Condition::noisy && !(noise_snr_db > 0.0))
        throw std::invalid_argument("noise_snr_db must be > 0 for noisy corpora");
}

const AudioClip& Corpus::clip(int speaker_id, int clip_id) const {
    if (speaker_id < 0 || speaker_id >= spec.n_speakers || clip_id < 0 ||
        clip_id >= spec.clips_per_speaker)
        throw std::out_of_range("clip reference outside corpus");
    return clips[static_cast<size_t>(speaker_id) * spec.clips_per_speaker + clip_id];
}

SpeakerProfile make_speaker(uint64_t master_seed, int index) {
    SpeakerProfile p;
    p.speaker_id = index;
    p.seed = seed_combine(master_seed, kTagProfile, static_cast<uint64_t>(index));
    Rng rng(p.seed);
    // Low-pitch cohort on even indices, high-pitch on odd.
    if (index % 2 == 0)
        p.f0_hz = rng.next_uniform(90.0, 140.0);
    else
        p.f0_hz = rng.next_uniform(180.0, 260.0);
    // Profile centers are strictly increasing by construction; per-clip
    // scatter may bring neighbours close, which is where the confusability
    // comes from.
    p.formants[0] = {rng.next_uniform(350.0, 750.0), rng.next_uniform(110.0, 190.0)};
    p.formants[1] = {rng.next_uniform(1000.0, 1900.0), rng.next_uniform(140.0, 240.0)};
    p.formants[2] = {rng.next_uniform(2300.0, 3100.0), rng.next_uniform(180.0, 300.0)};
    p.jitter = rng.next_uniform(0.01, 0.045);
    p.validate();
    return p;
}

AudioClip synthesize_clip(const SpeakerProfile& profile, uint64_t clip_seed,
                          const CorpusSpec& spec) {
    if (spec.duration_s != kClipDurationSeconds)
        throw std::invalid_argument("duration_s is fixed at 3.0");
    profile.validate();

    Rng rng(seed_combine(profile.seed, kTagClip, clip_seed));
    const double f0_clip =
        profile.f0_hz *
        (1.0 + kClipF0ScatterPerJitter * profile.jitter * rng.next_sym());

    // Each take drifts its formants between two independently scattered
    // targets over the clip.
    std::array<Resonator, 3> filters = {
        Resonator(profile.formants[0].bandwidth_hz, kSampleRate),
        Resonator(profile.formants[1].bandwidth_hz, kSampleRate),
        Resonator(profile.formants[2].bandwidth_hz, kSampleRate)};
    std::array<double, 3> f_start, f_end;
    for (int i = 0; i < 3; ++i) {
        f_start[i] =
            profile.formants[i].center_hz * (1.0 + kClipFormantScatter * rng.next_sym());
        f_end[i] =
            profile.formants[i].center_hz * (1.0 + kClipFormantScatter * rng.next_sym());
    }

    const int n_harmonics =
        std::clamp(static_cast<int>(std::floor(7000.0 / f0_clip)), 3, 60);
    // Per-clip source tilt: harmonic k at amplitude k^-tilt.
    const double tilt = rng.next_uniform(0.5, 1.5);
    std::vector<double> harmonic_amp(n_harmonics + 1, 0.0);
    for (int k = 1; k <= n_harmonics; ++k)
        harmonic_amp[k] = std::pow(static_cast<double>(k), -tilt);

    const double env_rate_hz = rng.next_uniform(1.0, 3.0);
    const double env_phase = rng.next_uniform(0.0, 2.0 * M_PI);
    const double start_phase = rng.next_uniform(0.0, 2.0 * M_PI);

    AudioClip clip;
    clip.samples.resize(kClipSamples);
    clip.sample_rate = kSampleRate;
    clip.condition = Condition::clean;

    double phase = start_phase;
    double f0_frame = f0_clip;
    for (int n = 0; n < kClipSamples; ++n) {
        if (n % kJitterFrame == 0) {
            f0_frame = f0_clip * (1.0 + profile.jitter * rng.next_sym());
            const double t01 = static_cast<double>(n) / kClipSamples;
            for (int i = 0; i < 3; ++i)
                filters[i].set_center(f_start[i] + (f_end[i] - f_start[i]) * t01);
        }
        phase += 2.0 * M_PI * f0_frame / kSampleRate;
        if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;

        // Harmonic stack sum_k amp_k * sin(k*phase) via complex rotation.
        const double c1 = std::cos(phase), s1 = std::sin(phase);
        double ck = c1, sk = s1;
        double src = harmonic_amp[1] * s1;
        for (int k = 2; k <= n_harmonics; ++k) {
            const double c_next = ck * c1 - sk * s1;
            const double s_next = sk * c1 + ck * s1;
            ck = c_next;
            sk = s_next;
            src += harmonic_amp[k] * s_next;
        }
        src += kAspirationLevel * rng.next_sym();

        double y = src;
        for (auto& f : filters) y = f.process(y);
        y += kFloorNoiseLevel * rng.next_sym();

        const double env = 1.0 + 0.1 * std::sin(2.0 * M_PI * env_rate_hz * n / kSampleRate + env_phase);
        clip.samples[n] = static_cast<float>(y * env);
    }

    for (int n = 0; n < kFadeSamples; ++n) {
        const float g = static_cast<float>(
            0.5 * (1.0 - std::cos(M_PI * n / static_cast<double>(kFadeSamples))));
        clip.samples[n] *= g;
        clip.samples[kClipSamples - 1 - n] *= g;
    }
    peak_normalize(clip.samples);
    return clip;
}

AudioClip degrade_clip(const AudioClip& clip, double snr_db, ReverbPreset preset,
                       uint64_t noise_seed) {
    if (clip.condition != Condition::clean)
        throw std::invalid_argument("degrade_clip expects a clean clip");
    if (std::isnan(snr_db) || snr_db <= 0.0)
        throw std::invalid_argument("snr_db must be > 0");

    AudioClip out = clip;
    out.condition = Condition::noisy;
    if (preset == ReverbPreset::none && std::isinf(snr_db)) return out;

    if (preset != ReverbPreset::none)
        out.samples = convolve_truncated(out.samples, make_impulse_response(preset));

    if (!std::isinf(snr_db)) {
        double signal_power = 0.0;
        for (float v : out.samples) signal_power += static_cast<double>(v) * v;
        signal_power /= out.samples.size();

        Rng rng(seed_combine(noise_seed, kTagNoise));
        std::vector<double> noise(out.samples.size());
        double noise_power = 0.0;
        for (auto& v : noise) {
            v = rng.next_sym();
            noise_power += v * v;
        }
        noise_power /= noise.size();
        const double scale =
            std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
        for (size_t i = 0; i < out.samples.size(); ++i)
            out.samples[i] = static_cast<float>(out.samples[i] + scale * noise[i]);
    }
    peak_normalize(out.samples);
    return out;
}

Corpus build_corpus(const CorpusSpec& spec, int n_threads) {
    spec.validate();
    Corpus corpus;
    corpus.spec = spec;
    corpus.speakers.reserve(spec.n_speakers);
    for (int i = 0; i < spec.n_speakers; ++i)
        corpus.speakers.push_back(make_speaker(spec.master_seed, i));
    for (int i = 1; i < spec.n_speakers; ++i) {
        for (int j = 0; j < i; ++j) {
            const auto &a = corpus.speakers[i], &b = corpus.speakers[j];
            if (a.f0_hz == b.f0_hz &&
                a.formants[0].center_hz == b.formants[0].center_hz &&
                a.formants[1].center_hz == b.formants[1].center_hz &&
                a.formants[2].center_hz == b.formants[2].center_hz)
                throw std::runtime_error("duplicate speaker profile generated");
        }
    }

    const int total = spec.n_speakers * spec.clips_per_speaker;
    corpus.clips.resize(total);

    // Per-clip seeds make generation schedule-independent; threads just carve
    // up the index space.
    auto worker = [&](std::atomic<int>& next) {
        for (int idx = next.fetch_add(1); idx < total; idx = next.fetch_add(1)) {
            const int speaker_id = idx / spec.clips_per_speaker;
            const int clip_id = idx % spec.clips_per_speaker;
            const uint64_t cseed =
                seed_combine(spec.master_seed, kTagClip, clip_key(speaker_id, clip_id));
            AudioClip clip = synthesize_clip(corpus.speakers[speaker_id], cseed, spec);
            if (spec.condition == Condition::noisy) {
                const uint64_t nseed =
                    seed_combine(spec.master_seed, kTagNoise, clip_key(speaker_id, clip_id));
                clip = degrade_clip(clip, spec.noise_snr_db, spec.reverb_preset, nseed);
            }
            clip.speaker_id = speaker_id;
            clip.clip_id = clip_id;
            corpus.clips[idx] = std::move(clip);
        }
    };

    std::atomic<int> next{0};
    if (n_threads <= 1) {
        worker(next);
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back([&] { worker(next); });
        for (auto& t : threads) t.join();
    }
    return corpus;
}

SplitPlan plan_splits(const Corpus& corpus, uint64_t split_seed) {
    const CorpusSpec& spec = corpus.spec;
    spec.validate();
    const int in_count = spec.clips_per_speaker / 2;
    const int out_count = spec.clips_per_speaker - in_count;
    if (in_count < 2 || out_count < 2)
        throw std::invalid_argument("corpus too small for exact splits");

    SplitPlan plan;
    plan.split_seed = split_seed;
    plan.by_speaker.resize(spec.n_speakers);

    // Stratified target/shadow halving: shuffle within each cohort so both
    // cohorts contribute equally to each side.
    for (int cohort = 0; cohort < 2; ++cohort) {
        std::vector<int> ids;
        for (int s = cohort; s < spec.n_speakers; s += 2) ids.push_back(s);
        Rng rng(seed_combine(split_seed, kTagSplitCohort, static_cast<uint64_t>(cohort)));
        rng.shuffle(ids);
        const size_t half = ids.size() / 2;
        for (size_t i = 0; i < ids.size(); ++i)
            (i < half ? plan.target_speakers : plan.shadow_speakers).push_back(ids[i]);
    }
    std::sort(plan.target_speakers.begin(), plan.target_speakers.end());
    std::sort(plan.shadow_speakers.begin(), plan.shadow_speakers.end());

    for (int s = 0; s < spec.n_speakers; ++s) {
        std::vector<int> ids(spec.clips_per_speaker);
        for (int c = 0; c < spec.clips_per_speaker; ++c) ids[c] = c;
        Rng rng(seed_combine(split_seed, kTagSplitClips, static_cast<uint64_t>(s)));
        rng.shuffle(ids);

        SpeakerSplit& sp = plan.by_speaker[s];
        const int in_eval = std::max(1, in_count / 5);  // 80/20 of the in-set
        const int in_train = in_count - in_eval;
        int i = 0;
        for (int k = 0; k < in_train; ++k) sp.in_train.push_back(ids[i++]);
        for (int k = 0; k < in_eval; ++k) sp.in_eval.push_back(ids[i++]);
        for (int k = 0; k < out_count / 2; ++k) sp.out_attack_train.push_back(ids[i++]);
        while (i < spec.clips_per_speaker) sp.out_attack_eval.push_back(ids[i++]);
    }
    plan.validate(spec);
    return plan;
}

void SplitPlan::validate(const CorpusSpec& spec) const {
    std::vector<int> side(spec.n_speakers, -1);
    for (int s : target_speakers) side[s] = 0;
    for (int s : shadow_speakers) {
        if (side[s] == 0) throw std::runtime_error("speaker in both cohorts");
        side[s] = 1;
    }
    for (int s = 0; s < spec.n_speakers; ++s)
        if (side[s] < 0) throw std::runtime_error("speaker missing from both cohorts");
    if (static_cast<int>(by_speaker.size()) != spec.n_speakers)
        throw std::runtime_error("split plan speaker count mismatch");

    for (int s = 0; s < spec.n_speakers; ++s) {
        const SpeakerSplit& sp = by_speaker[s];
        std::vector<int> seen(spec.clips_per_speaker, 0);
        for (const auto* bucket :
             {&sp.in_train, &sp.in_eval, &sp.out_attack_train, &sp.out_attack_eval}) {
            for (int c : *bucket) {
                if (c < 0 || c >= spec.clips_per_speaker)
                    throw std::runtime_error("clip id out of range in split plan");
                if (seen[c]++) throw std::runtime_error("clip id in two buckets");
            }
        }
        for (int c = 0; c < spec.clips_per_speaker; ++c)
            if (!seen[c]) throw std::runtime_error("clip id missing from split plan");
        const size_t in_total = sp.in_train.size() + sp.in_eval.size();
        const size_t out_total = sp.out_attack_train.size() + sp.out_attack_eval.size();
        if (in_total != out_total)
            throw std::runtime_error("in/out sets must be evenly sized");
    }

    // Balanced pools must be constructible and non-empty.
    auto check_pool = [](const Pool& p, const char* what) {
        if (p.members.empty() || p.members.size() != p.nonmembers.size())
            throw std::runtime_error(std::string("unbalanced attack pool: ") + what);
    };
    check_pool(attack_train_pool(), "train");
    check_pool(attack_val_pool(), "val");
    check_pool(attack_eval_pool(), "eval");
}

std::vector<ClipRef> SplitPlan::cohort_refs(
    const std::vector<int>& speakers,
    const std::vector<int> SpeakerSplit::*bucket) const {
    std::vector<ClipRef> refs;
    for (int s : speakers)
        for (int c : by_speaker[s].*bucket) refs.push_back({s, c});
    return refs;
}

SplitPlan::Pool SplitPlan::attack_train_pool() const {
    Pool pool;
    for (int s : shadow_speakers) {
        const SpeakerSplit& sp = by_speaker[s];
        const size_t n = std::min(sp.in_train.size(), sp.out_attack_train.size());
        for (size_t i = 0; i < n; ++i) {
            pool.members.push_back({s, sp.in_train[i]});
            pool.nonmembers.push_back({s, sp.out_attack_train[i]});
        }
    }
    return pool;
}

SplitPlan::Pool SplitPlan::attack_val_pool() const {
    Pool pool;
    for (int s : shadow_speakers) {
        const SpeakerSplit& sp = by_speaker[s];
        const size_t used = std::min(sp.in_train.size(), sp.out_attack_train.size());
        const size_t n = std::min(sp.in_train.size() - used, sp.out_attack_eval.size());
        for (size_t i = 0; i < n; ++i) {
            pool.members.push_back({s, sp.in_train[used + i]});
            pool.nonmembers.push_back({s, sp.out_attack_eval[i]});
        }
    }
    return pool;
}

SplitPlan::Pool SplitPlan::attack_eval_pool() const {
    Pool pool;
    for (int s : target_speakers) {
        const SpeakerSplit& sp = by_speaker[s];
        const size_t n = std::min(sp.in_train.size(), sp.out_attack_eval.size());
        for (size_t i = 0; i < n; ++i) {
            pool.members.push_back({s, sp.in_train[i]});
            pool.nonmembers.push_back({s, sp.out_attack_eval[i]});
        }
    }
    return pool;
}

std::vector<ClipRef> SplitPlan::defender_reference(double reference_fraction) const {
    if (!(reference_fraction > 0.0) || reference_fraction > 0.5)
        throw std::invalid_argument("reference_fraction must be in (0, 0.5]");
    std::vector<ClipRef> refs;
    for (int s : target_speakers) {
        const SpeakerSplit& sp = by_speaker[s];
        const size_t in_set = sp.in_train.size() + sp.in_eval.size();
        const size_t want = static_cast<size_t>(
            std::floor(reference_fraction * static_cast<double>(in_set)));
        if (want < 1 || want > sp.out_attack_train.size())
            throw std::runtime_error("corpus too small to carve the reference pool");
        for (size_t i = 0; i < want; ++i) refs.push_back({s, sp.out_attack_train[i]});
    }
    return refs;
}

// Persistence ----------------------------------------------------------------

namespace {

json profile_to_json(const SpeakerProfile& p) {
    json f = json::array();
    for (const auto& fo : p.formants)
        f.push_back({{"center_hz", fo.center_hz}, {"bandwidth_hz", fo.bandwidth_hz}});
    return {{"speaker_id", p.speaker_id}, {"f0_hz", p.f0_hz},     {"formants", f},
            {"jitter", p.jitter},         {"seed", p.seed}};
}

SpeakerProfile profile_from_json(const json& j) {
    SpeakerProfile p;
    p.speaker_id = j.at("speaker_id").get<int>();
    p.f0_hz = j.at("f0_hz").get<double>();
    for (int i = 0; i < 3; ++i) {
        p.formants[i].center_hz = j.at("formants")[i].at("center_hz").get<double>();
        p.formants[i].bandwidth_hz = j.at("formants")[i].at("bandwidth_hz").get<double>();
    }
    p.jitter = j.at("jitter").get<double>();
    p.seed = j.at("seed").get<uint64_t>();
    return p;
}

json split_to_json(const SplitPlan& plan) {
    json speakers = json::array();
    for (const auto& sp : plan.by_speaker)
        speakers.push_back({{"in_train", sp.in_train},
                            {"in_eval", sp.in_eval},
                            {"out_attack_train", sp.out_attack_train},
                            {"out_attack_eval", sp.out_attack_eval}});
    return {{"split_seed", plan.split_seed},
            {"target_speakers", plan.target_speakers},
            {"shadow_speakers", plan.shadow_speakers},
            {"by_speaker", speakers}};
}

SplitPlan split_from_json(const json& j) {
    SplitPlan plan;
    plan.split_seed = j.at("split_seed").get<uint64_t>();
    plan.target_speakers = j.at("target_speakers").get<std::vector<int>>();
    plan.shadow_speakers = j.at("shadow_speakers").get<std::vector<int>>();
    for (const auto& sj : j.at("by_speaker")) {
        SpeakerSplit sp;
        sp.in_train = sj.at("in_train").get<std::vector<int>>();
        sp.in_eval = sj.at("in_eval").get<std::vector<int>>();
        sp.out_attack_train = sj.at("out_attack_train").get<std::vector<int>>();
        sp.out_attack_eval = sj.at("out_attack_eval").get<std::vector<int>>();
        plan.by_speaker.push_back(std::move(sp));
    }
    return plan;
}

std::string clip_filename(int speaker_id, int clip_id) {
    return "spk" + std::to_string(speaker_id) + "_clip" + std::to_string(clip_id) + ".f32";
}

}  // namespace

json corpus_spec_to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const json& j);

json corpus_spec_to_json(const CorpusSpec& spec) {
    return {{"n_speakers", spec.n_speakers},
            {"clips_per_speaker", spec.clips_per_speaker},
            {"duration_s", spec.duration_s},
            {"condition", to_string(spec.condition)},
            {"noise_snr_db", std::isinf(spec.noise_snr_db) ? json("inf") : json(spec.noise_snr_db)},
            {"reverb_preset", to_string(spec.reverb_preset)},
            {"master_seed", spec.master_seed}};
}

CorpusSpec corpus_spec_from_json(const json& j) {
    CorpusSpec spec;
    spec.n_speakers = j.at("n_speakers").get<int>();
    spec.clips_per_speaker = j.at("clips_per_speaker").get<int>();
    spec.duration_s = j.at("duration_s").get<double>();
    spec.condition = condition_from_string(j.at("condition").get<std::string>());
    if (j.at("noise_snr_db").is_string())
        spec.noise_snr_db = std::numeric_limits<double>::infinity();
    else
        spec.noise_snr_db = j.at("noise_snr_db").get<double>();
    spec.reverb_preset = reverb_from_string(j.at("reverb_preset").get<std::string>());
    spec.master_seed = j.at("master_seed").get<uint64_t>();
    return spec;
}

void save_corpus(const Corpus& corpus, const SplitPlan& plan,
                 const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json speakers = json::array();
    for (const auto& p : corpus.speakers) speakers.push_back(profile_to_json(p));
    json manifest = {{"format_version", 1},
                     {"spec", corpus_spec_to_json(corpus.spec)},
                     {"speakers", speakers},
                     {"split_plan", split_to_json(plan)},
                     {"digest", corpus_digest(corpus)}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    for (const auto& clip : corpus.clips)
        write_f32(dir / clip_filename(clip.speaker_id, clip.clip_id), clip.samples);
}

std::pair<Corpus, SplitPlan> load_corpus(const std::filesystem::path& dir) {
    const json manifest = json::parse(read_text(dir / "manifest.json"));
    if (manifest.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported corpus format version");
    Corpus corpus;
    corpus.spec = corpus_spec_from_json(manifest.at("spec"));
    for (const auto& pj : manifest.at("speakers"))
        corpus.speakers.push_back(profile_from_json(pj));
    corpus.clips.resize(static_cast<size_t>(corpus.spec.n_speakers) *
                        corpus.spec.clips_per_speaker);
    for (int s = 0; s < corpus.spec.n_speakers; ++s) {
        for (int c = 0; c < corpus.spec.clips_per_speaker; ++c) {
            AudioClip clip;
            clip.samples = read_f32(dir / clip_filename(s, c));
            if (clip.samples.size() != kClipSamples)
                throw std::runtime_error("clip file has wrong sample count");
            clip.speaker_id = s;
            clip.clip_id = c;
            clip.condition = corpus.spec.condition;
            corpus.clips[static_cast<size_t>(s) * corpus.spec.clips_per_speaker + c] =
                std::move(clip);
        }
    }
    return {std::move(corpus), split_from_json(manifest.at("split_plan"))};
}

std::string corpus_digest(const Corpus& corpus) {
    require_little_endian();
    Sha256 h;
    for (const auto& clip : corpus.clips)
        h.update(clip.samples.data(), clip.samples.size() * sizeof(float));
    return h.hex_digest();
}

}  // namespace sidlab
