#include <doctest.h>

#include <cmath>
#include <complex>

#include "sidlab/corpus.hpp"
#include "sidlab/features.hpp"
#include "sidlab/fft.hpp"
#include "sidlab/rng.hpp"

using namespace sidlab;

namespace {

CorpusSpec small_spec(Condition condition = Condition::clean) {
    CorpusSpec spec;
    spec.n_speakers = 8;
    spec.clips_per_speaker = 8;
    spec.condition = condition;
    spec.noise_snr_db = 15.0;
    spec.reverb_preset = ReverbPreset::room_a;
    spec.master_seed = 77;
    return spec;
}

SpeakerProfile fixed_profile(double f0, double jitter) {
    SpeakerProfile p;
    p.speaker_id = 0;
    p.f0_hz = f0;
    p.formants = {FormantSpec{700.0, 90.0}, FormantSpec{1400.0, 120.0},
                  FormantSpec{2600.0, 160.0}};
    p.jitter = jitter;
    p.seed = 1234;
    return p;
}

}  // namespace

TEST_CASE("make_speaker is deterministic, distinct, and in range") {
    const SpeakerProfile a = make_speaker(7, 0);
    const SpeakerProfile b = make_speaker(7, 0);
    CHECK(a.f0_hz == b.f0_hz);
    CHECK(a.jitter == b.jitter);
    for (int i = 0; i < 3; ++i) {
        CHECK(a.formants[i].center_hz == b.formants[i].center_hz);
        CHECK(a.formants[i].bandwidth_hz == b.formants[i].bandwidth_hz);
    }

    const SpeakerProfile c = make_speaker(7, 1);
    CHECK((a.f0_hz != c.f0_hz || a.formants[0].center_hz != c.formants[0].center_hz));

    for (uint64_t seed : {7ull, 8ull, 12345ull}) {
        for (int idx = 0; idx < 12; ++idx) {
            const SpeakerProfile p = make_speaker(seed, idx);
            CHECK(p.f0_hz >= 80.0);
            CHECK(p.f0_hz <= 300.0);
            CHECK(p.jitter >= 0.0);
            CHECK(p.jitter <= 0.05);
            CHECK(p.formants[0].center_hz < p.formants[1].center_hz);
            CHECK(p.formants[1].center_hz < p.formants[2].center_hz);
            CHECK_NOTHROW(p.validate());
        }
    }
}

TEST_CASE("synthesize_clip: shape, normalization, determinism") {
    const CorpusSpec spec = small_spec();
    const SpeakerProfile p = make_speaker(3, 2);
    const AudioClip a = synthesize_clip(p, 42, spec);
    CHECK(a.samples.size() == kClipSamples);
    float peak = 0.0f;
    for (float v : a.samples) peak = std::max(peak, std::fabs(v));
    CHECK(peak <= 1.0f);
    CHECK(peak > 0.9f);

    const AudioClip b = synthesize_clip(p, 42, spec);
    CHECK(a.samples == b.samples);
    const AudioClip c = synthesize_clip(p, 43, spec);
    CHECK(a.samples != c.samples);

    CorpusSpec bad = spec;
    bad.duration_s = 2.0;
    CHECK_THROWS(synthesize_clip(p, 42, bad));
}

TEST_CASE("f0 is the dominant low-band peak for a jitter-free profile") {
    const AudioClip clip = synthesize_clip(fixed_profile(150.0, 0.0), 9, small_spec());

    const int64_t n = next_power_of_two(kClipSamples);
    std::vector<std::complex<double>> buf(n);
    for (int i = 0; i < kClipSamples; ++i) buf[i] = clip.samples[i];
    fft_inplace(buf, false);
    const double hz_per_bin = static_cast<double>(kSampleRate) / static_cast<double>(n);
    const int lo = static_cast<int>(20.0 / hz_per_bin);
    const int hi = static_cast<int>(400.0 / hz_per_bin);
    int best = lo;
    for (int k = lo; k <= hi; ++k)
        if (std::abs(buf[k]) > std::abs(buf[best])) best = k;
    CHECK(std::fabs(best * hz_per_bin - 150.0) <= 2.0 * hz_per_bin + 1e-9);
}

TEST_CASE("jitter-free clip autocorrelation peaks at the pitch period") {
    const double f0 = 160.0;  // period exactly 100 samples at 16 kHz
    const AudioClip clip = synthesize_clip(fixed_profile(f0, 0.0), 5, small_spec());
    const int period = static_cast<int>(std::lround(kSampleRate / f0));

    auto autocorr = [&](int lag) {
        double acc = 0.0;
        for (int i = 0; i + lag < kClipSamples; ++i)
            acc += static_cast<double>(clip.samples[i]) * clip.samples[i + lag];
        return acc;
    };
    int best = period / 2;
    for (int lag = period / 2; lag <= period * 3 / 2; ++lag)
        if (autocorr(lag) > autocorr(best)) best = lag;
    CHECK(std::abs(best - period) <= 1);
}

TEST_CASE("degrade_clip: identity sentinel, SNR oracle, determinism, guards") {
    const AudioClip clean = synthesize_clip(make_speaker(5, 1), 3, small_spec());

    const AudioClip ident = degrade_clip(
        clean, std::numeric_limits<double>::infinity(), ReverbPreset::none, 1);
    CHECK(ident.samples == clean.samples);
    CHECK(ident.condition == Condition::noisy);

    // SNR is scale-invariant, so the post-normalization least-squares split
    // into signal and noise recovers the requested ratio.
    const double requested_db = 20.0;
    const AudioClip noisy = degrade_clip(clean, requested_db, ReverbPreset::none, 1);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < clean.samples.size(); ++i) {
        num += static_cast<double>(noisy.samples[i]) * clean.samples[i];
        den += static_cast<double>(clean.samples[i]) * clean.samples[i];
    }
    const double gain = num / den;
    double signal_power = 0.0, noise_power = 0.0;
    for (size_t i = 0; i < clean.samples.size(); ++i) {
        const double s = gain * clean.samples[i];
        const double r = noisy.samples[i] - s;
        signal_power += s * s;
        noise_power += r * r;
    }
    const double measured_db = 10.0 * std::log10(signal_power / noise_power);
    CHECK(measured_db == doctest::Approx(requested_db).epsilon(0.025));  // +-0.5 dB

    const AudioClip again = degrade_clip(clean, requested_db, ReverbPreset::none, 1);
    CHECK(again.samples == noisy.samples);

    const AudioClip reverbed = degrade_clip(clean, 20.0, ReverbPreset::room_a, 1);
    CHECK(reverbed.samples.size() == clean.samples.size());
    CHECK(reverbed.samples != clean.samples);

    CHECK_THROWS(degrade_clip(clean, 0.0, ReverbPreset::none, 1));
    CHECK_THROWS(degrade_clip(clean, -3.0, ReverbPreset::none, 1));
    CHECK_THROWS(degrade_clip(reverbed, 20.0, ReverbPreset::none, 1));  // already noisy
}

TEST_CASE("build_corpus: counts, digest determinism, thread independence") {
    const CorpusSpec spec = small_spec();
    const Corpus a = build_corpus(spec, 1);
    CHECK(a.clips.size() == 64);
    for (const auto& clip : a.clips) {
        CHECK(clip.samples.size() == kClipSamples);
        CHECK(clip.condition == Condition::clean);
    }

    const Corpus b = build_corpus(spec, 4);
    CHECK(corpus_digest(a) == corpus_digest(b));

    CorpusSpec other = spec;
    other.master_seed = 78;
    CHECK(corpus_digest(build_corpus(other, 1)) != corpus_digest(a));
}

TEST_CASE("noisy corpus clips are tagged and differ from their clean twins") {
    const Corpus noisy = build_corpus(small_spec(Condition::noisy), 2);
    const Corpus clean = build_corpus(small_spec(Condition::clean), 2);
    for (size_t i = 0; i < noisy.clips.size(); ++i) {
        CHECK(noisy.clips[i].condition == Condition::noisy);
        CHECK(noisy.clips[i].samples != clean.clips[i].samples);
    }
}

TEST_CASE("corpus spec validation") {
    CorpusSpec bad = small_spec();
    bad.n_speakers = 7;
    CHECK_THROWS(bad.validate());
    bad = small_spec();
    bad.clips_per_speaker = 10;
    CHECK_THROWS(bad.validate());
    bad = small_spec(Condition::noisy);
    bad.noise_snr_db = -1.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("plan_splits: bucket arithmetic, disjointness, determinism") {
    CorpusSpec spec = small_spec();
    spec.n_speakers = 20;
    spec.clips_per_speaker = 40;
    const Corpus corpus = build_corpus(spec, 2);
    const SplitPlan plan = plan_splits(corpus, 99);

    CHECK(plan.target_speakers.size() == 10);
    CHECK(plan.shadow_speakers.size() == 10);
    for (int s : plan.target_speakers)
        CHECK(std::find(plan.shadow_speakers.begin(), plan.shadow_speakers.end(), s) ==
              plan.shadow_speakers.end());

    // stratification over the two cohorts
    auto count_cohort = [](const std::vector<int>& ids, int parity) {
        return std::count_if(ids.begin(), ids.end(),
                             [parity](int s) { return s % 2 == parity; });
    };
    CHECK(count_cohort(plan.target_speakers, 0) == 5);
    CHECK(count_cohort(plan.target_speakers, 1) == 5);

    for (const auto& sp : plan.by_speaker) {
        CHECK(sp.in_train.size() == 16);
        CHECK(sp.in_eval.size() == 4);
        CHECK(sp.out_attack_train.size() == 10);
        CHECK(sp.out_attack_eval.size() == 10);
    }
    CHECK_NOTHROW(plan.validate(spec));

    const SplitPlan again = plan_splits(corpus, 99);
    CHECK(again.target_speakers == plan.target_speakers);
    for (int s = 0; s < spec.n_speakers; ++s) {
        CHECK(again.by_speaker[s].in_train == plan.by_speaker[s].in_train);
        CHECK(again.by_speaker[s].out_attack_eval == plan.by_speaker[s].out_attack_eval);
    }
    const SplitPlan different = plan_splits(corpus, 100);
    bool any_diff = different.target_speakers != plan.target_speakers;
    for (int s = 0; s < spec.n_speakers && !any_diff; ++s)
        any_diff = different.by_speaker[s].in_train != plan.by_speaker[s].in_train;
    CHECK(any_diff);

    // balanced derived pools
    const auto train_pool = plan.attack_train_pool();
    const auto val_pool = plan.attack_val_pool();
    const auto eval_pool = plan.attack_eval_pool();
    CHECK(train_pool.members.size() == 100);
    CHECK(train_pool.members.size() == train_pool.nonmembers.size());
    CHECK(val_pool.members.size() == 60);
    CHECK(val_pool.members.size() == val_pool.nonmembers.size());
    CHECK(eval_pool.members.size() == 100);
    CHECK(eval_pool.members.size() == eval_pool.nonmembers.size());

    // validation pool is disjoint from the training pool
    for (const auto& v : val_pool.members)
        CHECK(std::find(train_pool.members.begin(), train_pool.members.end(), v) ==
              train_pool.members.end());

    // defender reference stays clear of the attack evaluation nonmembers
    const auto reference = plan.defender_reference(0.2);
    CHECK(reference.size() == 10 * 4);  // floor(0.2 * 20) per target speaker
    for (const auto& r : reference) {
        CHECK(std::find(plan.target_speakers.begin(), plan.target_speakers.end(),
                        r.speaker_id) != plan.target_speakers.end());
        CHECK(std::find(eval_pool.nonmembers.begin(), eval_pool.nonmembers.end(), r) ==
              eval_pool.nonmembers.end());
    }
    CHECK_THROWS(plan.defender_reference(0.0));
    CHECK_THROWS(plan.defender_reference(0.6));
}

TEST_CASE("corpus persists and reloads byte-identically") {
    const CorpusSpec spec = small_spec();
    const Corpus corpus = build_corpus(spec, 2);
    const SplitPlan plan = plan_splits(corpus, 5);
    const auto dir = std::filesystem::temp_directory_path() / "sidlab_corpus_test";
    std::filesystem::remove_all(dir);
    save_corpus(corpus, plan, dir);

    const auto [loaded, loaded_plan] = load_corpus(dir);
    CHECK(loaded.spec.n_speakers == spec.n_speakers);
    CHECK(corpus_digest(loaded) == corpus_digest(corpus));
    CHECK(loaded_plan.target_speakers == plan.target_speakers);
    for (int s = 0; s < spec.n_speakers; ++s)
        CHECK(loaded_plan.by_speaker[s].in_train == plan.by_speaker[s].in_train);
    std::filesystem::remove_all(dir);
}

TEST_CASE("separability sanity: nearest centroid beats chance on clean clips") {
    const CorpusSpec spec = small_spec();
    const Corpus corpus = build_corpus(spec, 2);

    // mean log spectrum per clip
    auto mean_spectrum = [](const AudioClip& clip) {
        const Spectrogram s = stft_magnitude(clip);
        std::vector<double> mean(s.bins, 0.0);
        for (int f = 0; f < s.frames; ++f)
            for (int b = 0; b < s.bins; ++b)
                mean[b] += std::log1p(static_cast<double>(s.at(f, b))) / s.frames;
        return mean;
    };

    const int train_per_speaker = 5;
    std::vector<std::vector<double>> centroids(spec.n_speakers);
    for (int s = 0; s < spec.n_speakers; ++s) {
        std::vector<double> centroid;
        for (int c = 0; c < train_per_speaker; ++c) {
            const auto m = mean_spectrum(corpus.clip(s, c));
            if (centroid.empty()) centroid.assign(m.size(), 0.0);
            for (size_t b = 0; b < m.size(); ++b) centroid[b] += m[b] / train_per_speaker;
        }
        centroids[s] = std::move(centroid);
    }

    int correct = 0, total = 0;
    for (int s = 0; s < spec.n_speakers; ++s) {
        for (int c = train_per_speaker; c < spec.clips_per_speaker; ++c) {
            const auto m = mean_spectrum(corpus.clip(s, c));
            int best = 0;
            double best_d = 1e300;
            for (int k = 0; k < spec.n_speakers; ++k) {
                double d = 0.0;
                for (size_t b = 0; b < m.size(); ++b)
                    d += (m[b] - centroids[k][b]) * (m[b] - centroids[k][b]);
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            correct += (best == s);
            ++total;
        }
    }
    CHECK(static_cast<double>(correct) / total > 1.0 / spec.n_speakers);
}
