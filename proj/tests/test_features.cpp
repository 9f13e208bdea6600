#include <doctest.h>

#include <cmath>

#include "sidlab/features.hpp"
#include "sidlab/rng.hpp"

using namespace sidlab;

namespace {

AudioClip make_clip(std::vector<float> samples) {
    AudioClip clip;
    clip.samples = std::move(samples);
    clip.sample_rate = kSampleRate;
    return clip;
}

AudioClip sine_clip(double freq_hz, int n = kClipSamples) {
    std::vector<float> s(n);
    for (int i = 0; i < n; ++i)
        s[i] = static_cast<float>(std::sin(2.0 * M_PI * freq_hz * i / kSampleRate));
    return make_clip(std::move(s));
}

}  // namespace

TEST_CASE("all-zero clip gives an all-zero spectrogram") {
    const Spectrogram spec = stft_magnitude(make_clip(std::vector<float>(kClipSamples, 0.0f)));
    CHECK(spec.frames == kStftFrames);
    CHECK(spec.bins == kStftBins);
    for (float v : spec.values) CHECK(v == 0.0f);
}

TEST_CASE("1 kHz sine peaks at bin f*n_fft/sr = 32") {
    const Spectrogram spec = stft_magnitude(sine_clip(1000.0));
    for (int f = 0; f < spec.frames; ++f) {
        int best = 0;
        for (int b = 1; b < spec.bins; ++b)
            if (spec.at(f, b) > spec.at(f, best)) best = b;
        CHECK(best == 32);
    }
}

TEST_CASE("per-frame Parseval identity against time-domain energy") {
    Rng rng(91);
    std::vector<float> samples(kClipSamples);
    for (auto& v : samples) v = static_cast<float>(0.8 * rng.next_sym());
    const AudioClip clip = make_clip(std::move(samples));
    const Spectrogram spec = stft_magnitude(clip);

    std::vector<double> window(kStftWindow);
    for (int n = 0; n < kStftWindow; ++n)
        window[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / kStftWindow));

    for (int f = 0; f < spec.frames; f += 37) {
        double time_energy = 0.0;
        for (int n = 0; n < kStftWindow; ++n) {
            const double v = clip.samples[f * kStftHop + n] * window[n];
            time_energy += v * v;
        }
        // one-sided spectrum: interior bins appear twice in the full DFT
        double spec_energy = 0.0;
        for (int b = 0; b < spec.bins; ++b) {
            const double m2 = static_cast<double>(spec.at(f, b)) * spec.at(f, b);
            spec_energy += (b == 0 || b == spec.bins - 1) ? m2 : 2.0 * m2;
        }
        CHECK(spec_energy ==
              doctest::Approx(kStftFft * time_energy).epsilon(1e-3));
    }
}

TEST_CASE("stft magnitude scales linearly under positive gain") {
    const AudioClip clip = sine_clip(523.0);
    AudioClip half = clip;
    for (auto& v : half.samples) v *= 0.5f;
    const Spectrogram a = stft_magnitude(clip);
    const Spectrogram b = stft_magnitude(half);
    for (size_t i = 0; i < a.values.size(); ++i)
        CHECK(static_cast<double>(b.values[i]) ==
              doctest::Approx(0.5 * a.values[i]).epsilon(1e-6));
}

TEST_CASE("frame-count formula holds over randomized window/hop sizes") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const int n_fft = 1 << (6 + rng.next_below(4));  // 64..512
        const int window = 2 + static_cast<int>(rng.next_below(n_fft - 1));
        const int hop = 1 + static_cast<int>(rng.next_below(window));
        const int len = window + static_cast<int>(rng.next_below(4000));
        std::vector<float> samples(len);
        for (auto& v : samples) v = static_cast<float>(rng.next_sym());
        const Spectrogram spec = stft_magnitude(make_clip(std::move(samples)), window, hop, n_fft);
        CHECK(spec.frames == 1 + (len - window) / hop);
        CHECK(spec.bins == n_fft / 2 + 1);
    }
}

TEST_CASE("stft rejects invalid geometry") {
    CHECK_THROWS(stft_magnitude(make_clip(std::vector<float>(100, 0.0f)), 400, 160, 512));
    CHECK_THROWS(stft_magnitude(sine_clip(440.0), 600, 160, 512));   // window > n_fft
    CHECK_THROWS(stft_magnitude(sine_clip(440.0), 400, 500, 512));   // hop > window
    CHECK_THROWS(stft_magnitude(sine_clip(440.0), 300, 100, 500));   // non-pow2 n_fft
}

TEST_CASE("standardization: centering identity and degenerate-bin rule") {
    // Two-bin toy spectrogram.
    Spectrogram spec;
    spec.frames = 4;
    spec.bins = 2;
    spec.values = {1.0f, 3.0f, 1.0f, 3.0f, 1.0f, 3.0f, 1.0f, 3.0f};

    FeatureStats stats;
    stats.mean = {std::log1p(1.0f), std::log1p(3.0f)};
    stats.var = {0.0f, 0.0f};  // degenerate bins pass through centered only

    const Spectrogram out = log_compress_and_standardize(spec, stats);
    for (float v : out.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-7));

    FeatureStats mismatched;
    mismatched.mean = {0.0f};
    mismatched.var = {1.0f};
    CHECK_THROWS(log_compress_and_standardize(spec, mismatched));
}

TEST_CASE("standardizing with own stats yields unit variance per bin") {
    Rng rng(5);
    Spectrogram spec;
    spec.frames = 200;
    spec.bins = 3;
    spec.values.resize(600);
    for (auto& v : spec.values) v = static_cast<float>(rng.next_uniform(0.0, 4.0));

    const FeatureStats stats = compute_feature_stats({&spec});
    const Spectrogram out = log_compress_and_standardize(spec, stats);
    for (int b = 0; b < 3; ++b) {
        double sum = 0.0, sum_sq = 0.0;
        for (int f = 0; f < out.frames; ++f) {
            sum += out.at(f, b);
            sum_sq += static_cast<double>(out.at(f, b)) * out.at(f, b);
        }
        const double mean = sum / out.frames;
        const double var = sum_sq / out.frames - mean * mean;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-4));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("spectrogram cache round-trips") {
    const Spectrogram spec = stft_magnitude(sine_clip(440.0));
    const auto path = std::filesystem::temp_directory_path() / "sidlab_spec_test.spec.f32";
    save_spectrogram(path, spec);
    const Spectrogram loaded = load_spectrogram(path, spec.frames, spec.bins);
    CHECK(loaded.values == spec.values);
    std::filesystem::remove(path);
}
