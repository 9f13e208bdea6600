#pragma once

#include <filesystem>
#include <vector>

#include "sidlab/corpus.hpp"

namespace sidlab {

// STFT defaults: 25 ms window, 10 ms hop, 512-point FFT at 16 kHz.
// A 3 s clip maps to 298 frames x 257 bins.
constexpr int kStftWindow = 400;
constexpr int kStftHop = 160;
constexpr int kStftFft = 512;
constexpr int kStftBins = kStftFft / 2 + 1;
constexpr int kStftFrames = 1 + (kClipSamples - kStftWindow) / kStftHop;

struct Spectrogram {
    int frames = 0;
    int bins = 0;
    std::vector<float> values;  // row-major frames x bins, non-negative
    int n_fft = kStftFft;
    int window_length = kStftWindow;
    int hop_length = kStftHop;
    int sample_rate = kSampleRate;

    float& at(int frame, int bin) { return values[static_cast<size_t>(frame) * bins + bin]; }
    float at(int frame, int bin) const { return values[static_cast<size_t>(frame) * bins + bin]; }
};

// Hann-windowed magnitude STFT, one-sided (n_fft/2 + 1 bins), frames starting
// at multiples of hop_length, zero-padded to n_fft. n_fft must be a power of
// two; clip must cover at least one window.
Spectrogram stft_magnitude(const AudioClip& clip, int window_length = kStftWindow,
                           int hop_length = kStftHop, int n_fft = kStftFft);

inline int stft_frame_count(int n_samples, int window_length, int hop_length) {
    return 1 + (n_samples - window_length) / hop_length;
}

// Per-bin moments of log(1+x), computed on the training split only.
struct FeatureStats {
    std::vector<float> mean;
    std::vector<float> var;
};

FeatureStats compute_feature_stats(const std::vector<const Spectrogram*>& train);

// log(1+x) then per-bin standardization. Bins whose training variance falls
// below 1e-6 pass through centered only.
Spectrogram log_compress_and_standardize(const Spectrogram& spec, const FeatureStats& stats);

// Optional on-disk cache, one row-major frames x bins file per clip.
void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram load_spectrogram(const std::filesystem::path& path, int frames, int bins);

}  // namespace sidlab
