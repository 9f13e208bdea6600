#include "sidlab/features.hpp"

#include <cmath>
#include <stdexcept>

#include "sidlab/fft.hpp"
#include "sidlab/io.hpp"

namespace sidlab {

Spectrogram stft_magnitude(const AudioClip& clip, int window_length, int hop_length,
                           int n_fft) {
    if (window_length <= 0 || hop_length <= 0)
        throw std::invalid_argument("window and hop must be positive");
    if (window_length > n_fft)
        throw std::invalid_argument("window_length must be <= n_fft");
    if (hop_length > window_length)
        throw std::invalid_argument("hop_length must be <= window_length");
    if (!is_power_of_two(n_fft))
        throw std::invalid_argument("n_fft must be a power of two");
    if (static_cast<int>(clip.samples.size()) < window_length)
        throw std::invalid_argument("clip shorter than one window");

    Spectrogram out;
    out.frames = stft_frame_count(static_cast<int>(clip.samples.size()), window_length,
                                  hop_length);
    out.bins = n_fft / 2 + 1;
    out.n_fft = n_fft;
    out.window_length = window_length;
    out.hop_length = hop_length;
    out.sample_rate = clip.sample_rate;
    out.values.resize(static_cast<size_t>(out.frames) * out.bins);

    // Periodic Hann window.
    std::vector<double> window(window_length);
    for (int n = 0; n < window_length; ++n)
        window[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / window_length));

    std::vector<std::complex<double>> frame(n_fft);
    for (int f = 0; f < out.frames; ++f) {
        const int start = f * hop_length;
        for (int n = 0; n < window_length; ++n)
            frame[n] = clip.samples[start + n] * window[n];
        for (int n = window_length; n < n_fft; ++n) frame[n] = 0.0;
        fft_inplace(frame, false);
        for (int b = 0; b < out.bins; ++b)
            out.at(f, b) = static_cast<float>(std::abs(frame[b]));
    }
    return out;
}

FeatureStats compute_feature_stats(const std::vector<const Spectrogram*>& train) {
    if (train.empty()) throw std::invalid_argument("empty training split");
    const int bins = train.front()->bins;
    std::vector<double> sum(bins, 0.0), sum_sq(bins, 0.0);
    int64_t count = 0;
    for (const Spectrogram* s : train) {
        if (s->bins != bins) throw std::invalid_argument("bin count mismatch in stats");
        for (int f = 0; f < s->frames; ++f) {
            for (int b = 0; b < bins; ++b) {
                // Magnitudes are non-negative; clamp keeps the transform
                // finite if standardized data is ever fed back through.
                // float log1p so cached and raw feature paths agree bit-exactly.
                const double v =
                    static_cast<double>(std::log1p(std::max(0.0f, s->at(f, b))));
                sum[b] += v;
                sum_sq[b] += v * v;
            }
        }
        count += s->frames;
    }
    FeatureStats stats;
    stats.mean.resize(bins);
    stats.var.resize(bins);
    for (int b = 0; b < bins; ++b) {
        const double m = sum[b] / static_cast<double>(count);
        stats.mean[b] = static_cast<float>(m);
        stats.var[b] = static_cast<float>(std::max(0.0, sum_sq[b] / count - m * m));
    }
    return stats;
}

Spectrogram log_compress_and_standardize(const Spectrogram& spec, const FeatureStats& stats) {
    if (static_cast<int>(stats.mean.size()) != spec.bins)
        throw std::invalid_argument("feature stats bin count mismatch");
    Spectrogram out = spec;
    for (int b = 0; b < spec.bins; ++b) {
        const float mean = stats.mean[b];
        const float inv_std =
            stats.var[b] > 1e-6f ? 1.0f / std::sqrt(stats.var[b]) : 1.0f;
        for (int f = 0; f < spec.frames; ++f)
            out.at(f, b) = (std::log1p(std::max(0.0f, spec.at(f, b))) - mean) * inv_std;
    }
    return out;
}

void save_spectrogram(const std::filesystem::path& path, const Spectrogram& spec) {
    write_f32(path, spec.values);
}

Spectrogram load_spectrogram(const std::filesystem::path& path, int frames, int bins) {
    Spectrogram out;
    out.values = read_f32(path);
    if (out.values.size() != static_cast<size_t>(frames) * bins)
        throw std::runtime_error("spectrogram cache size mismatch: " + path.string());
    out.frames = frames;
    out.bins = bins;
    return out;
}

}  // namespace sidlab
