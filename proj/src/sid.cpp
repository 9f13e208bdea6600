#include "sidlab/sid.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>
#include <thread>

#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"

namespace sidlab {

using nn::Tensor;

namespace {

constexpr uint64_t kTagInit = 0x696e6974;
constexpr uint64_t kTagShuffle = 0x73686671;

int argmax(const std::vector<float>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace

FeatureCache::FeatureCache(const Corpus& corpus, int n_threads)
    : FeatureCache(corpus, nullptr, n_threads) {}

FeatureCache::FeatureCache(const Corpus& corpus,
                           const std::function<AudioClip(const AudioClip&)>& transform,
                           int n_threads) {
    clips_per_speaker_ = corpus.spec.clips_per_speaker;
    const int total = corpus.spec.n_speakers * clips_per_speaker_;
    feats_.resize(total);

    auto worker = [&](std::atomic<int>& next) {
        for (int idx = next.fetch_add(1); idx < total; idx = next.fetch_add(1)) {
            const Spectrogram spec = transform
                                         ? stft_magnitude(transform(corpus.clips[idx]))
                                         : stft_magnitude(corpus.clips[idx]);
            Tensor t({spec.bins, spec.frames});
            for (int f = 0; f < spec.frames; ++f)
                for (int b = 0; b < spec.bins; ++b)
                    t.data[static_cast<size_t>(b) * spec.frames + f] =
                        std::log1p(std::max(0.0f, spec.at(f, b)));
            feats_[idx] = std::move(t);
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
    if (!feats_.empty()) {
        bins_ = feats_[0].shape[0];
        frames_ = feats_[0].shape[1];
    }
}

const Tensor& FeatureCache::log_features(const ClipRef& ref) const {
    return feats_.at(static_cast<size_t>(ref.speaker_id) * clips_per_speaker_ + ref.clip_id);
}

FeatureStats stats_from_cache(const FeatureCache& cache, const std::vector<ClipRef>& refs) {
    if (refs.empty()) throw std::invalid_argument("empty training split");
    const int bins = cache.bins();
    std::vector<double> sum(bins, 0.0), sum_sq(bins, 0.0);
    int64_t count = 0;
    for (const auto& ref : refs) {
        const Tensor& t = cache.log_features(ref);
        const int frames = t.shape[1];
        for (int b = 0; b < bins; ++b) {
            const float* row = t.ptr() + static_cast<size_t>(b) * frames;
            for (int f = 0; f < frames; ++f) {
                const double v = static_cast<double>(row[f]);
                sum[b] += v;
                sum_sq[b] += v * v;
            }
        }
        count += frames;
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

nn::Tensor standardized_features(const FeatureCache& cache, const ClipRef& ref,
                                 const FeatureStats& stats) {
    const Tensor& src = cache.log_features(ref);
    if (static_cast<int>(stats.mean.size()) != src.shape[0])
        throw std::invalid_argument("feature stats bin count mismatch");
    Tensor out(src.shape);
    const int bins = src.shape[0], frames = src.shape[1];
    for (int b = 0; b < bins; ++b) {
        const float mean = stats.mean[b];
        const float inv_std = stats.var[b] > 1e-6f ? 1.0f / std::sqrt(stats.var[b]) : 1.0f;
        const float* in_row = src.ptr() + static_cast<size_t>(b) * frames;
        float* out_row = out.ptr() + static_cast<size_t>(b) * frames;
        for (int f = 0; f < frames; ++f) out_row[f] = (in_row[f] - mean) * inv_std;
    }
    return out;
}

int SidModel::class_of(int speaker_id) const {
    const auto it =
        std::lower_bound(class_speakers.begin(), class_speakers.end(), speaker_id);
    if (it == class_speakers.end() || *it != speaker_id)
        throw std::invalid_argument("speaker " + std::to_string(speaker_id) +
                                    " is not in the model's cohort");
    return static_cast<int>(it - class_speakers.begin());
}

std::pair<SidModel, TrainReport> train_sid(const FeatureCache& cache,
                                           const std::vector<ClipRef>& train_refs,
                                           const std::vector<ClipRef>& eval_refs,
                                           const nn::SidArch& arch,
                                           const SidTrainOptions& options) {
    const auto t_start = std::chrono::steady_clock::now();
    options.config.validate();
    if (train_refs.empty()) throw std::invalid_argument("empty training split");
    if (eval_refs.empty()) throw std::invalid_argument("empty evaluation split");
    if (options.soft_targets && options.soft_targets->size() != train_refs.size())
        throw std::invalid_argument("soft targets do not match training refs");

    std::set<int> speaker_set;
    for (const auto& r : train_refs) speaker_set.insert(r.speaker_id);
    const std::vector<int> class_speakers(speaker_set.begin(), speaker_set.end());
    if (static_cast<int>(class_speakers.size()) != arch.n_classes)
        throw std::invalid_argument("arch n_classes does not match cohort size");

    SidModel model;
    model.arch = arch;
    model.class_speakers = class_speakers;
    model.feature_stats = stats_from_cache(cache, train_refs);

    const int n = static_cast<int>(train_refs.size());
    std::vector<Tensor> feats(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        feats[i] = standardized_features(cache, train_refs[i], model.feature_stats);
        labels[i] = model.class_of(train_refs[i].speaker_id);
    }
    std::vector<Tensor> eval_feats(eval_refs.size());
    std::vector<int> eval_labels(eval_refs.size());
    for (size_t i = 0; i < eval_refs.size(); ++i) {
        eval_feats[i] = standardized_features(cache, eval_refs[i], model.feature_stats);
        eval_labels[i] = model.class_of(eval_refs[i].speaker_id);
    }

    const uint64_t init_seed =
        options.init_seed.value_or(seed_combine(options.config.seed, kTagInit));
    nn::SidNetT<float> net(arch, nn::SidNetT<float>::init_params(arch, init_seed));

    nn::OptState opt_state;
    opt_state.init(net.params());
    nn::GradAccum acc;
    acc.init(net.params());

    std::vector<std::vector<float>> soft;
    if (options.soft_targets) soft = *options.soft_targets;

    Rng shuffle_rng(seed_combine(options.config.seed, kTagShuffle));
    const int batch_size =
        options.config.batch_size == 0 ? n : std::min(options.config.batch_size, n);

    auto exact_accuracy = [&](const std::vector<Tensor>& xs, const std::vector<int>& ys) {
        int correct = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            if (argmax(net.forward(xs[i], false)) == ys[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(xs.size());
    };

    TrainReport report;
    report.init_seed = init_seed;
    report.train_seed = options.config.seed;

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::vector<float> dlogits;
    double initial_loss = -1.0;
    bool stopped = false;

    for (int epoch = 1; epoch <= options.config.max_epochs && !stopped; ++epoch) {
        shuffle_rng.shuffle(order);
        int running_correct = 0;
        double epoch_loss = 0.0;
        int64_t loss_terms = 0;

        for (int start = 0; start < n; start += batch_size) {
            const int end = std::min(start + batch_size, n);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            if (options.pre_batch) {
                SidTrainOptions::HookContext ctx;
                ctx.batch = &batch;
                ctx.train_logits = [&](int idx) { return net.forward(feats[idx], false); };
                ctx.forward = [&](const Tensor& x) { return net.forward(x, false); };
                options.pre_batch(ctx);
            }

            acc.zero();
            for (int idx : batch) {
                const auto logits = net.forward(feats[idx], true);
                float loss;
                if (options.soft_targets)
                    loss = nn::ce_soft_loss_grad(logits, soft[idx], options.loss_temperature,
                                                 dlogits);
                else
                    loss = nn::ce_hard_loss_grad(logits, labels[idx],
                                                 options.loss_temperature, dlogits);
                if (argmax(logits) == labels[idx]) ++running_correct;
                if (options.grad_hook) options.grad_hook(idx, logits, dlogits);
                net.backward(dlogits, acc);
                epoch_loss += loss;
                ++loss_terms;
            }
            const auto grads = acc.finalize(net.params(), 1.0 / (end - start),
                                            options.config.l2_alpha);
            nn::optimizer_step(net.params(), grads, opt_state, options.config);
        }

        const double mean_loss = epoch_loss / static_cast<double>(loss_terms);
        if (initial_loss < 0.0) initial_loss = mean_loss;
        if (options.divergence_factor > 0.0 && initial_loss > 0.0 &&
            mean_loss > options.divergence_factor * initial_loss)
            throw std::runtime_error("training diverged: loss exceeded guard");

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = mean_loss;
        stats.train_acc = static_cast<double>(running_correct) / n;
        stats.eval_acc = exact_accuracy(eval_feats, eval_labels);
        report.epochs.push_back(stats);

        if (stats.train_acc >= options.config.early_stop_train_acc &&
            exact_accuracy(feats, labels) >= options.config.early_stop_train_acc)
            stopped = true;
    }

    report.final_train_acc = exact_accuracy(feats, labels);
    report.final_eval_acc = exact_accuracy(eval_feats, eval_labels);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    model.params = std::move(net.params());
    return {std::move(model), std::move(report)};
}

SidPredictor::SidPredictor(const SidModel& model)
    : model_(model), net_(model.arch, model.params) {}

std::vector<float> SidPredictor::posteriors(const Tensor& standardized) {
    const auto logits = net_.forward(standardized, false);
    return nn::softmax_t(logits, model_.serving_temperature);
}

std::vector<float> SidPredictor::posteriors(const FeatureCache& cache, const ClipRef& ref) {
    return posteriors(standardized_features(cache, ref, model_.feature_stats));
}

std::vector<float> predict_posteriors_features(const SidModel& model, const Tensor& x) {
    SidPredictor predictor(model);
    return predictor.posteriors(x);
}

std::vector<float> predict_posteriors(const SidModel& model, const AudioClip& clip) {
    if (static_cast<int>(clip.samples.size()) != kClipSamples)
        throw std::invalid_argument("clip must be exactly 3 s at 16 kHz");
    for (float v : clip.samples)
        if (std::fabs(v) > 1.0f)
            throw std::invalid_argument("clip violates peak normalization");
    const Spectrogram spec = stft_magnitude(clip);
    const Spectrogram std_spec = log_compress_and_standardize(spec, model.feature_stats);
    Tensor x({std_spec.bins, std_spec.frames});
    for (int f = 0; f < std_spec.frames; ++f)
        for (int b = 0; b < std_spec.bins; ++b)
            x.data[static_cast<size_t>(b) * std_spec.frames + f] = std_spec.at(f, b);
    return predict_posteriors_features(model, x);
}

std::vector<float> predict_posteriors_cached(const SidModel& model, const FeatureCache& cache,
                                             const ClipRef& ref) {
    return predict_posteriors_features(
        model, standardized_features(cache, ref, model.feature_stats));
}

namespace {

template <class PosteriorFn>
double accuracy_over(const SidModel& model, const std::vector<ClipRef>& refs,
                     PosteriorFn posterior) {
    if (refs.empty()) throw std::invalid_argument("empty clip set");
    int correct = 0;
    for (const auto& ref : refs) {
        const int cls = model.class_of(ref.speaker_id);
        const auto p = posterior(ref);
        if (argmax(p) == cls) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(refs.size());
}

}  // namespace

double evaluate_sid(const SidModel& model, const Corpus& corpus,
                    const std::vector<ClipRef>& refs) {
    return accuracy_over(model, refs, [&](const ClipRef& r) {
        return predict_posteriors(model, corpus.clip(r));
    });
}

double evaluate_sid_cached(const SidModel& model, const FeatureCache& cache,
                           const std::vector<ClipRef>& refs) {
    SidPredictor predictor(model);
    return accuracy_over(model, refs,
                         [&](const ClipRef& r) { return predictor.posteriors(cache, r); });
}

void save_sid_model(const SidModel& model, const nlohmann::json& train_config,
                    const std::filesystem::path& dir) {
    Checkpoint ckpt;
    ckpt.kind = "sid";
    ckpt.arch = model.arch.to_json();
    ckpt.train_config = train_config;
    ckpt.extra = {{"serving_temperature", model.serving_temperature},
                  {"defense", model.defense}};
    ckpt.params = model.params;
    ckpt.aux.emplace_back("feature_mean", model.feature_stats.mean);
    ckpt.aux.emplace_back("feature_var", model.feature_stats.var);
    save_checkpoint(ckpt, dir);
    write_text(dir / "class_map.json",
               nlohmann::json{{"class_speakers", model.class_speakers}}.dump(2) + "\n");
}

SidModel load_sid_model(const std::filesystem::path& dir) {
    Checkpoint ckpt = load_checkpoint(dir);
    if (ckpt.kind != "sid") throw std::runtime_error("checkpoint is not a sid model");
    SidModel model;
    model.arch = nn::SidArch::from_json(ckpt.arch);
    model.params = std::move(ckpt.params);
    model.serving_temperature = ckpt.extra.at("serving_temperature").get<double>();
    model.defense = ckpt.extra.value("defense", nlohmann::json::object());
    for (auto& [name, data] : ckpt.aux) {
        if (name == "feature_mean") model.feature_stats.mean = data;
        if (name == "feature_var") model.feature_stats.var = data;
    }
    const auto cm = nlohmann::json::parse(read_text(dir / "class_map.json"));
    model.class_speakers = cm.at("class_speakers").get<std::vector<int>>();
    if (model.class_speakers.size() != static_cast<size_t>(model.arch.n_classes))
        throw std::runtime_error("class map does not match architecture");
    return model;
}

}  // namespace sidlab
