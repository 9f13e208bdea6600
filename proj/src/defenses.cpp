#include "sidlab/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "sidlab/rng.hpp"

namespace sidlab {

using nn::Tensor;

// Adversarial regularization -----------------------------------------------------

void AdvRegConfig::validate() const {
    if (privacy_lambda < 0.0) throw std::invalid_argument("privacy_lambda must be >= 0");
    if (inner_attack_steps < 1)
        throw std::invalid_argument("inner_attack_steps must be >= 1");
    if (!(reference_fraction > 0.0) || reference_fraction > 0.5)
        throw std::invalid_argument("reference_fraction must be in (0, 0.5]");
}

std::vector<float> advreg_gain_dlogits(nn::MlpNetT<float>& head,
                                       const std::vector<float>& logits,
                                       double privacy_lambda) {
    const std::vector<float> p = nn::softmax_t(logits, 1.0);
    // top-3 indices, descending probability
    std::vector<int> idx(p.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + 3, idx.end(),
                      [&](int a, int b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
    const std::vector<float> feat = {p[idx[0]], p[idx[1]], p[idx[2]]};

    const float u = head.forward(feat, true);
    const float s = nn::sigmoid(u);
    nn::GradAccum scratch;
    scratch.init(head.params());
    const std::vector<float> dfeat = head.backward(1.0f, scratch, true);

    const double du = privacy_lambda * (1.0 - static_cast<double>(s));  // d(lambda log s)/du
    std::vector<float> dposterior(p.size(), 0.0f);
    for (int k = 0; k < 3; ++k)
        dposterior[idx[k]] = static_cast<float>(du * static_cast<double>(dfeat[k]));
    return nn::softmax_t_backward(p, dposterior, 1.0);
}

std::pair<SidModel, TrainReport> train_adversarially_regularized(
    const FeatureCache& cache, const std::vector<ClipRef>& train_refs,
    const std::vector<ClipRef>& eval_refs, const std::vector<ClipRef>& reference_refs,
    const nn::SidArch& arch, const AdvRegConfig& config, const nn::TrainConfig& base) {
    config.validate();
    base.validate();

    SidTrainOptions options;
    options.config = base;
    options.divergence_factor = 10.0;

    // Inference head state shared by the hooks. Its RNG streams are separate
    // from the classifier's, so the classifier trajectory at lambda=0 matches
    // plain train_sid bit for bit.
    struct HeadState {
        nn::MlpNetT<float> net;
        nn::OptState opt;
        nn::GradAccum acc;
        nn::TrainConfig cfg;
        std::vector<Tensor> reference_feats;
        std::vector<int> ref_order;
        size_t ref_cursor = 0;
        Rng ref_rng;
        int steps;

        HeadState(uint64_t seed, int inner_steps)
            : net(nn::attack_arch(),
                  nn::MlpNetT<float>::init_params(nn::attack_arch(),
                                                  seed_combine(seed, 0x686561))),
              ref_rng(seed_combine(seed, 0x687266)),
              steps(inner_steps) {
            opt.init(net.params());
            acc.init(net.params());
            // A laggy head: it should track the shifting posterior geometry,
            // not pin it down, or even small lambdas flatten everything.
            cfg.learning_rate = 1e-4;
            cfg.optimizer = nn::OptimizerKind::adam;
        }
    };

    auto head = std::make_shared<HeadState>(base.seed, config.inner_attack_steps);

    if (config.privacy_lambda > 0.0) {
        if (reference_refs.empty())
            throw std::invalid_argument("adversarial regularization needs a reference pool");
        // Reference features standardized exactly like the trainer's own.
        const FeatureStats stats = stats_from_cache(cache, train_refs);
        for (const auto& ref : reference_refs)
            head->reference_feats.push_back(standardized_features(cache, ref, stats));
        head->ref_order.resize(head->reference_feats.size());
        std::iota(head->ref_order.begin(), head->ref_order.end(), 0);
        head->ref_rng.shuffle(head->ref_order);

        const double lambda = config.privacy_lambda;
        options.pre_batch = [head](const SidTrainOptions::HookContext& ctx) {
            // GAN-style alternation: the head trains on minibatches, not on
            // the whole pool, so it tracks rather than dominates.
            constexpr size_t kHeadBatch = 32;
            std::vector<std::vector<float>> member_feats;
            for (int idx : *ctx.batch) {
                if (member_feats.size() >= kHeadBatch) break;
                const auto p = nn::softmax_t(ctx.train_logits(idx), 1.0);
                const AttackFeature f = extract_attack_feature(p);
                member_feats.push_back({f.p[0], f.p[1], f.p[2]});
            }
            // Reference minibatch of the same size, cycling a shuffled order.
            std::vector<std::vector<float>> ref_feats;
            for (size_t i = 0; i < member_feats.size(); ++i) {
                if (head->ref_cursor >= head->ref_order.size()) {
                    head->ref_rng.shuffle(head->ref_order);
                    head->ref_cursor = 0;
                }
                const Tensor& x = head->reference_feats[head->ref_order[head->ref_cursor++]];
                const auto p = nn::softmax_t(ctx.forward(x), 1.0);
                const AttackFeature f = extract_attack_feature(p);
                ref_feats.push_back({f.p[0], f.p[1], f.p[2]});
            }
            // Head maximizes mean log h(member) + mean log(1 - h(reference)):
            // BCE with member=1, reference=0.
            nn::MlpBatch<float> hb;
            for (const auto& f : member_feats) {
                hb.inputs.push_back(&f);
                hb.targets.push_back(1.0f);
            }
            for (const auto& f : ref_feats) {
                hb.inputs.push_back(&f);
                hb.targets.push_back(0.0f);
            }
            std::vector<Tensor> grads;
            for (int step = 0; step < head->steps; ++step) {
                nn::mlp_loss_and_grads(head->net, hb, 0.0, grads);
                nn::optimizer_step(head->net.params(), grads, head->opt, head->cfg);
            }
        };
        options.grad_hook = [head, lambda](int, const std::vector<float>& logits,
                                           std::vector<float>& dlogits) {
            const auto extra = advreg_gain_dlogits(head->net, logits, lambda);
            for (size_t i = 0; i < dlogits.size(); ++i) dlogits[i] += extra[i];
        };
    }

    auto [model, report] = train_sid(cache, train_refs, eval_refs, arch, options);
    model.defense = {{"kind", "advreg"},
                     {"privacy_lambda", config.privacy_lambda},
                     {"inner_attack_steps", config.inner_attack_steps},
                     {"reference_fraction", config.reference_fraction}};
    return {std::move(model), std::move(report)};
}

// Prediction obfuscation -------------------------------------------------------------

std::string ObfuscationConfig::to_string() const {
    switch (mode) {
        case Mode::full: return "full";
        case Mode::rank: return "rank";
        default: return "topk:" + std::to_string(k);
    }
}

ObfuscationConfig ObfuscationConfig::parse(const std::string& text) {
    ObfuscationConfig c;
    if (text == "full") {
        c.mode = Mode::full;
    } else if (text == "rank") {
        c.mode = Mode::rank;
    } else if (text.rfind("topk:", 0) == 0) {
        c.mode = Mode::topk;
        c.k = std::stoi(text.substr(5));
    } else {
        throw std::invalid_argument("unknown obfuscation mode: " + text);
    }
    return c;
}

ObfuscatedOutput obfuscate(const std::vector<float>& posterior,
                           const ObfuscationConfig& config) {
    if (posterior.empty()) throw std::invalid_argument("empty posterior");
    ObfuscatedOutput out;
    out.mode = config.mode;
    const int n = static_cast<int>(posterior.size());
    switch (config.mode) {
        case ObfuscationConfig::Mode::full:
            out.posteriors = posterior;
            break;
        case ObfuscationConfig::Mode::topk: {
            if (config.k < 1 || config.k >= n)
                throw std::invalid_argument("topk k must satisfy 1 <= k < n_classes");
            std::vector<int> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return posterior[a] > posterior[b];
            });
            for (int i = 0; i < config.k; ++i)
                out.topk.emplace_back(idx[i], posterior[idx[i]]);
            break;
        }
        case ObfuscationConfig::Mode::rank: {
            std::vector<int> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return posterior[a] > posterior[b];
            });
            out.ranks.assign(n, 0);
            for (int r = 0; r < n; ++r) out.ranks[idx[r]] = r + 1;
            break;
        }
    }
    return out;
}

AttackFeature feature_from_obfuscated(const ObfuscatedOutput& output) {
    AttackFeature f;
    switch (output.mode) {
        case ObfuscationConfig::Mode::full:
            return extract_attack_feature(output.posteriors);
        case ObfuscationConfig::Mode::topk: {
            for (size_t i = 0; i < 3 && i < output.topk.size(); ++i)
                f.p[i] = output.topk[i].second;
            return f;  // zero-padded
        }
        case ObfuscationConfig::Mode::rank:
        default:
            return f;  // ranks carry no probability information: constant feature
    }
}

// Distillation --------------------------------------------------------------------------

void DistillConfig::validate() const {
    if (temperature < 1.0) throw std::invalid_argument("temperature must be >= 1");
    teacher_config.validate();
    student_config.validate();
}

std::pair<SidModel, TrainReport> train_distilled(const FeatureCache& cache,
                                                 const std::vector<ClipRef>& train_refs,
                                                 const std::vector<ClipRef>& eval_refs,
                                                 const nn::SidArch& arch,
                                                 const DistillConfig& config) {
    config.validate();
    const double T = config.temperature;

    SidTrainOptions teacher_options;
    teacher_options.config = config.teacher_config;
    teacher_options.loss_temperature = T;
    auto [teacher, teacher_report] = train_sid(cache, train_refs, eval_refs, arch,
                                               teacher_options);
    // With early stopping disabled the gate falls back to the standard mark.
    const double teacher_gate =
        std::min(config.teacher_config.early_stop_train_acc, 0.995);
    if (teacher_report.final_train_acc < teacher_gate)
        throw std::runtime_error("distillation teacher failed to reach early-stop accuracy");

    // Soft labels: teacher posteriors at temperature T on the training set.
    std::vector<std::vector<float>> soft_targets;
    soft_targets.reserve(train_refs.size());
    {
        nn::SidNetT<float> teacher_net(teacher.arch, teacher.params);
        for (const auto& ref : train_refs) {
            const Tensor x = standardized_features(cache, ref, teacher.feature_stats);
            soft_targets.push_back(nn::softmax_t(teacher_net.forward(x, false), T));
        }
    }

    SidTrainOptions student_options;
    student_options.config = config.student_config;
    student_options.loss_temperature = T;
    student_options.soft_targets = &soft_targets;
    auto [student, student_report] = train_sid(cache, train_refs, eval_refs, arch,
                                               student_options);
    student.serving_temperature = config.serve_softened ? T : 1.0;
    student.defense = {{"kind", "distill"},
                       {"temperature", T},
                       {"serve_softened", config.serve_softened}};
    return {std::move(student), std::move(student_report)};
}

// Model key ------------------------------------------------------------------------------

void KeyConfig::validate() const {
    if (!(noise_amplitude > 0.0))
        throw std::invalid_argument("noise_amplitude must be > 0");
    detector_config.validate();
}

AudioClip apply_key(const AudioClip& clip, double amplitude, uint64_t sample_seed) {
    if (!(amplitude > 0.0)) throw std::invalid_argument("noise_amplitude must be > 0");
    AudioClip out = clip;
    Rng rng(sample_seed);
    float peak = 0.0f;
    for (auto& v : out.samples) {
        v = static_cast<float>(v + amplitude * rng.next_u01());
        peak = std::max(peak, std::fabs(v));
    }
    if (peak > 0.0f)
        for (auto& v : out.samples) v /= peak;
    return out;
}

uint64_t key_noise_seed(const KeyConfig& config, const ClipRef& ref) {
    return seed_combine(config.key_seed,
                        static_cast<uint64_t>(ref.speaker_id) * 1000003ULL +
                            static_cast<uint64_t>(ref.clip_id));
}

namespace {

// Mean over frames of the cached log spectrogram: the detector's input.
std::vector<float> pooled_feature(const FeatureCache& cache, const ClipRef& ref) {
    const Tensor& t = cache.log_features(ref);
    const int bins = t.shape[0], frames = t.shape[1];
    std::vector<float> out(bins);
    for (int b = 0; b < bins; ++b) {
        const float* row = t.ptr() + static_cast<size_t>(b) * frames;
        double acc = 0.0;
        for (int f = 0; f < frames; ++f) acc += static_cast<double>(row[f]);
        out[b] = static_cast<float>(acc / frames);
    }
    return out;
}

std::vector<float> pooled_feature_from_clip(const AudioClip& clip) {
    const Spectrogram spec = stft_magnitude(clip);
    std::vector<float> out(spec.bins);
    for (int b = 0; b < spec.bins; ++b) {
        double acc = 0.0;
        for (int f = 0; f < spec.frames; ++f)
            acc += static_cast<double>(std::log1p(std::max(0.0f, spec.at(f, b))));
        out[b] = static_cast<float>(acc / spec.frames);
    }
    return out;
}

FeatureStats pooled_stats(const std::vector<std::vector<float>>& feats) {
    const int bins = static_cast<int>(feats.front().size());
    FeatureStats stats;
    stats.mean.resize(bins);
    stats.var.resize(bins);
    for (int b = 0; b < bins; ++b) {
        double sum = 0.0, sum_sq = 0.0;
        for (const auto& f : feats) {
            sum += f[b];
            sum_sq += static_cast<double>(f[b]) * f[b];
        }
        const double m = sum / feats.size();
        stats.mean[b] = static_cast<float>(m);
        stats.var[b] = static_cast<float>(std::max(0.0, sum_sq / feats.size() - m * m));
    }
    return stats;
}

std::vector<float> standardize_pooled(const std::vector<float>& feat,
                                      const FeatureStats& stats) {
    std::vector<float> out(feat.size());
    for (size_t b = 0; b < feat.size(); ++b) {
        const float inv_std = stats.var[b] > 1e-6f ? 1.0f / std::sqrt(stats.var[b]) : 1.0f;
        out[b] = (feat[b] - stats.mean[b]) * inv_std;
    }
    return out;
}

}  // namespace

double NoiseDetector::keyed_score(const AudioClip& clip) const {
    nn::MlpNetT<float> net(arch, params);
    const auto x = standardize_pooled(pooled_feature_from_clip(clip), stats);
    return static_cast<double>(nn::sigmoid(net.forward(x, false)));
}

KeyedModel train_keyed(const Corpus& corpus, const FeatureCache& keyed_cache,
                       const FeatureCache& clean_cache,
                       const std::vector<ClipRef>& train_refs,
                       const std::vector<ClipRef>& eval_refs, const nn::SidArch& arch,
                       const KeyConfig& config, const nn::TrainConfig& base) {
    (void)corpus;
    config.validate();
    base.validate();

    // SID model sees keyed inputs only.
    SidTrainOptions options;
    options.config = base;
    auto [model, report] = train_sid(keyed_cache, train_refs, eval_refs, arch, options);
    model.defense = {{"kind", "key"},
                     {"noise_amplitude", config.noise_amplitude},
                     {"key_seed", config.key_seed}};

    // Detector: keyed vs clean over mean-pooled log spectra, 50/50 by
    // construction (each clip contributes both versions).
    std::vector<std::vector<float>> train_feats;
    std::vector<float> train_labels;
    for (const auto& ref : train_refs) {
        train_feats.push_back(pooled_feature(keyed_cache, ref));
        train_labels.push_back(1.0f);
        train_feats.push_back(pooled_feature(clean_cache, ref));
        train_labels.push_back(0.0f);
    }

    NoiseDetector detector;
    detector.arch = nn::detector_arch(keyed_cache.bins());
    detector.stats = pooled_stats(train_feats);
    for (auto& f : train_feats) f = standardize_pooled(f, detector.stats);

    nn::MlpNetT<float> net(detector.arch,
                           nn::MlpNetT<float>::init_params(
                               detector.arch, seed_combine(config.detector_config.seed,
                                                           0x646574)));
    nn::OptState opt;
    opt.init(net.params());
    nn::GradAccum acc;
    acc.init(net.params());
    const nn::TrainConfig& dcfg = config.detector_config;
    const int n = static_cast<int>(train_feats.size());
    const int batch_size = dcfg.batch_size == 0 ? n : std::min(dcfg.batch_size, n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(seed_combine(dcfg.seed, 0x646573));
    for (int epoch = 1; epoch <= dcfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        int correct = 0;
        for (int start = 0; start < n; start += batch_size) {
            const int end = std::min(start + batch_size, n);
            acc.zero();
            for (int k = start; k < end; ++k) {
                const int idx = order[k];
                const float logit = net.forward(train_feats[idx], true);
                float dlogit;
                nn::bce_loss_grad(logit, train_labels[idx], dlogit);
                if ((nn::sigmoid(logit) >= 0.5f) == (train_labels[idx] >= 0.5f)) ++correct;
                net.backward(dlogit, acc);
            }
            const auto grads = acc.finalize(net.params(), 1.0 / (end - start), dcfg.l2_alpha);
            nn::optimizer_step(net.params(), grads, opt, dcfg);
        }
        if (static_cast<double>(correct) / n >= dcfg.early_stop_train_acc) break;
    }
    detector.params = std::move(net.params());

    // Validation on held-out clips, keyed and clean.
    nn::MlpNetT<float> vnet(detector.arch, detector.params);
    int correct = 0;
    for (const auto& ref : eval_refs) {
        const auto keyed =
            standardize_pooled(pooled_feature(keyed_cache, ref), detector.stats);
        const auto clean =
            standardize_pooled(pooled_feature(clean_cache, ref), detector.stats);
        if (nn::sigmoid(vnet.forward(keyed, false)) >= 0.5f) ++correct;
        if (nn::sigmoid(vnet.forward(clean, false)) < 0.5f) ++correct;
    }
    detector.validation_accuracy =
        static_cast<double>(correct) / (2.0 * static_cast<double>(eval_refs.size()));
    if (detector.validation_accuracy < config.min_detector_accuracy)
        throw std::runtime_error("key configuration rejected: detector accuracy " +
                                 std::to_string(detector.validation_accuracy));

    KeyedModel out;
    out.model = std::move(model);
    out.detector = std::move(detector);
    out.report = std::move(report);
    out.noise_amplitude = config.noise_amplitude;
    out.key_seed = config.key_seed;
    return out;
}

std::vector<float> random_simplex_posterior(int n_classes, uint64_t query_seed) {
    Rng rng(seed_combine(query_seed, 0x73696d70));
    std::vector<float> p(n_classes);
    double sum = 0.0;
    for (auto& v : p) {
        double u = rng.next_u01();
        while (u <= 0.0) u = rng.next_u01();
        const double e = -std::log(u);
        v = static_cast<float>(e);
        sum += e;
    }
    for (auto& v : p) v = static_cast<float>(static_cast<double>(v) / sum);
    return p;
}

std::vector<float> keyed_predict(const SidModel& model, const NoiseDetector& detector,
                                 const AudioClip& clip, uint64_t query_seed) {
    if (detector.keyed_score(clip) >= 0.5)
        return predict_posteriors(model, clip);
    return random_simplex_posterior(model.n_classes(), query_seed);
}

}  // namespace sidlab
