#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sidlab/defenses.hpp"
#include "sidlab/rng.hpp"

using namespace sidlab;
using sidlab::testing::MiniPipeline;
using sidlab::testing::mini_arch;
using sidlab::testing::mini_spec;
using sidlab::testing::mini_train_config;

namespace {

const MiniPipeline& pipeline() {
    static MiniPipeline p(mini_spec(Condition::clean, 771));
    return p;
}

struct TargetRefs {
    std::vector<ClipRef> train, eval, reference;
};

TargetRefs target_refs() {
    const auto& p = pipeline();
    TargetRefs refs;
    refs.train = p.plan.cohort_refs(p.plan.target_speakers, &SpeakerSplit::in_train);
    refs.eval = p.plan.cohort_refs(p.plan.target_speakers, &SpeakerSplit::in_eval);
    refs.reference = p.plan.defender_reference(0.5);  // mini corpus: 2 per speaker
    return refs;
}

}  // namespace

// Obfuscation -----------------------------------------------------------------

TEST_CASE("obfuscate: rank, topk, full") {
    const std::vector<float> posterior = {0.2f, 0.5f, 0.3f};

    const auto rank = obfuscate(posterior, ObfuscationConfig{ObfuscationConfig::Mode::rank, 3});
    CHECK(rank.ranks == std::vector<int>{3, 1, 2});
    CHECK(rank.posteriors.empty());
    CHECK(rank.topk.empty());

    const auto topk = obfuscate(posterior, ObfuscationConfig{ObfuscationConfig::Mode::topk, 2});
    REQUIRE(topk.topk.size() == 2);
    CHECK(topk.topk[0] == std::pair<int, float>{1, 0.5f});
    CHECK(topk.topk[1] == std::pair<int, float>{2, 0.3f});
    float sum = 0.0f;
    for (const auto& [cls, p] : topk.topk) sum += p;
    CHECK(sum <= 1.0f + 1e-6f);

    const auto full = obfuscate(posterior, ObfuscationConfig{});
    CHECK(full.posteriors == posterior);

    CHECK_THROWS(obfuscate(posterior, ObfuscationConfig{ObfuscationConfig::Mode::topk, 0}));
    CHECK_THROWS(obfuscate(posterior, ObfuscationConfig{ObfuscationConfig::Mode::topk, 3}));
}

TEST_CASE("rank output is a permutation, invariant under monotone transforms") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4 + static_cast<int>(rng.next_below(8));
        std::vector<float> posterior(n);
        double sum = 0.0;
        for (auto& v : posterior) {
            v = static_cast<float>(rng.next_u01() + 1e-4);
            sum += v;
        }
        for (auto& v : posterior) v = static_cast<float>(v / sum);

        const ObfuscationConfig cfg{ObfuscationConfig::Mode::rank, 1};
        const auto ranks = obfuscate(posterior, cfg).ranks;
        std::vector<int> sorted = ranks;
        std::sort(sorted.begin(), sorted.end());
        for (int r = 0; r < n; ++r) CHECK(sorted[r] == r + 1);

        // strictly increasing transform of the underlying scores
        std::vector<float> squashed(n);
        for (int i = 0; i < n; ++i) squashed[i] = std::tanh(3.0f * posterior[i]);
        CHECK(obfuscate(squashed, cfg).ranks == ranks);
    }
}

TEST_CASE("feature_from_obfuscated: padding and constant features") {
    const std::vector<float> posterior = {0.5f, 0.3f, 0.15f, 0.05f};

    const auto full = feature_from_obfuscated(obfuscate(posterior, ObfuscationConfig{}));
    CHECK(full.p == std::array<float, 3>{0.5f, 0.3f, 0.15f});

    const auto top2 = feature_from_obfuscated(
        obfuscate(posterior, ObfuscationConfig{ObfuscationConfig::Mode::topk, 2}));
    CHECK(top2.p == std::array<float, 3>{0.5f, 0.3f, 0.0f});

    const auto rank = feature_from_obfuscated(
        obfuscate(posterior, ObfuscationConfig{ObfuscationConfig::Mode::rank, 1}));
    CHECK(rank.p == std::array<float, 3>{0.0f, 0.0f, 0.0f});
}

TEST_CASE("obfuscation config parses and round-trips") {
    CHECK(ObfuscationConfig::parse("full").mode == ObfuscationConfig::Mode::full);
    CHECK(ObfuscationConfig::parse("rank").mode == ObfuscationConfig::Mode::rank);
    const auto topk = ObfuscationConfig::parse("topk:5");
    CHECK(topk.mode == ObfuscationConfig::Mode::topk);
    CHECK(topk.k == 5);
    CHECK(topk.to_string() == "topk:5");
    CHECK_THROWS(ObfuscationConfig::parse("bogus"));
}

// Adversarial regularization -----------------------------------------------------

TEST_CASE("lambda=0 training is bit-identical to the baseline") {
    const auto& p = pipeline();
    const auto refs = target_refs();
    const auto arch = mini_arch(4);

    SidTrainOptions base_options;
    base_options.config = mini_train_config(17, 40);
    const auto [baseline, baseline_report] =
        train_sid(p.cache, refs.train, refs.eval, arch, base_options);

    AdvRegConfig cfg;
    cfg.privacy_lambda = 0.0;
    const auto [advreg, advreg_report] = train_adversarially_regularized(
        p.cache, refs.train, refs.eval, refs.reference, arch, cfg,
        mini_train_config(17, 40));

    for (size_t i = 0; i < baseline.params.tensors.size(); ++i)
        CHECK(advreg.params.tensors[i].data == baseline.params.tensors[i].data);
}

TEST_CASE("a constant inference head contributes exactly zero gradient") {
    const nn::MlpArch arch = nn::attack_arch();
    nn::ParamSet zero_params = nn::MlpNetT<float>::init_params(arch, 3);
    for (auto& t : zero_params.tensors)
        for (auto& v : t.data) v = 0.0f;
    nn::MlpNetT<float> head(arch, std::move(zero_params));

    const std::vector<float> logits = {1.5f, -0.5f, 0.25f, 2.0f};
    const auto extra = advreg_gain_dlogits(head, logits, 3.0);
    for (float v : extra) CHECK(std::fabs(v) <= 1e-6f);
}

TEST_CASE("adversarial regularization trains and records its config") {
    const auto& p = pipeline();
    const auto refs = target_refs();
    AdvRegConfig cfg;
    cfg.privacy_lambda = 2.0;
    cfg.inner_attack_steps = 2;
    const auto [model, report] = train_adversarially_regularized(
        p.cache, refs.train, refs.eval, refs.reference, mini_arch(4), cfg,
        mini_train_config(23, 30));
    CHECK(model.defense.at("kind") == "advreg");
    CHECK(model.defense.at("privacy_lambda").get<double>() == 2.0);
    CHECK(report.final_train_acc > 0.25);

    AdvRegConfig bad = cfg;
    bad.reference_fraction = 0.0;
    CHECK_THROWS(bad.validate());
    CHECK_THROWS(train_adversarially_regularized(p.cache, refs.train, refs.eval, {},
                                                 mini_arch(4), cfg, mini_train_config(1, 5)));
}

// Distillation ----------------------------------------------------------------------

TEST_CASE("distillation: student fits soft labels; serving temperature set") {
    const auto& p = pipeline();
    const auto refs = target_refs();
    DistillConfig cfg;
    cfg.temperature = 20.0;
    cfg.teacher_config = mini_train_config(31, 80);
    cfg.teacher_config.early_stop_train_acc = 0.9;  // mini-scale teacher gate
    cfg.student_config = mini_train_config(32, 400);
    const auto arch = mini_arch(4);
    const auto [student, report] = train_distilled(p.cache, refs.train, refs.eval, arch, cfg);
    CHECK(student.serving_temperature == 20.0);
    CHECK(student.defense.at("kind") == "distill");

    // soft-label cross-entropy of the student stays within 1e-3 of the
    // entropy floor (the teacher's own posteriors against themselves).
    SidTrainOptions teacher_options;
    teacher_options.config = cfg.teacher_config;
    teacher_options.loss_temperature = cfg.temperature;
    const auto [teacher, teacher_report] =
        train_sid(p.cache, refs.train, refs.eval, arch, teacher_options);

    nn::SidNetT<float> teacher_net(teacher.arch, teacher.params);
    nn::SidNetT<float> student_net(student.arch, student.params);
    double student_loss = 0.0, floor_loss = 0.0;
    for (const auto& ref : refs.train) {
        const auto x = standardized_features(p.cache, ref, teacher.feature_stats);
        const auto q = nn::softmax_t(teacher_net.forward(x, false), cfg.temperature);
        const auto ps =
            nn::softmax_t(student_net.forward(
                              standardized_features(p.cache, ref, student.feature_stats), false),
                          cfg.temperature);
        for (size_t c = 0; c < q.size(); ++c) {
            floor_loss -= q[c] * std::log(std::max(1e-12, static_cast<double>(q[c])));
            student_loss -= q[c] * std::log(std::max(1e-12, static_cast<double>(ps[c])));
        }
    }
    student_loss /= refs.train.size();
    floor_loss /= refs.train.size();
    CHECK(student_loss <= floor_loss + 1e-3);
}

TEST_CASE("distillation rejects a teacher that missed its accuracy gate") {
    const auto& p = pipeline();
    const auto refs = target_refs();
    DistillConfig cfg;
    cfg.temperature = 5.0;
    cfg.teacher_config = mini_train_config(31, 1);  // one epoch cannot fit
    cfg.teacher_config.early_stop_train_acc = 0.995;
    cfg.student_config = mini_train_config(32, 1);
    CHECK_THROWS(train_distilled(p.cache, refs.train, refs.eval, mini_arch(4), cfg));

    DistillConfig bad;
    bad.temperature = 0.5;
    CHECK_THROWS(bad.validate());
}

// Model key -----------------------------------------------------------------------

TEST_CASE("apply_key is deterministic, renormalized, and rejects amplitude 0") {
    const auto& p = pipeline();
    const AudioClip& clip = p.corpus.clip(0, 0);
    const AudioClip a = apply_key(clip, 0.5, 99);
    const AudioClip b = apply_key(clip, 0.5, 99);
    CHECK(a.samples == b.samples);
    CHECK(a.samples != clip.samples);
    float peak = 0.0f;
    for (float v : a.samples) peak = std::max(peak, std::fabs(v));
    CHECK(peak <= 1.0f);

    CHECK_THROWS(apply_key(clip, 0.0, 1));
    KeyConfig bad;
    bad.noise_amplitude = 0.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("random simplex posteriors are symmetric across classes") {
    std::vector<int> counts(4, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto p = random_simplex_posterior(4, 1000 + i);
        double sum = 0.0;
        for (float v : p) {
            CHECK(v >= 0.0f);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-6);
        counts[std::max_element(p.begin(), p.end()) - p.begin()]++;
    }
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (int c = 0; c < 4; ++c)
        CHECK(std::fabs(counts[c] - n / 4.0) <= 3.0 * sigma);
}

TEST_CASE("keyed model: detector gates the response path") {
    const auto& p = pipeline();
    const auto refs = target_refs();
    KeyConfig cfg;
    cfg.noise_amplitude = 0.5;
    cfg.detector_config = mini_train_config(41, 30);
    cfg.key_seed = 7000;

    const FeatureCache keyed_cache(
        p.corpus,
        [&](const AudioClip& clip) {
            return apply_key(clip, cfg.noise_amplitude,
                             key_noise_seed(cfg, {clip.speaker_id, clip.clip_id}));
        },
        2);
    const KeyedModel keyed = train_keyed(p.corpus, keyed_cache, p.cache, refs.train,
                                         refs.eval, mini_arch(4), cfg,
                                         mini_train_config(42, 60));
    CHECK(keyed.detector.validation_accuracy >= 0.95);

    // clean clip: fresh random posterior per query
    const ClipRef ref{p.plan.target_speakers[0], p.plan.by_speaker[p.plan.target_speakers[0]].in_eval[0]};
    const AudioClip& clean_clip = p.corpus.clip(ref);
    CHECK(keyed.detector.keyed_score(clean_clip) < 0.5);
    const auto r1 = keyed_predict(keyed.model, keyed.detector, clean_clip, 1);
    const auto r2 = keyed_predict(keyed.model, keyed.detector, clean_clip, 2);
    CHECK(r1 != r2);

    // keyed clip: the model's ordinary posterior
    const AudioClip keyed_clip =
        apply_key(clean_clip, cfg.noise_amplitude, key_noise_seed(cfg, ref));
    CHECK(keyed.detector.keyed_score(keyed_clip) >= 0.5);
    const auto via_gate = keyed_predict(keyed.model, keyed.detector, keyed_clip, 3);
    const auto direct = predict_posteriors(keyed.model, keyed_clip);
    CHECK(via_gate == direct);

    // impossible detector requirement rejects the configuration
    KeyConfig impossible = cfg;
    impossible.min_detector_accuracy = 1.01;
    CHECK_THROWS(train_keyed(p.corpus, keyed_cache, p.cache, refs.train, refs.eval,
                             mini_arch(4), impossible, mini_train_config(42, 5)));
}
