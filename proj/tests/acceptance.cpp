// Acceptance suite: one pass/fail line per criterion. Exit code 0 only when
// every criterion holds.
//
// Desk configuration: 20 speakers (10 target / 10 shadow), 40 clips each,
// clean and noisy conditions, medians over 3 seeds.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <thread>

#include "sidlab/harness.hpp"
#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"
#include "sidlab/server.hpp"

using namespace sidlab;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

int hw_threads() {
    const int n = static_cast<int>(std::thread::hardware_concurrency());
    return n > 0 ? n : 2;
}

ExperimentSpec desk_spec(Condition condition) {
    ExperimentSpec spec = default_experiment_spec();
    spec.corpus.n_speakers = 20;
    spec.corpus.clips_per_speaker = 40;
    spec.corpus.condition = condition;
    spec.corpus.noise_snr_db = 15.0;
    spec.corpus.reverb_preset = ReverbPreset::room_a;
    spec.corpus.master_seed = 1234;
    spec.split_seed = 7;
    spec.seeds = {1, 2, 3};
    spec.threads = hw_threads();
    return spec;
}

struct RowSet {
    std::vector<ReportRow> rows;

    std::vector<double> values(const std::string& defense, const std::string& parameter,
                               double ReportRow::*field) const {
        std::vector<double> out;
        for (const auto& r : rows)
            if (r.defense == defense && r.parameter == parameter) out.push_back(r.*field);
        return out;
    }
    double med(const std::string& defense, const std::string& parameter,
               double ReportRow::*field) const {
        return median(values(defense, parameter, field));
    }
};

}  // namespace

// ---------------------------------------------------------------------------

static void criterion_1_gradient_integrity() {
    const auto t0 = Clock::now();
    const auto sid = nn::gradient_check(nn::tiny_sid_arch(4), 11);
    const auto attack = nn::gradient_check(nn::attack_arch(), 12);
    const auto detector = nn::gradient_check(nn::MlpArch{33, {32, 32}}, 13);
    const double elapsed = seconds_since(t0);
    const bool pass = sid.pass && attack.pass && detector.pass && elapsed < 60.0;
    report("C1", pass,
           fmt("gradient integrity: sid %.2e, attack %.2e, detector %.2e (tol 1e-4), %.1f s",
               sid.max_rel_error, attack.max_rel_error, detector.max_rel_error, elapsed));
}

static void criterion_2_attack_efficacy(const RowSet& clean, const RowSet& noisy) {
    const double train = clean.med("baseline", "alpha=0", &ReportRow::target_train_acc);
    const double test = clean.med("baseline", "alpha=0", &ReportRow::target_test_acc);
    std::vector<double> gaps;
    for (const auto& r : clean.rows)
        if (r.defense == "baseline" && r.parameter == "alpha=0")
            gaps.push_back(r.target_train_acc - r.target_test_acc);
    const double gap = median(gaps);
    const double attack_clean = clean.med("baseline", "alpha=0", &ReportRow::attack_acc);
    const double attack_noisy = noisy.med("baseline", "alpha=0", &ReportRow::attack_acc);
    const bool pass =
        train >= 0.98 && gap >= 0.05 && attack_clean >= 0.65 && attack_noisy >= 0.60;
    report("C2", pass,
           fmt("attack efficacy: clean train %.3f (>=0.98), gap %.3f (>=0.05), "
               "attack %.3f (>=0.65); noisy attack %.3f (>=0.60); clean test %.3f",
               train, gap, attack_clean, attack_noisy, test));
}

static void criterion_3_l2_direction(const RowSet& noisy) {
    const double acc0 = noisy.med("baseline", "alpha=0", &ReportRow::attack_acc);
    const double acc1 = noisy.med("baseline", "alpha=0.01", &ReportRow::attack_acc);
    const double rec0 = noisy.med("baseline", "alpha=0", &ReportRow::attack_rec);
    const double rec1 = noisy.med("baseline", "alpha=0.01", &ReportRow::attack_rec);
    const bool pass = acc1 <= acc0 && rec1 < rec0;
    report("C3", pass,
           fmt("L2 direction (noisy): attack %.3f -> %.3f (<=), recall %.3f -> %.3f (<)",
               acc0, acc1, rec0, rec1));
}

static void criterion_4_rank_obfuscation(const RowSet& clean) {
    bool in_band = true, identical = true;
    double worst = 0.5;
    int n_rows = 0;
    for (const auto& r : clean.rows) {
        if (r.defense != "obfuscation" || r.parameter != "rank") continue;
        ++n_rows;
        if (r.attack_acc < 0.45 || r.attack_acc > 0.55) in_band = false;
        if (std::fabs(r.attack_acc - 0.5) > std::fabs(worst - 0.5)) worst = r.attack_acc;
        for (const auto& b : clean.rows) {
            if (b.defense == "baseline" && b.parameter == "alpha=0" && b.seed == r.seed) {
                identical = identical && b.target_train_acc == r.target_train_acc &&
                            b.target_test_acc == r.target_test_acc;
            }
        }
    }
    report("C4", n_rows > 0 && in_band && identical,
           fmt("rank obfuscation: attack accuracy %.3f in [0.45,0.55] over %d seeds; target "
               "accuracy identical to the undefended checkpoint: %s",
               worst, n_rows, identical ? "yes" : "no"));
}

static void criterion_5_distillation(const RowSet& clean) {
    const double atk_t1 = clean.med("distill", "T=1", &ReportRow::attack_acc);
    const double atk_t100 = clean.med("distill", "T=100", &ReportRow::attack_acc);
    const double test_t100 = clean.med("distill", "T=100", &ReportRow::target_test_acc);
    const double test_base = clean.med("baseline", "alpha=0", &ReportRow::target_test_acc);
    const bool pass = atk_t100 >= 0.45 && atk_t100 <= 0.57 && atk_t1 - atk_t100 >= 0.10 &&
                      test_t100 >= test_base - 0.08;
    report("C5", pass,
           fmt("distillation: attack T=100 %.3f in [0.45,0.57], T=1 %.3f (gap %.3f >= 0.10), "
               "test T=100 %.3f vs baseline %.3f (degradation <= 0.08)",
               atk_t100, atk_t1, atk_t1 - atk_t100, test_t100, test_base));
}

static void criterion_6_adversarial_regularization(const RowSet& clean) {
    const double atk_l1 = clean.med("advreg", "lambda=1", &ReportRow::attack_acc);
    const double atk_l3 = clean.med("advreg", "lambda=3", &ReportRow::attack_acc);
    const double test_l1 = clean.med("advreg", "lambda=1", &ReportRow::target_test_acc);
    const double test_l3 = clean.med("advreg", "lambda=3", &ReportRow::target_test_acc);
    const bool pass = atk_l3 <= atk_l1 - 0.05 && test_l3 >= test_l1 - 0.12;
    report("C6", pass,
           fmt("adversarial regularization: attack lambda=1 %.3f -> lambda=3 %.3f "
               "(drop %.3f >= 0.05), test %.3f -> %.3f (degradation <= 0.12)",
               atk_l1, atk_l3, atk_l1 - atk_l3, test_l1, test_l3));
}

namespace {

// Seed-1 desk-scale pipeline shared by C7 (clean-input keyed accuracy) and C8
// (black-box parity).
struct DeskArtifacts {
    Corpus corpus;
    FeatureCache cache;
    SplitPlan plan;
    SidModel target;
    TrainReport target_report;
    AttackModel attack;
    double threshold = 0.5;
    SplitPlan::Pool eval_pool;

    explicit DeskArtifacts(const ExperimentSpec& spec)
        : corpus(build_corpus(spec.corpus, hw_threads())),
          cache(corpus, hw_threads()),
          plan(plan_splits(corpus, seed_combine(spec.split_seed, 0x73706c74, 1))) {
        const auto target_train = plan.cohort_refs(plan.target_speakers, &SpeakerSplit::in_train);
        const auto target_eval = plan.cohort_refs(plan.target_speakers, &SpeakerSplit::in_eval);
        const auto shadow_train = plan.cohort_refs(plan.shadow_speakers, &SpeakerSplit::in_train);
        const auto shadow_eval = plan.cohort_refs(plan.shadow_speakers, &SpeakerSplit::in_eval);
        eval_pool = plan.attack_eval_pool();

        SidTrainOptions options;
        options.config = spec.sid_train;
        options.config.seed = seed_combine(1, 0x74677464);
        auto [model, model_report] = train_sid(
            cache, target_train, target_eval,
            nn::default_sid_arch(static_cast<int>(plan.target_speakers.size())), options);
        target = std::move(model);
        target_report = std::move(model_report);

        SidTrainOptions shadow_options;
        shadow_options.config = spec.sid_train;
        shadow_options.config.seed = seed_combine(1, 0x73686477);
        auto [shadow, shadow_report] = train_sid(
            cache, shadow_train, shadow_eval,
            nn::default_sid_arch(static_cast<int>(plan.shadow_speakers.size())),
            shadow_options);

        const auto train_pool = plan.attack_train_pool();
        const auto val_pool = plan.attack_val_pool();
        attack = train_attack(
            build_attack_dataset(shadow, cache, train_pool.members, train_pool.nonmembers,
                                 RecordSource::shadow),
            default_attack_train_config(seed_combine(1, 0x61746b30)));
        threshold = select_threshold(
            attack, build_attack_dataset(shadow, cache, val_pool.members, val_pool.nonmembers,
                                         RecordSource::shadow));
    }
};

}  // namespace

static void criterion_7_model_key(const RowSet& clean, const ExperimentSpec& spec,
                                  const DeskArtifacts& desk) {
    const std::string key_param = fmt("amp=%g", spec.key_config.noise_amplitude);
    const double atk = clean.med("key", key_param, &ReportRow::attack_acc);
    const double test_key = clean.med("key", key_param, &ReportRow::target_test_acc);
    const double test_base = clean.med("baseline", "alpha=0", &ReportRow::target_test_acc);

    // Clean-input accuracy through the serving path must collapse to chance:
    // train one keyed model at seed 1 and query it with unkeyed clips.
    KeyConfig key_cfg = spec.key_config;
    key_cfg.key_seed = seed_combine(key_cfg.key_seed, 0x6b657972, 1);
    key_cfg.detector_config.seed = seed_combine(1, 0x64657430);
    const FeatureCache keyed_cache(
        desk.corpus,
        [&](const AudioClip& clip) {
            return apply_key(clip, key_cfg.noise_amplitude,
                             key_noise_seed(key_cfg, {clip.speaker_id, clip.clip_id}));
        },
        hw_threads());
    nn::TrainConfig base = spec.sid_train;
    base.seed = seed_combine(1, 0x74677464);
    const auto target_train =
        desk.plan.cohort_refs(desk.plan.target_speakers, &SpeakerSplit::in_train);
    const auto target_eval =
        desk.plan.cohort_refs(desk.plan.target_speakers, &SpeakerSplit::in_eval);
    const KeyedModel keyed = train_keyed(
        desk.corpus, keyed_cache, desk.cache, target_train, target_eval,
        nn::default_sid_arch(static_cast<int>(desk.plan.target_speakers.size())), key_cfg,
        base);

    std::vector<ClipRef> clean_eval;
    for (int s : desk.plan.target_speakers) {
        for (int c : desk.plan.by_speaker[s].in_eval) clean_eval.push_back({s, c});
        for (int c : desk.plan.by_speaker[s].out_attack_train) clean_eval.push_back({s, c});
        for (int c : desk.plan.by_speaker[s].out_attack_eval) clean_eval.push_back({s, c});
    }
    int correct = 0;
    uint64_t query = 0;
    for (const auto& ref : clean_eval) {
        const auto posterior =
            keyed_predict(keyed.model, keyed.detector, desk.corpus.clip(ref),
                          seed_combine(0xACC7, query++));
        const int argmax = static_cast<int>(
            std::max_element(posterior.begin(), posterior.end()) - posterior.begin());
        if (argmax == keyed.model.class_of(ref.speaker_id)) ++correct;
    }
    const double clean_acc = static_cast<double>(correct) / clean_eval.size();
    const double chance = 1.0 / static_cast<double>(keyed.model.n_classes());
    const double bound =
        chance + 3.0 * std::sqrt(chance * (1.0 - chance) / clean_eval.size());

    const bool pass = atk >= 0.45 && atk <= 0.55 && test_key >= test_base - 0.10 &&
                      clean_acc <= bound;
    report("C7", pass,
           fmt("model key: attack %.3f in [0.45,0.55]; keyed test %.3f vs baseline %.3f "
               "(within 0.10); clean-input accuracy %.3f <= %.3f (chance + 3 sigma, n=%zu)",
               atk, test_key, test_base, clean_acc, bound, clean_eval.size()));
}

static void criterion_8_blackbox_parity(const DeskArtifacts& desk) {
    const auto ckpt = std::filesystem::temp_directory_path() / "sidlab_acceptance_target";
    std::filesystem::remove_all(ckpt);
    save_sid_model(desk.target, nlohmann::json::object(), ckpt);

    ServeConfig cfg;
    cfg.checkpoint = ckpt;
    cfg.obfuscation = ObfuscationConfig::parse("full");
    ModelServer server(cfg);
    const int port = server.start();
    const RemoteEndpoint endpoint{"127.0.0.1", port};

    // served posteriors match in-process within 1e-6 per entry
    double worst = 0.0;
    for (size_t i = 0; i < 6; ++i) {
        const ClipRef ref = desk.eval_pool.members[(i * 17) % desk.eval_pool.members.size()];
        const auto remote = remote_classify(endpoint, desk.corpus.clip(ref)).posteriors;
        const auto local = predict_posteriors(desk.target, desk.corpus.clip(ref));
        for (size_t k = 0; k < local.size(); ++k)
            worst = std::max(worst, std::fabs(static_cast<double>(remote[k]) - local[k]));
    }

    const AttackMetrics local_metrics =
        evaluate_attack(desk.attack, desk.threshold, desk.target, desk.cache,
                        desk.eval_pool.members, desk.eval_pool.nonmembers);
    const AttackMetrics remote_metrics =
        remote_attack(endpoint, desk.attack, desk.threshold, desk.corpus,
                      desk.eval_pool.members, desk.eval_pool.nonmembers);
    const double delta = std::fabs(remote_metrics.accuracy - local_metrics.accuracy);
    server.stop();

    // rank serving preserves the argmax exactly (transform-only defense)
    ServeConfig rank_cfg = cfg;
    rank_cfg.obfuscation = ObfuscationConfig::parse("rank");
    ModelServer rank_server(rank_cfg);
    const int rank_port = rank_server.start();
    const auto target_eval =
        desk.plan.cohort_refs(desk.plan.target_speakers, &SpeakerSplit::in_eval);
    int rank_correct = 0;
    for (const auto& ref : target_eval) {
        const auto ranks =
            remote_classify({"127.0.0.1", rank_port}, desk.corpus.clip(ref)).ranks;
        const int argmax = static_cast<int>(
            std::find(ranks.begin(), ranks.end(), 1) - ranks.begin());
        if (argmax == desk.target.class_of(ref.speaker_id)) ++rank_correct;
    }
    const double rank_acc = static_cast<double>(rank_correct) / target_eval.size();
    rank_server.stop();
    std::filesystem::remove_all(ckpt);

    const bool pass = worst <= 1e-6 && delta <= 0.01 &&
                      rank_acc == desk.target_report.final_eval_acc;
    report("C8", pass,
           fmt("black-box parity: served posterior delta %.2e (<=1e-6); remote attack "
               "%.3f vs local %.3f (|delta| %.3f <= 0.01); rank-served accuracy %.3f == "
               "local %.3f",
               worst, remote_metrics.accuracy, local_metrics.accuracy, delta, rank_acc,
               desk.target_report.final_eval_acc));
}

static void criterion_9_determinism() {
    ExperimentSpec spec = default_experiment_spec();
    spec.corpus.n_speakers = 8;
    spec.corpus.clips_per_speaker = 8;
    spec.corpus.master_seed = 424;
    spec.seeds = {5};
    spec.grid = {};
    spec.grid.alphas = {0.0};
    spec.grid.obfuscations = {"rank"};
    spec.sid_train.max_epochs = 40;
    spec.threads = hw_threads();

    const auto dir_a = std::filesystem::temp_directory_path() / "sidlab_acc_det_a";
    const auto dir_b = std::filesystem::temp_directory_path() / "sidlab_acc_det_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    const ExperimentResult a = run_experiment(spec);
    const ExperimentResult b = run_experiment(spec);
    render_report(a.rows, spec, a.failures, dir_a);
    render_report(b.rows, spec, b.failures, dir_b);
    const std::string csv_a = read_text(dir_a / "results.csv");
    const std::string csv_b = read_text(dir_b / "results.csv");
    const bool pass =
        !a.rows.empty() && a.failures.empty() && b.failures.empty() && csv_a == csv_b;
    report("C9", pass,
           fmt("determinism: two executions, results.csv byte-identical: %s (%zu bytes)",
               csv_a == csv_b ? "yes" : "no", csv_a.size()));
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

static void criterion_10_unit_invariants() {
    const auto t0 = Clock::now();
    bool pass = true;
    std::string failure;

    auto expect = [&](bool ok, const char* what) {
        if (!ok && pass) {
            pass = false;
            failure = what;
        }
    };

    // softmax: normalization + entropy monotone in T
    {
        Rng rng(2024);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<float> logits(10);
            for (auto& v : logits) v = static_cast<float>(rng.next_uniform(-20.0, 20.0));
            double prev_entropy = -1.0;
            for (double t : {0.5, 1.0, 2.0, 5.0, 10.0, 100.0}) {
                const auto p = nn::softmax_t(logits, t);
                double sum = 0.0, entropy = 0.0;
                for (float v : p) {
                    sum += v;
                    if (v > 0) entropy -= static_cast<double>(v) * std::log(v);
                }
                expect(std::fabs(sum - 1.0) <= 1e-6, "softmax normalization");
                expect(entropy >= prev_entropy - 1e-9, "softmax entropy monotonicity");
                prev_entropy = entropy;
            }
        }
    }
    // STFT: peak bin and Parseval
    {
        AudioClip sine;
        sine.sample_rate = kSampleRate;
        sine.samples.resize(kClipSamples);
        for (int i = 0; i < kClipSamples; ++i)
            sine.samples[i] =
                static_cast<float>(std::sin(2.0 * M_PI * 1000.0 * i / kSampleRate));
        const Spectrogram spec = stft_magnitude(sine);
        for (int f = 0; f < spec.frames; f += 31) {
            int best = 0;
            for (int b = 1; b < spec.bins; ++b)
                if (spec.at(f, b) > spec.at(f, best)) best = b;
            expect(best == 32, "stft peak bin");
        }
        std::vector<double> window(kStftWindow);
        for (int n = 0; n < kStftWindow; ++n)
            window[n] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / kStftWindow));
        for (int f = 0; f < spec.frames; f += 53) {
            double time_energy = 0.0;
            for (int n = 0; n < kStftWindow; ++n) {
                const double v = sine.samples[f * kStftHop + n] * window[n];
                time_energy += v * v;
            }
            double spec_energy = 0.0;
            for (int b = 0; b < spec.bins; ++b) {
                const double m2 = static_cast<double>(spec.at(f, b)) * spec.at(f, b);
                spec_energy += (b == 0 || b == spec.bins - 1) ? m2 : 2.0 * m2;
            }
            expect(std::fabs(spec_energy - kStftFft * time_energy) <=
                       1e-3 * kStftFft * time_energy,
                   "stft Parseval");
        }
    }
    // metric arithmetic via the public evaluation path
    {
        nn::MlpArch arch = nn::attack_arch();
        nn::ParamSet params = nn::MlpNetT<float>::init_params(arch, 1);
        for (auto& t : params.tensors)
            for (auto& v : t.data) v = 0.0f;
        params.tensors[0].data[0] = 1.0f;
        params.tensors[2].data[0] = 1.0f;
        params.tensors[4].data[0] = 1000.0f;
        params.tensors[5].data[0] = -500.0f;
        const AttackModel p1_gate{arch, std::move(params)};
        auto feat = [](float p1) {
            AttackFeature f;
            f.p = {p1, 0.0f, 0.0f};
            return f;
        };
        const AttackMetrics m = evaluate_attack_features(
            p1_gate, 0.5,
            {feat(0.9f), feat(0.8f), feat(0.7f), feat(0.2f), feat(0.3f)},
            {feat(0.9f), feat(0.1f), feat(0.2f), feat(0.3f), feat(0.4f)});
        expect(m.tp == 3 && m.fp == 1 && m.fn == 2 && m.tn == 4, "confusion counts");
        expect(std::fabs(m.accuracy - 0.7) < 1e-12, "metric accuracy");
        expect(std::fabs(m.precision - 0.75) < 1e-12, "metric precision");
        expect(std::fabs(m.recall - 0.6) < 1e-12, "metric recall");
    }
    // split hygiene on the desk-scale plan
    {
        CorpusSpec spec;
        spec.n_speakers = 20;
        spec.clips_per_speaker = 40;
        spec.master_seed = 99;
        const Corpus corpus = build_corpus(spec, hw_threads());
        const SplitPlan plan = plan_splits(corpus, 3);
        try {
            plan.validate(spec);
        } catch (const std::exception&) {
            expect(false, "split hygiene");
        }
        const auto train_pool = plan.attack_train_pool();
        const auto eval_pool = plan.attack_eval_pool();
        expect(train_pool.members.size() == train_pool.nonmembers.size(), "pool balance");
        expect(eval_pool.members.size() == eval_pool.nonmembers.size(), "pool balance");
        expect(eval_pool.members.size() + eval_pool.nonmembers.size() >= 200,
               "eval pool size");
    }

    const double elapsed = seconds_since(t0);
    report("C10", pass && elapsed < 120.0,
           pass ? fmt("unit invariant suites: softmax, stft, metrics, split hygiene "
                      "all pass, %.1f s (< 120 s)",
                      elapsed)
                : fmt("unit invariant failure: %s", failure.c_str()));
}

// ---------------------------------------------------------------------------

int main() {
    const auto t_start = Clock::now();
    std::printf("acceptance suite: desk scale 20 speakers x 40 clips, 3 seeds\n");
    std::fflush(stdout);

    criterion_1_gradient_integrity();

    ExperimentSpec clean_spec = desk_spec(Condition::clean);
    clean_spec.grid.alphas = {0.0};
    clean_spec.grid.lambdas = {1.0, 3.0};
    clean_spec.grid.obfuscations = {"rank"};
    clean_spec.grid.temperatures = {1.0, 100.0};
    clean_spec.grid.key = true;

    ExperimentSpec noisy_spec = desk_spec(Condition::noisy);
    noisy_spec.grid.alphas = {0.0, 0.01};

    std::printf("running clean-condition grid...\n");
    std::fflush(stdout);
    const auto t_clean = Clock::now();
    const ExperimentResult clean_result = run_experiment(clean_spec);
    std::printf("clean grid: %zu rows, %zu failures, %.0f s\n", clean_result.rows.size(),
                clean_result.failures.size(), seconds_since(t_clean));
    for (const auto& f : clean_result.failures) std::printf("  failure: %s\n", f.c_str());
    std::printf("%s", render_table(clean_result.rows).c_str());
    std::fflush(stdout);

    std::printf("running noisy-condition grid...\n");
    std::fflush(stdout);
    const auto t_noisy = Clock::now();
    const ExperimentResult noisy_result = run_experiment(noisy_spec);
    std::printf("noisy grid: %zu rows, %zu failures, %.0f s\n", noisy_result.rows.size(),
                noisy_result.failures.size(), seconds_since(t_noisy));
    for (const auto& f : noisy_result.failures) std::printf("  failure: %s\n", f.c_str());
    std::printf("%s", render_table(noisy_result.rows).c_str());
    std::fflush(stdout);

    const RowSet clean{clean_result.rows};
    const RowSet noisy{noisy_result.rows};

    criterion_2_attack_efficacy(clean, noisy);
    criterion_3_l2_direction(noisy);
    criterion_4_rank_obfuscation(clean);
    criterion_5_distillation(clean);
    criterion_6_adversarial_regularization(clean);

    std::printf("building seed-1 desk artifacts for C7/C8...\n");
    std::fflush(stdout);
    const DeskArtifacts desk(clean_spec);
    criterion_7_model_key(clean, clean_spec, desk);
    criterion_8_blackbox_parity(desk);

    criterion_9_determinism();
    criterion_10_unit_invariants();

    std::printf("acceptance total: %.0f s, %d criterion failure(s)\n",
                seconds_since(t_start), g_failures);
    return g_failures == 0 ? 0 : 1;
}
