#include "sidlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"

namespace sidlab {

using nlohmann::json;

namespace {

constexpr uint64_t kTagSplit = 0x73706c74;
constexpr uint64_t kTagShadow = 0x73686477;
constexpr uint64_t kTagTarget = 0x74677464;
constexpr uint64_t kTagAttack = 0x61746b30;
constexpr uint64_t kTagTeacher = 0x74656163;
constexpr uint64_t kTagStudent = 0x73747564;
constexpr uint64_t kTagDetector = 0x64657430;
constexpr uint64_t kTagKeyQuery = 0x6b657971;
constexpr uint64_t kTagKeyRoot = 0x6b657972;

std::string format_param(const std::string& name, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s=%g", name.c_str(), value);
    return buf;
}

}  // namespace

json ExperimentSpec::to_json() const {
    return {{"corpus", corpus_spec_to_json(corpus)},
            {"split_seed", split_seed},
            {"seeds", seeds},
            {"defenses",
             {{"alphas", grid.alphas},
              {"lambdas", grid.lambdas},
              {"obfuscations", grid.obfuscations},
              {"temperatures", grid.temperatures},
              {"key", grid.key}}},
            {"sid_train", sid_train.to_json()},
            {"attack_train", attack_train.to_json()},
            {"advreg",
             {{"inner_attack_steps", advreg.inner_attack_steps},
              {"reference_fraction", advreg.reference_fraction}}},
            {"key_config",
             {{"noise_amplitude", key_config.noise_amplitude},
              {"key_seed", key_config.key_seed},
              {"min_detector_accuracy", key_config.min_detector_accuracy}}},
            {"distill_serve_softened", distill_serve_softened},
            {"threshold_selection", threshold_selection},
            {"threads", threads},
            {"output_dir", output_dir.string()}};
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
    ExperimentSpec spec = default_experiment_spec();
    spec.corpus = corpus_spec_from_json(j.at("corpus"));
    spec.split_seed = j.value("split_seed", spec.split_seed);
    if (j.contains("seeds")) spec.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("defenses")) {
        const auto& d = j.at("defenses");
        spec.grid.alphas = d.value("alphas", std::vector<double>{});
        spec.grid.lambdas = d.value("lambdas", std::vector<double>{});
        spec.grid.obfuscations = d.value("obfuscations", std::vector<std::string>{});
        spec.grid.temperatures = d.value("temperatures", std::vector<double>{});
        spec.grid.key = d.value("key", false);
    }
    if (j.contains("sid_train")) spec.sid_train = nn::TrainConfig::from_json(j.at("sid_train"));
    if (j.contains("attack_train"))
        spec.attack_train = nn::TrainConfig::from_json(j.at("attack_train"));
    if (j.contains("advreg")) {
        spec.advreg.inner_attack_steps =
            j.at("advreg").value("inner_attack_steps", spec.advreg.inner_attack_steps);
        spec.advreg.reference_fraction =
            j.at("advreg").value("reference_fraction", spec.advreg.reference_fraction);
    }
    if (j.contains("key_config")) {
        const auto& k = j.at("key_config");
        spec.key_config.noise_amplitude =
            k.value("noise_amplitude", spec.key_config.noise_amplitude);
        spec.key_config.key_seed = k.value("key_seed", spec.key_config.key_seed);
        spec.key_config.min_detector_accuracy =
            k.value("min_detector_accuracy", spec.key_config.min_detector_accuracy);
    }
    spec.distill_serve_softened = j.value("distill_serve_softened", true);
    spec.threshold_selection = j.value("threshold_selection", std::string("shadow"));
    if (spec.threshold_selection != "shadow" && spec.threshold_selection != "target-eval")
        throw std::invalid_argument("threshold_selection must be shadow or target-eval");
    spec.threads = j.value("threads", spec.threads);
    if (j.contains("output_dir")) spec.output_dir = j.at("output_dir").get<std::string>();
    return spec;
}

ExperimentSpec default_experiment_spec() {
    ExperimentSpec spec;
    spec.corpus.n_speakers = 20;
    spec.corpus.clips_per_speaker = 40;
    spec.corpus.master_seed = 1234;
    spec.split_seed = 7;
    spec.seeds = {1, 2, 3};
    spec.grid.alphas = {0.0};

    // Full-batch training for a fixed epoch budget: with small desk-scale
    // batches the adaptive optimizer hides the L2 term behind minibatch
    // gradient noise and the alpha sweep loses its effect.
    spec.sid_train.learning_rate = 1e-3;
    spec.sid_train.batch_size = 0;
    spec.sid_train.max_epochs = 200;
    spec.sid_train.optimizer = nn::OptimizerKind::adam;
    spec.sid_train.early_stop_train_acc = 1.01;

    spec.attack_train = default_attack_train_config(0);

    spec.key_config.detector_config.max_epochs = 40;
    spec.key_config.detector_config.batch_size = 32;
    spec.key_config.detector_config.learning_rate = 1e-3;
    spec.key_config.detector_config.early_stop_train_acc = 1.1;

    spec.threads = static_cast<int>(std::thread::hardware_concurrency());
    if (spec.threads < 1) spec.threads = 1;
    return spec;
}

namespace {

struct GridPoint {
    int index = 0;
    std::string defense;
    std::string parameter;
    double value = 0.0;              // alpha | lambda | temperature
    ObfuscationConfig obfuscation;   // obfuscation points
};

std::vector<GridPoint> enumerate_grid(const ExperimentSpec& spec) {
    std::vector<GridPoint> points;
    auto push = [&](GridPoint p) {
        p.index = static_cast<int>(points.size());
        points.push_back(std::move(p));
    };
    for (double a : spec.grid.alphas)
        push({0, "baseline", format_param("alpha", a), a, {}});
    for (double l : spec.grid.lambdas)
        push({0, "advreg", format_param("lambda", l), l, {}});
    for (const auto& o : spec.grid.obfuscations)
        push({0, "obfuscation", o, 0.0, ObfuscationConfig::parse(o)});
    for (double t : spec.grid.temperatures)
        push({0, "distill", format_param("T", t), t, {}});
    if (spec.grid.key)
        push({0, "key", format_param("amp", spec.key_config.noise_amplitude), 0.0, {}});
    return points;
}

struct SeedContext {
    uint64_t seed = 0;
    SplitPlan plan;
    std::vector<ClipRef> shadow_train, shadow_eval;
    std::vector<ClipRef> target_train, target_eval;
    SplitPlan::Pool train_pool, val_pool, eval_pool;
    AttackModel attack;  // shadow pipeline at the base config
    double threshold = 0.5;
    SidModel baseline_target;
    TrainReport baseline_report;
    double baseline_runtime = 0.0;
};

nn::TrainConfig with_seed(nn::TrainConfig base, uint64_t seed) {
    base.seed = seed;
    return base;
}

// Deterministic, simple worker pool over an index space.
void parallel_for(int n_tasks, int n_threads, const std::function<void(int)>& fn) {
    if (n_threads <= 1) {
        for (int i = 0; i < n_tasks; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> threads;
    const int workers = std::min(n_threads, n_tasks);
    for (int t = 0; t < workers; ++t) {
        threads.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& th : threads) th.join();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.corpus.validate();
    spec.sid_train.validate();
    spec.attack_train.validate();
    if (spec.seeds.empty()) throw std::invalid_argument("at least one seed required");

    const std::vector<GridPoint> points = enumerate_grid(spec);
    if (points.empty()) throw std::invalid_argument("empty defense grid");

    const Corpus corpus = build_corpus(spec.corpus, spec.threads);
    const FeatureCache cache(corpus, spec.threads);

    ExperimentResult result;
    std::mutex mutex;  // guards rows/failures

    // Stage 1: per-seed shared pipeline (splits, shadow, attack, baseline).
    std::vector<SeedContext> contexts(spec.seeds.size());
    std::vector<std::string> seed_failures(spec.seeds.size());
    parallel_for(static_cast<int>(spec.seeds.size()), spec.threads, [&](int si) {
        SeedContext& ctx = contexts[si];
        ctx.seed = spec.seeds[si];
        try {
            const auto t0 = std::chrono::steady_clock::now();
            ctx.plan = plan_splits(corpus, seed_combine(spec.split_seed, kTagSplit, ctx.seed));
            // Split hygiene is checked before any training starts.
            ctx.plan.validate(corpus.spec);

            ctx.shadow_train =
                ctx.plan.cohort_refs(ctx.plan.shadow_speakers, &SpeakerSplit::in_train);
            ctx.shadow_eval =
                ctx.plan.cohort_refs(ctx.plan.shadow_speakers, &SpeakerSplit::in_eval);
            ctx.target_train =
                ctx.plan.cohort_refs(ctx.plan.target_speakers, &SpeakerSplit::in_train);
            ctx.target_eval =
                ctx.plan.cohort_refs(ctx.plan.target_speakers, &SpeakerSplit::in_eval);
            ctx.train_pool = ctx.plan.attack_train_pool();
            ctx.val_pool = ctx.plan.attack_val_pool();
            ctx.eval_pool = ctx.plan.attack_eval_pool();

            // Shadow pipeline at the base config; the attacker imitates the
            // undefended training recipe.
            SidTrainOptions shadow_options;
            shadow_options.config =
                with_seed(spec.sid_train, seed_combine(ctx.seed, kTagShadow));
            const auto shadow_arch =
                nn::default_sid_arch(static_cast<int>(ctx.plan.shadow_speakers.size()));
            auto [shadow, shadow_report] =
                train_sid(cache, ctx.shadow_train, ctx.shadow_eval, shadow_arch,
                          shadow_options);

            const auto train_records =
                build_attack_dataset(shadow, cache, ctx.train_pool.members,
                                     ctx.train_pool.nonmembers, RecordSource::shadow);
            const auto val_records =
                build_attack_dataset(shadow, cache, ctx.val_pool.members,
                                     ctx.val_pool.nonmembers, RecordSource::shadow);
            ctx.attack = train_attack(
                train_records, with_seed(spec.attack_train, seed_combine(ctx.seed, kTagAttack)));
            ctx.threshold = select_threshold(ctx.attack, val_records);

            SidTrainOptions target_options;
            target_options.config =
                with_seed(spec.sid_train, seed_combine(ctx.seed, kTagTarget));
            target_options.config.l2_alpha = 0.0;
            const auto target_arch =
                nn::default_sid_arch(static_cast<int>(ctx.plan.target_speakers.size()));
            auto [baseline, baseline_report] =
                train_sid(cache, ctx.target_train, ctx.target_eval, target_arch, target_options);
            ctx.baseline_target = std::move(baseline);
            ctx.baseline_report = std::move(baseline_report);
            ctx.baseline_runtime =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } catch (const std::exception& e) {
            seed_failures[si] = e.what();
        }
    });

    // Stage 2: one task per (grid point, seed).
    const int n_tasks = static_cast<int>(points.size() * spec.seeds.size());
    parallel_for(n_tasks, spec.threads, [&](int task) {
        const int pi = task / static_cast<int>(spec.seeds.size());
        const int si = task % static_cast<int>(spec.seeds.size());
        const GridPoint& point = points[pi];
        SeedContext& ctx = contexts[si];
        const std::string label =
            point.defense + "/" + point.parameter + "/seed=" + std::to_string(ctx.seed);
        if (!seed_failures[si].empty()) {
            std::lock_guard<std::mutex> lock(mutex);
            result.failures.push_back(label + ": seed stage failed: " + seed_failures[si]);
            return;
        }
        try {
            const auto t0 = std::chrono::steady_clock::now();
            ReportRow row;
            row.dataset_condition = to_string(spec.corpus.condition);
            row.defense = point.defense;
            row.parameter = point.parameter;
            row.seed = ctx.seed;

            const auto target_arch =
                nn::default_sid_arch(static_cast<int>(ctx.plan.target_speakers.size()));
            const uint64_t target_seed = seed_combine(ctx.seed, kTagTarget);

            auto posterior_features = [&](const SidModel& model,
                                          const std::vector<ClipRef>& refs) {
                SidPredictor predictor(model);
                std::vector<AttackFeature> out;
                out.reserve(refs.size());
                for (const auto& ref : refs)
                    out.push_back(extract_attack_feature(predictor.posteriors(cache, ref)));
                return out;
            };
            auto attack_columns = [&](const AttackModel& attack, double frozen_threshold,
                                      const std::vector<AttackFeature>& members,
                                      const std::vector<AttackFeature>& nonmembers) {
                const double threshold =
                    spec.threshold_selection == "target-eval"
                        ? select_threshold_on_features(attack, members, nonmembers)
                        : frozen_threshold;
                const AttackMetrics m =
                    evaluate_attack_features(attack, threshold, members, nonmembers);
                row.attack_acc = m.accuracy;
                row.attack_prec = m.precision;
                row.attack_rec = m.recall;
            };

            if (point.defense == "baseline") {
                if (point.value == 0.0) {
                    row.target_train_acc = ctx.baseline_report.final_train_acc;
                    row.target_test_acc = ctx.baseline_report.final_eval_acc;
                    attack_columns(ctx.attack, ctx.threshold,
                                   posterior_features(ctx.baseline_target, ctx.eval_pool.members),
                                   posterior_features(ctx.baseline_target,
                                                      ctx.eval_pool.nonmembers));
                } else {
                    // The attacker imitates the full training recipe, so the
                    // alpha sweep repeats the shadow pipeline at this alpha.
                    SidTrainOptions shadow_options;
                    shadow_options.config =
                        with_seed(spec.sid_train, seed_combine(ctx.seed, kTagShadow));
                    shadow_options.config.l2_alpha = point.value;
                    const auto shadow_arch = nn::default_sid_arch(
                        static_cast<int>(ctx.plan.shadow_speakers.size()));
                    auto [shadow, shadow_report] =
                        train_sid(cache, ctx.shadow_train, ctx.shadow_eval, shadow_arch,
                                  shadow_options);
                    const auto train_records =
                        build_attack_dataset(shadow, cache, ctx.train_pool.members,
                                             ctx.train_pool.nonmembers, RecordSource::shadow);
                    const auto val_records =
                        build_attack_dataset(shadow, cache, ctx.val_pool.members,
                                             ctx.val_pool.nonmembers, RecordSource::shadow);
                    const AttackModel attack = train_attack(
                        train_records,
                        with_seed(spec.attack_train, seed_combine(ctx.seed, kTagAttack)));
                    const double threshold = select_threshold(attack, val_records);

                    SidTrainOptions options;
                    options.config = with_seed(spec.sid_train, target_seed);
                    options.config.l2_alpha = point.value;
                    auto [model, report] = train_sid(cache, ctx.target_train, ctx.target_eval,
                                                     target_arch, options);
                    row.target_train_acc = report.final_train_acc;
                    row.target_test_acc = report.final_eval_acc;
                    attack_columns(attack, threshold,
                                   posterior_features(model, ctx.eval_pool.members),
                                   posterior_features(model, ctx.eval_pool.nonmembers));
                }
            } else if (point.defense == "advreg") {
                AdvRegConfig cfg = spec.advreg;
                cfg.privacy_lambda = point.value;
                const auto reference = ctx.plan.defender_reference(cfg.reference_fraction);
                // Fixed privacy-game budget: lambda scales how fast the
                // posterior geometry flattens, so an open-ended budget would
                // erase the lambda trade-off entirely.
                nn::TrainConfig base = with_seed(spec.sid_train, target_seed);
                base.max_epochs = std::min(base.max_epochs, 80);
                auto [model, report] = train_adversarially_regularized(
                    cache, ctx.target_train, ctx.target_eval, reference, target_arch, cfg,
                    base);
                row.target_train_acc = report.final_train_acc;
                row.target_test_acc = report.final_eval_acc;
                attack_columns(ctx.attack, ctx.threshold,
                               posterior_features(model, ctx.eval_pool.members),
                               posterior_features(model, ctx.eval_pool.nonmembers));
            } else if (point.defense == "obfuscation") {
                // Output transform on the baseline checkpoint; target accuracy
                // is bit-identical to the undefended model.
                row.target_train_acc = ctx.baseline_report.final_train_acc;
                row.target_test_acc = ctx.baseline_report.final_eval_acc;
                SidPredictor predictor(ctx.baseline_target);
                auto features = [&](const std::vector<ClipRef>& refs) {
                    std::vector<AttackFeature> out;
                    for (const auto& ref : refs)
                        out.push_back(feature_from_obfuscated(
                            obfuscate(predictor.posteriors(cache, ref), point.obfuscation)));
                    return out;
                };
                attack_columns(ctx.attack, ctx.threshold, features(ctx.eval_pool.members),
                               features(ctx.eval_pool.nonmembers));
            } else if (point.defense == "distill") {
                DistillConfig cfg;
                cfg.temperature = point.value;
                // A small weight penalty keeps teacher logits bounded; its
                // relative strength grows with T (softmax gradients shrink by
                // 1/T), which is exactly when the served vectors must stay
                // soft. The student only chases the teacher's distribution
                // and needs no penalty.
                cfg.teacher_config =
                    with_seed(spec.sid_train, seed_combine(ctx.seed, kTagTeacher));
                cfg.teacher_config.l2_alpha = std::max(cfg.teacher_config.l2_alpha, 5e-4);
                cfg.student_config =
                    with_seed(spec.sid_train, seed_combine(ctx.seed, kTagStudent));
                cfg.serve_softened = spec.distill_serve_softened;
                auto [model, report] =
                    train_distilled(cache, ctx.target_train, ctx.target_eval, target_arch, cfg);
                row.target_train_acc = report.final_train_acc;
                row.target_test_acc = report.final_eval_acc;
                attack_columns(ctx.attack, ctx.threshold,
                               posterior_features(model, ctx.eval_pool.members),
                               posterior_features(model, ctx.eval_pool.nonmembers));
            } else if (point.defense == "key") {
                KeyConfig cfg = spec.key_config;
                cfg.key_seed = seed_combine(cfg.key_seed, kTagKeyRoot, ctx.seed);
                cfg.detector_config =
                    with_seed(cfg.detector_config, seed_combine(ctx.seed, kTagDetector));
                const FeatureCache keyed_cache(
                    corpus,
                    [&](const AudioClip& clip) {
                        return apply_key(clip, cfg.noise_amplitude,
                                         key_noise_seed(cfg, {clip.speaker_id, clip.clip_id}));
                    },
                    1);
                KeyedModel keyed =
                    train_keyed(corpus, keyed_cache, cache, ctx.target_train, ctx.target_eval,
                                target_arch, cfg, with_seed(spec.sid_train, target_seed));
                row.target_train_acc = keyed.report.final_train_acc;
                row.target_test_acc = keyed.report.final_eval_acc;

                // The attacker holds the original clips only; without the key
                // every query draws a fresh random posterior.
                uint64_t query_index = 0;
                auto features = [&](const std::vector<ClipRef>& refs) {
                    std::vector<AttackFeature> out;
                    for (const auto& ref : refs) {
                        const auto posterior = keyed_predict(
                            keyed.model, keyed.detector, corpus.clip(ref),
                            seed_combine(ctx.seed, kTagKeyQuery, query_index++));
                        out.push_back(extract_attack_feature(posterior));
                    }
                    return out;
                };
                attack_columns(ctx.attack, ctx.threshold, features(ctx.eval_pool.members),
                               features(ctx.eval_pool.nonmembers));
            } else {
                throw std::logic_error("unknown defense kind: " + point.defense);
            }

            row.runtime_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (point.defense == "baseline" && point.value == 0.0)
                row.runtime_s += ctx.baseline_runtime;

            std::lock_guard<std::mutex> lock(mutex);
            result.rows.push_back(std::move(row));
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mutex);
            result.failures.push_back(label + ": " + e.what());
        }
    });

    // Deterministic row order: grid listing order, then seed listing order.
    auto point_rank = [&](const ReportRow& row) {
        for (const auto& p : points)
            if (p.defense == row.defense && p.parameter == row.parameter) return p.index;
        return static_cast<int>(points.size());
    };
    auto seed_rank = [&](uint64_t seed) {
        for (size_t i = 0; i < spec.seeds.size(); ++i)
            if (spec.seeds[i] == seed) return static_cast<int>(i);
        return static_cast<int>(spec.seeds.size());
    };
    std::sort(result.rows.begin(), result.rows.end(),
              [&](const ReportRow& a, const ReportRow& b) {
                  const int pa = point_rank(a), pb = point_rank(b);
                  if (pa != pb) return pa < pb;
                  return seed_rank(a.seed) < seed_rank(b.seed);
              });
    std::sort(result.failures.begin(), result.failures.end());
    return result;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of empty set");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string format_percent(double rate) {
    const double scaled = std::nearbyint(rate * 1000.0) / 10.0;  // half-to-even
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", scaled);
    return buf;
}

namespace {

std::string format_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string csv_from_rows(const std::vector<ReportRow>& rows) {
    std::string csv =
        "dataset_condition,defense,parameter,target_train_acc,target_test_acc,"
        "attack_acc,attack_prec,attack_rec,seed,runtime_s\n";
    for (const auto& r : rows) {
        csv += r.dataset_condition + "," + r.defense + "," + r.parameter + "," +
               format_rate(r.target_train_acc) + "," + format_rate(r.target_test_acc) + "," +
               format_rate(r.attack_acc) + "," + format_rate(r.attack_prec) + "," +
               format_rate(r.attack_rec) + "," + std::to_string(r.seed) + ",0.000\n";
    }
    return csv;
}

struct GroupKey {
    std::string condition, defense, parameter;
    bool operator<(const GroupKey& o) const {
        return std::tie(condition, defense, parameter) <
               std::tie(o.condition, o.defense, o.parameter);
    }
};

}  // namespace

void render_report(const std::vector<ReportRow>& rows, const ExperimentSpec& spec,
                   const std::vector<std::string>& failures,
                   const std::filesystem::path& dir) {
    if (rows.empty()) throw std::invalid_argument("no rows to report");
    std::filesystem::create_directories(dir);

    write_text(dir / "results.csv", csv_from_rows(rows));

    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"dataset_condition", r.dataset_condition},
                          {"defense", r.defense},
                          {"parameter", r.parameter},
                          {"target_train_acc", r.target_train_acc},
                          {"target_test_acc", r.target_test_acc},
                          {"attack_acc", r.attack_acc},
                          {"attack_prec", r.attack_prec},
                          {"attack_rec", r.attack_rec},
                          {"seed", r.seed},
                          {"runtime_s", r.runtime_s}});
    const json report = {{"spec", spec.to_json()},
                         {"rows", rows_j},
                         {"failures", failures},
                         {"note", "runtime_s is measured here; results.csv keeps the "
                                  "column deterministic"}};
    write_text(dir / "results.json", report.dump(2) + "\n");

    // figure_data.csv: per (defense, parameter) group, the five bar series
    // (target train/test, attack acc/prec/rec) as medians over seeds,
    // preserving first-appearance order.
    std::vector<GroupKey> order;
    std::map<GroupKey, std::vector<const ReportRow*>> groups;
    for (const auto& r : rows) {
        const GroupKey key{r.dataset_condition, r.defense, r.parameter};
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::string fig = "condition,defense,parameter,series,value\n";
    for (const auto& key : order) {
        const auto& group = groups[key];
        auto series_median = [&](auto field) {
            std::vector<double> v;
            for (const auto* r : group) v.push_back(r->*field);
            return median(v);
        };
        const std::pair<std::string, double> series[] = {
            {"target_train", series_median(&ReportRow::target_train_acc)},
            {"target_test", series_median(&ReportRow::target_test_acc)},
            {"attack_acc", series_median(&ReportRow::attack_acc)},
            {"attack_prec", series_median(&ReportRow::attack_prec)},
            {"attack_rec", series_median(&ReportRow::attack_rec)}};
        for (const auto& [name, value] : series)
            fig += key.condition + "," + key.defense + "," + key.parameter + "," + name +
                   "," + format_rate(value) + "\n";
    }
    write_text(dir / "figure_data.csv", fig);
}

std::string render_table(const std::vector<ReportRow>& rows) {
    std::vector<GroupKey> order;
    std::map<GroupKey, std::vector<const ReportRow*>> groups;
    for (const auto& r : rows) {
        const GroupKey key{r.dataset_condition, r.defense, r.parameter};
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-7s %-12s %-12s %8s %8s | %8s %8s %8s\n", "data",
                  "defense", "parameter", "train", "test", "acc", "prec", "rec");
    out += line;
    for (const auto& key : order) {
        const auto& group = groups[key];
        auto med = [&](auto field) {
            std::vector<double> v;
            for (const auto* r : group) v.push_back(r->*field);
            return median(v);
        };
        std::snprintf(line, sizeof(line), "%-7s %-12s %-12s %8s %8s | %8s %8s %8s\n",
                      key.condition.c_str(), key.defense.c_str(), key.parameter.c_str(),
                      format_percent(med(&ReportRow::target_train_acc)).c_str(),
                      format_percent(med(&ReportRow::target_test_acc)).c_str(),
                      format_percent(med(&ReportRow::attack_acc)).c_str(),
                      format_percent(med(&ReportRow::attack_prec)).c_str(),
                      format_percent(med(&ReportRow::attack_rec)).c_str());
        out += line;
    }
    return out;
}

}  // namespace sidlab
