// Command-line front end: corpus synthesis, model training, defenses,
// serving, and full experiment grids.

#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "sidlab/harness.hpp"
#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"
#include "sidlab/server.hpp"

using namespace sidlab;
using nlohmann::json;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

struct CorpusBundle {
    Corpus corpus;
    SplitPlan plan;
    FeatureCache cache;

    explicit CorpusBundle(const std::string& dir, int threads)
        : CorpusBundle(load_corpus(dir), threads) {}

private:
    explicit CorpusBundle(std::pair<Corpus, SplitPlan> loaded, int threads)
        : corpus(std::move(loaded.first)),
          plan(std::move(loaded.second)),
          cache(corpus, threads) {}
};

nn::TrainConfig sid_config_from_cli(double alpha, uint64_t seed, int epochs) {
    nn::TrainConfig cfg = default_experiment_spec().sid_train;
    cfg.l2_alpha = alpha;
    cfg.seed = seed;
    if (epochs > 0) cfg.max_epochs = epochs;
    return cfg;
}

json metrics_to_json(const AttackMetrics& m) {
    return {{"tp", m.tp},
            {"fp", m.fp},
            {"tn", m.tn},
            {"fn", m.fn},
            {"accuracy", m.accuracy},
            {"precision", m.precision},
            {"recall", m.recall},
            {"threshold", m.threshold},
            {"degenerate_precision", m.degenerate_precision}};
}

RemoteEndpoint parse_endpoint(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos)
        throw CLI::ValidationError("endpoint must be host:port");
    return {text.substr(0, colon), std::stoi(text.substr(colon + 1))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speaker-identification membership inference laboratory"};
    app.require_subcommand(1);

    // synth ------------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Synthesize a corpus directory");
    std::string synth_out = "corpus";
    int n_speakers = 20, clips = 40;
    std::string condition = "clean", reverb = "room_a";
    double snr = 15.0;
    uint64_t master_seed = 1234, split_seed = 7;
    int threads = 2;
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--n-speakers", n_speakers);
    synth->add_option("--clips-per-speaker", clips);
    synth->add_option("--condition", condition)->check(CLI::IsMember({"clean", "noisy"}));
    synth->add_option("--snr-db", snr);
    synth->add_option("--reverb", reverb)->check(CLI::IsMember({"none", "room_a", "room_b"}));
    synth->add_option("--seed", master_seed);
    synth->add_option("--split-seed", split_seed);
    synth->add_option("--threads", threads);
    bool cache_spectrograms = false;
    synth->add_flag("--cache-spectrograms", cache_spectrograms,
                    "Also write per-clip *.spec.f32 magnitude spectrograms");
    synth->callback([&] {
        CorpusSpec spec;
        spec.n_speakers = n_speakers;
        spec.clips_per_speaker = clips;
        spec.condition = condition_from_string(condition);
        spec.noise_snr_db = snr;
        spec.reverb_preset = reverb_from_string(reverb);
        spec.master_seed = master_seed;
        const Corpus corpus = build_corpus(spec, threads);
        const SplitPlan plan = plan_splits(corpus, split_seed);
        save_corpus(corpus, plan, synth_out);
        if (cache_spectrograms) {
            for (const auto& clip : corpus.clips) {
                const Spectrogram s = stft_magnitude(clip);
                save_spectrogram(std::filesystem::path(synth_out) /
                                     ("spk" + std::to_string(clip.speaker_id) + "_clip" +
                                      std::to_string(clip.clip_id) + ".spec.f32"),
                                 s);
            }
        }
        std::cout << "corpus: " << synth_out << "\ndigest: " << corpus_digest(corpus)
                  << std::endl;
    });

    // train-target / train-shadow ---------------------------------------------
    std::string corpus_dir = "corpus", out_dir = "model";
    double alpha = 0.0;
    uint64_t seed = 1;
    int epochs = 0;
    for (const std::string which : {"target", "shadow"}) {
        auto* cmd = app.add_subcommand("train-" + which,
                                       "Train the " + which + " SID model");
        cmd->add_option("--corpus", corpus_dir);
        cmd->add_option("--out", out_dir);
        cmd->add_option("--alpha", alpha, "L2 regularization weight");
        cmd->add_option("--seed", seed);
        cmd->add_option("--epochs", epochs);
        cmd->add_option("--threads", threads);
        const bool is_target = which == "target";
        cmd->callback([&, is_target] {
            CorpusBundle bundle(corpus_dir, threads);
            const auto& speakers =
                is_target ? bundle.plan.target_speakers : bundle.plan.shadow_speakers;
            const auto train = bundle.plan.cohort_refs(speakers, &SpeakerSplit::in_train);
            const auto eval = bundle.plan.cohort_refs(speakers, &SpeakerSplit::in_eval);
            SidTrainOptions options;
            options.config = sid_config_from_cli(alpha, seed, epochs);
            auto [model, report] = train_sid(bundle.cache, train, eval,
                                             nn::default_sid_arch(speakers.size()), options);
            save_sid_model(model, options.config.to_json(), out_dir);
            std::cout << json{{"train_acc", report.final_train_acc},
                              {"test_acc", report.final_eval_acc},
                              {"epochs", report.epochs.size()},
                              {"checkpoint", out_dir}}
                             .dump(2)
                      << std::endl;
        });
    }

    // train-attack -------------------------------------------------------------
    auto* tattack = app.add_subcommand("train-attack",
                                       "Train the membership attack from a shadow model");
    std::string shadow_dir = "shadow";
    tattack->add_option("--corpus", corpus_dir);
    tattack->add_option("--shadow", shadow_dir);
    tattack->add_option("--out", out_dir);
    tattack->add_option("--seed", seed);
    tattack->add_option("--threads", threads);
    std::string records_csv;
    tattack->add_option("--export-records", records_csv,
                        "Also write the attack dataset as CSV");
    tattack->callback([&] {
        CorpusBundle bundle(corpus_dir, threads);
        const SidModel shadow = load_sid_model(shadow_dir);
        const auto train_pool = bundle.plan.attack_train_pool();
        const auto val_pool = bundle.plan.attack_val_pool();
        const auto records =
            build_attack_dataset(shadow, bundle.cache, train_pool.members,
                                 train_pool.nonmembers, RecordSource::shadow);
        const auto val_records =
            build_attack_dataset(shadow, bundle.cache, val_pool.members, val_pool.nonmembers,
                                 RecordSource::shadow);
        if (!records_csv.empty()) export_attack_csv(records, records_csv);
        const AttackModel attack = train_attack(records, default_attack_train_config(seed));
        const double threshold = select_threshold(attack, val_records);
        save_attack_model(attack, threshold, default_attack_train_config(seed).to_json(),
                          out_dir);
        std::cout << json{{"threshold", threshold},
                          {"train_records", records.size()},
                          {"checkpoint", out_dir}}
                         .dump(2)
                  << std::endl;
    });

    // evaluate ------------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate target and attack locally");
    std::string target_dir = "target", attack_dir;
    eval_cmd->add_option("--corpus", corpus_dir);
    eval_cmd->add_option("--target", target_dir);
    eval_cmd->add_option("--attack", attack_dir);
    eval_cmd->add_option("--threads", threads);
    eval_cmd->callback([&] {
        CorpusBundle bundle(corpus_dir, threads);
        const SidModel target = load_sid_model(target_dir);
        const auto train =
            bundle.plan.cohort_refs(bundle.plan.target_speakers, &SpeakerSplit::in_train);
        const auto eval =
            bundle.plan.cohort_refs(bundle.plan.target_speakers, &SpeakerSplit::in_eval);
        json out = {{"target_train_acc", evaluate_sid_cached(target, bundle.cache, train)},
                    {"target_test_acc", evaluate_sid_cached(target, bundle.cache, eval)}};
        if (!attack_dir.empty()) {
            const auto [attack, threshold] = load_attack_model(attack_dir);
            const auto pool = bundle.plan.attack_eval_pool();
            out["attack"] = metrics_to_json(evaluate_attack(
                attack, threshold, target, bundle.cache, pool.members, pool.nonmembers));
        }
        std::cout << out.dump(2) << std::endl;
    });

    // defend ----------------------------------------------------------------------
    auto* defend = app.add_subcommand("defend", "Train a defended target model");
    std::string defense = "l2";
    double param = 0.0;
    defend->add_option("--corpus", corpus_dir);
    defend->add_option("--out", out_dir);
    defend->add_option("--defense", defense)
        ->check(CLI::IsMember({"l2", "advreg", "distill", "key"}));
    defend->add_option("--param", param,
                       "alpha (l2), lambda (advreg), T (distill), amplitude (key)");
    defend->add_option("--seed", seed);
    defend->add_option("--threads", threads);
    defend->callback([&] {
        CorpusBundle bundle(corpus_dir, threads);
        const auto& speakers = bundle.plan.target_speakers;
        const auto train = bundle.plan.cohort_refs(speakers, &SpeakerSplit::in_train);
        const auto eval = bundle.plan.cohort_refs(speakers, &SpeakerSplit::in_eval);
        const auto arch = nn::default_sid_arch(speakers.size());
        const nn::TrainConfig base = sid_config_from_cli(0.0, seed, epochs);
        json summary;
        if (defense == "l2") {
            SidTrainOptions options;
            options.config = base;
            options.config.l2_alpha = param;
            auto [model, report] = train_sid(bundle.cache, train, eval, arch, options);
            model.defense = {{"kind", "l2"}, {"alpha", param}};
            save_sid_model(model, options.config.to_json(), out_dir);
            summary = {{"train_acc", report.final_train_acc},
                       {"test_acc", report.final_eval_acc}};
        } else if (defense == "advreg") {
            AdvRegConfig cfg;
            cfg.privacy_lambda = param;
            auto [model, report] = train_adversarially_regularized(
                bundle.cache, train, eval,
                bundle.plan.defender_reference(cfg.reference_fraction), arch, cfg, base);
            save_sid_model(model, base.to_json(), out_dir);
            summary = {{"train_acc", report.final_train_acc},
                       {"test_acc", report.final_eval_acc}};
        } else if (defense == "distill") {
            DistillConfig cfg;
            cfg.temperature = param > 0 ? param : 1.0;
            cfg.teacher_config = base;
            cfg.teacher_config.seed = seed_combine(seed, 0x74);
            cfg.student_config = base;
            cfg.student_config.seed = seed_combine(seed, 0x73);
            auto [model, report] = train_distilled(bundle.cache, train, eval, arch, cfg);
            save_sid_model(model, base.to_json(), out_dir);
            summary = {{"train_acc", report.final_train_acc},
                       {"test_acc", report.final_eval_acc}};
        } else {
            KeyConfig cfg = default_experiment_spec().key_config;
            if (param > 0) cfg.noise_amplitude = param;
            cfg.key_seed = seed_combine(cfg.key_seed, seed);
            cfg.detector_config.seed = seed_combine(seed, 0x64);
            const FeatureCache keyed_cache(
                bundle.corpus,
                [&](const AudioClip& clip) {
                    return apply_key(clip, cfg.noise_amplitude,
                                     key_noise_seed(cfg, {clip.speaker_id, clip.clip_id}));
                },
                threads);
            KeyedModel keyed = train_keyed(bundle.corpus, keyed_cache, bundle.cache, train,
                                           eval, arch, cfg, base);
            save_keyed_model(keyed, base.to_json(), out_dir);
            summary = {{"train_acc", keyed.report.final_train_acc},
                       {"test_acc", keyed.report.final_eval_acc},
                       {"detector_validation_acc", keyed.detector.validation_accuracy}};
        }
        summary["checkpoint"] = out_dir;
        std::cout << summary.dump(2) << std::endl;
    });

    // serve ---------------------------------------------------------------------------
    auto* serve_cmd = app.add_subcommand("serve", "Serve a checkpoint over HTTP");
    std::string checkpoint = "target", obfuscation = "full", address = "127.0.0.1";
    int port = 8080, max_concurrent = 8;
    serve_cmd->add_option("--checkpoint", checkpoint);
    serve_cmd->add_option("--port", port);
    serve_cmd->add_option("--address", address);
    serve_cmd->add_option("--obfuscation", obfuscation, "full | topk:K | rank");
    serve_cmd->add_option("--max-concurrent", max_concurrent);
    serve_cmd->callback([&] {
        ServeConfig cfg;
        cfg.checkpoint = checkpoint;
        cfg.obfuscation = ObfuscationConfig::parse(obfuscation);
        cfg.bind_address = address;
        cfg.port = port;
        cfg.max_concurrent = max_concurrent;
        ModelServer server(cfg);
        const int bound = server.start();
        std::cout << "serving " << checkpoint << " on " << address << ":" << bound
                  << " (obfuscation: " << obfuscation << ")" << std::endl;
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    });

    // attack-remote ---------------------------------------------------------------------
    auto* remote = app.add_subcommand("attack-remote",
                                      "Run the membership attack against an endpoint");
    std::string endpoint_text = "127.0.0.1:8080";
    remote->add_option("--endpoint", endpoint_text, "host:port");
    remote->add_option("--corpus", corpus_dir);
    remote->add_option("--attack", attack_dir)->required();
    remote->add_option("--threads", threads);
    remote->callback([&] {
        CorpusBundle bundle(corpus_dir, threads);
        const auto [attack, threshold] = load_attack_model(attack_dir);
        const auto pool = bundle.plan.attack_eval_pool();
        const auto metrics = remote_attack(parse_endpoint(endpoint_text), attack, threshold,
                                           bundle.corpus, pool.members, pool.nonmembers);
        std::cout << metrics_to_json(metrics).dump(2) << std::endl;
    });

    // experiment ---------------------------------------------------------------------------
    auto* experiment = app.add_subcommand("experiment", "Run a full experiment grid");
    std::string config_path;
    std::string exp_out;
    uint64_t seed_override = 0;
    bool have_seed_override = false;
    experiment->add_option("--config", config_path, "JSON ExperimentSpec")->required();
    experiment->add_option("--out", exp_out, "Override output directory");
    experiment->add_option("--seed", seed_override, "Run a single seed instead")
        ->each([&](const std::string&) { have_seed_override = true; });
    experiment->callback([&] {
        ExperimentSpec spec =
            ExperimentSpec::from_json(json::parse(read_text(config_path)));
        if (!exp_out.empty()) spec.output_dir = exp_out;
        if (have_seed_override) spec.seeds = {seed_override};
        const ExperimentResult result = run_experiment(spec);
        if (!result.rows.empty()) {
            render_report(result.rows, spec, result.failures, spec.output_dir);
            std::cout << render_table(result.rows);
            std::cout << "reports: " << spec.output_dir.string() << std::endl;
        }
        for (const auto& f : result.failures) std::cerr << "FAILED " << f << std::endl;
        if (!result.failures.empty()) throw CLI::RuntimeError("grid points failed", 1);
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}
