#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sidlab/attack.hpp"
#include "sidlab/defenses.hpp"
#include "sidlab/sid.hpp"

namespace sidlab {

struct DefenseGrid {
    std::vector<double> alphas;             // baseline L2 sweep
    std::vector<double> lambdas;            // adversarial regularization
    std::vector<std::string> obfuscations;  // "rank", "topk:K"
    std::vector<double> temperatures;       // distillation
    bool key = false;
};

struct ExperimentSpec {
    CorpusSpec corpus;
    uint64_t split_seed = 7;
    std::vector<uint64_t> seeds = {1, 2, 3};
    DefenseGrid grid;
    nn::TrainConfig sid_train;     // base config for shadow/target/defenses
    nn::TrainConfig attack_train;  // attack network training
    AdvRegConfig advreg;           // lambda comes from the grid
    KeyConfig key_config;
    bool distill_serve_softened = true;
    // "shadow": threshold frozen on the shadow-side validation split
    // (default). "target-eval": the leaky reading where the threshold is
    // tuned on the evaluation records themselves.
    std::string threshold_selection = "shadow";
    int threads = 1;  // grid points run in parallel; each is single-threaded
    std::filesystem::path output_dir = "out";

    nlohmann::json to_json() const;
    static ExperimentSpec from_json(const nlohmann::json& j);
};

ExperimentSpec default_experiment_spec();

struct ReportRow {
    std::string dataset_condition;
    std::string defense;    // baseline|advreg|obfuscation|distill|key
    std::string parameter;  // e.g. "alpha=0.01", "lambda=3", "rank", "T=100"
    double target_train_acc = 0.0;
    double target_test_acc = 0.0;
    double attack_acc = 0.0;
    double attack_prec = 0.0;
    double attack_rec = 0.0;
    uint64_t seed = 0;
    double runtime_s = 0.0;
};

struct ExperimentResult {
    std::vector<ReportRow> rows;
    std::vector<std::string> failures;  // "defense/parameter/seed: reason"
};

// Full pipeline per (grid point, seed): corpus -> splits -> shadow -> attack
// dataset -> attack + threshold -> defended target -> evaluation. The corpus
// and per-seed shadow/attack stages are shared across grid points. A failing
// grid point is logged and skipped; the rest proceed.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// results.csv (deterministic; runtime_s column reserved, see results.json for
// measured timings), results.json, figure_data.csv with per-defense groups of
// median series.
void render_report(const std::vector<ReportRow>& rows, const ExperimentSpec& spec,
                   const std::vector<std::string>& failures,
                   const std::filesystem::path& dir);

// Human-readable table, percentages with round-half-even to one decimal.
std::string render_table(const std::vector<ReportRow>& rows);

// 0.879 -> "87.9"
std::string format_percent(double rate);

double median(std::vector<double> values);

}  // namespace sidlab
