#pragma once

// Shared mini-scale fixtures: small corpora and narrow architectures keep the
// unit suites fast while exercising the full pipeline.

#include "sidlab/corpus.hpp"
#include "sidlab/nn.hpp"
#include "sidlab/sid.hpp"

namespace sidlab::testing {

inline CorpusSpec mini_spec(Condition condition = Condition::clean,
                            uint64_t master_seed = 501) {
    CorpusSpec spec;
    spec.n_speakers = 8;
    spec.clips_per_speaker = 8;
    spec.condition = condition;
    spec.noise_snr_db = 15.0;
    spec.reverb_preset = ReverbPreset::room_a;
    spec.master_seed = master_seed;
    return spec;
}

inline nn::SidArch mini_arch(int n_classes) {
    nn::SidArch arch;
    arch.in_channels = 257;
    arch.in_frames = 298;
    arch.blocks = {{8, 7, 2, true}, {8, 7, 2, true}, {8, 7, 2, true}};
    arch.hidden = 32;
    arch.n_classes = n_classes;
    return arch;
}

inline nn::TrainConfig mini_train_config(uint64_t seed, int max_epochs = 120) {
    nn::TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 0;  // full batch
    cfg.max_epochs = max_epochs;
    cfg.optimizer = nn::OptimizerKind::adam;
    cfg.seed = seed;
    cfg.early_stop_train_acc = 1.01;
    return cfg;
}

struct MiniPipeline {
    Corpus corpus;
    SplitPlan plan;
    FeatureCache cache;

    explicit MiniPipeline(const CorpusSpec& spec, uint64_t split_seed = 11)
        : corpus(build_corpus(spec, 2)),
          plan(plan_splits(corpus, split_seed)),
          cache(corpus, 2) {}
};

}  // namespace sidlab::testing
