#include "sidlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "sidlab/io.hpp"
#include "sidlab/rng.hpp"

namespace sidlab {

namespace {

constexpr uint64_t kTagAttackInit = 0x61746b69;
constexpr uint64_t kTagAttackShuffle = 0x61746b73;

}  // namespace

AttackFeature extract_attack_feature(const std::vector<float>& posterior) {
    if (posterior.size() < 3)
        throw std::invalid_argument("posterior must cover at least 3 classes");
    AttackFeature f;
    // partial selection of the three largest values
    float a = -1.0f, b = -1.0f, c = -1.0f;
    for (float v : posterior) {
        if (v > a) {
            c = b;
            b = a;
            a = v;
        } else if (v > b) {
            c = b;
            b = v;
        } else if (v > c) {
            c = v;
        }
    }
    f.p = {a, b, c};
    return f;
}

std::vector<MembershipRecord> build_attack_dataset(const SidModel& model,
                                                   const FeatureCache& cache,
                                                   const std::vector<ClipRef>& in_refs,
                                                   const std::vector<ClipRef>& out_refs,
                                                   RecordSource source) {
    if (in_refs.empty()) throw std::invalid_argument("empty membership pools");
    if (in_refs.size() != out_refs.size())
        throw std::invalid_argument("in/out pools must be evenly sized");
    std::vector<MembershipRecord> records;
    records.reserve(in_refs.size() * 2);
    SidPredictor predictor(model);
    auto add = [&](const ClipRef& ref, MemberLabel label) {
        MembershipRecord r;
        r.feature = extract_attack_feature(predictor.posteriors(cache, ref));
        r.label = label;
        r.source = source;
        r.clip_id = ref.clip_id;
        r.speaker_id = ref.speaker_id;
        records.push_back(r);
    };
    for (const auto& ref : in_refs) add(ref, MemberLabel::member);
    for (const auto& ref : out_refs) add(ref, MemberLabel::nonmember);
    return records;
}

nn::TrainConfig default_attack_train_config(uint64_t seed) {
    nn::TrainConfig c;
    c.learning_rate = 3e-3;
    c.l2_alpha = 0.0;
    c.batch_size = 0;  // full batch
    c.max_epochs = 300;
    c.optimizer = nn::OptimizerKind::adam;
    c.seed = seed;
    c.early_stop_train_acc = 1.1;  // run all epochs
    return c;
}

AttackModel train_attack(const std::vector<MembershipRecord>& records,
                         const nn::TrainConfig& config) {
    config.validate();
    if (records.empty()) throw std::invalid_argument("no attack records");
    int64_t members = 0;
    for (const auto& r : records) {
        if (r.source == RecordSource::target)
            throw std::invalid_argument("target-sourced records may not enter attack training");
        if (r.label == MemberLabel::member) ++members;
    }
    if (members * 2 != static_cast<int64_t>(records.size()))
        throw std::invalid_argument("attack training records must be balanced");

    const nn::MlpArch arch = nn::attack_arch();
    nn::MlpNetT<float> net(
        arch, nn::MlpNetT<float>::init_params(arch, seed_combine(config.seed, kTagAttackInit)));
    nn::OptState opt_state;
    opt_state.init(net.params());
    nn::GradAccum acc;
    acc.init(net.params());

    const int n = static_cast<int>(records.size());
    std::vector<std::vector<float>> inputs(n);
    std::vector<float> targets(n);
    for (int i = 0; i < n; ++i) {
        inputs[i] = {records[i].feature.p[0], records[i].feature.p[1], records[i].feature.p[2]};
        targets[i] = records[i].label == MemberLabel::member ? 1.0f : 0.0f;
    }

    const bool full_batch = config.batch_size == 0 || config.batch_size >= n;
    const int batch_size = full_batch ? n : config.batch_size;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(seed_combine(config.seed, kTagAttackShuffle));

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        // Full-batch updates see the whole gradient; shuffling is a no-op
        // there and is skipped so record order never perturbs float sums.
        if (!full_batch) shuffle_rng.shuffle(order);
        int correct = 0;
        for (int start = 0; start < n; start += batch_size) {
            const int end = std::min(start + batch_size, n);
            acc.zero();
            for (int k = start; k < end; ++k) {
                const int idx = order[k];
                const float logit = net.forward(inputs[idx], true);
                float dlogit;
                nn::bce_loss_grad(logit, targets[idx], dlogit);
                if ((nn::sigmoid(logit) >= 0.5f) == (targets[idx] >= 0.5f)) ++correct;
                net.backward(dlogit, acc);
            }
            const auto grads =
                acc.finalize(net.params(), 1.0 / (end - start), config.l2_alpha);
            nn::optimizer_step(net.params(), grads, opt_state, config);
        }
        if (static_cast<double>(correct) / n >= config.early_stop_train_acc) break;
    }
    return AttackModel{arch, std::move(net.params())};
}

double attack_score(const AttackModel& model, const AttackFeature& feature) {
    nn::MlpNetT<float> net(model.arch, model.params);
    const std::vector<float> x = {feature.p[0], feature.p[1], feature.p[2]};
    return static_cast<double>(nn::sigmoid(net.forward(x, false)));
}

namespace {

struct ScoredRecords {
    std::vector<double> member_scores;
    std::vector<double> nonmember_scores;
};

ScoredRecords score_records(const AttackModel& model,
                            const std::vector<MembershipRecord>& records) {
    nn::MlpNetT<float> net(model.arch, model.params);
    ScoredRecords out;
    for (const auto& r : records) {
        const std::vector<float> x = {r.feature.p[0], r.feature.p[1], r.feature.p[2]};
        const double s = static_cast<double>(nn::sigmoid(net.forward(x, false)));
        (r.label == MemberLabel::member ? out.member_scores : out.nonmember_scores)
            .push_back(s);
    }
    return out;
}

AttackMetrics metrics_from_scores(const std::vector<double>& member_scores,
                                  const std::vector<double>& nonmember_scores,
                                  double threshold) {
    AttackMetrics m;
    m.threshold = threshold;
    for (double s : member_scores) (s >= threshold ? m.tp : m.fn) += 1;
    for (double s : nonmember_scores) (s >= threshold ? m.fp : m.tn) += 1;
    const int64_t total = m.tp + m.fp + m.tn + m.fn;
    m.accuracy = total > 0 ? static_cast<double>(m.tp + m.tn) / total : 0.0;
    if (m.tp + m.fp == 0) {
        m.precision = 0.0;
        m.degenerate_precision = true;
    } else {
        m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    }
    m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
    return m;
}

}  // namespace

namespace {

double sweep_threshold(const std::vector<double>& member_scores,
                       const std::vector<double>& nonmember_scores) {
    double best_threshold = 0.5;
    double best_acc = -1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double t = static_cast<double>(i) / 1000.0;
        const AttackMetrics m = metrics_from_scores(member_scores, nonmember_scores, t);
        const bool better =
            m.accuracy > best_acc + 1e-12 ||
            (std::fabs(m.accuracy - best_acc) <= 1e-12 &&
             std::fabs(t - 0.5) < std::fabs(best_threshold - 0.5) - 1e-12);
        if (better) {
            best_acc = m.accuracy;
            best_threshold = t;
        }
    }
    return best_threshold;
}

}  // namespace

double select_threshold(const AttackModel& model,
                        const std::vector<MembershipRecord>& validation) {
    if (validation.empty()) throw std::invalid_argument("empty validation set");
    for (const auto& r : validation)
        if (r.source == RecordSource::target)
            throw std::invalid_argument("threshold selection must use shadow-sourced records");
    const ScoredRecords scored = score_records(model, validation);
    if (scored.member_scores.size() != scored.nonmember_scores.size())
        throw std::invalid_argument("validation records must be balanced");
    return sweep_threshold(scored.member_scores, scored.nonmember_scores);
}

double select_threshold_on_features(const AttackModel& model,
                                    const std::vector<AttackFeature>& member_features,
                                    const std::vector<AttackFeature>& nonmember_features) {
    if (member_features.empty() || member_features.size() != nonmember_features.size())
        throw std::invalid_argument("threshold pools must be balanced and non-empty");
    nn::MlpNetT<float> net(model.arch, model.params);
    auto score = [&](const AttackFeature& f) {
        const std::vector<float> x = {f.p[0], f.p[1], f.p[2]};
        return static_cast<double>(nn::sigmoid(net.forward(x, false)));
    };
    std::vector<double> member_scores, nonmember_scores;
    for (const auto& f : member_features) member_scores.push_back(score(f));
    for (const auto& f : nonmember_features) nonmember_scores.push_back(score(f));
    return sweep_threshold(member_scores, nonmember_scores);
}

AttackMetrics evaluate_attack_features(const AttackModel& model, double threshold,
                                       const std::vector<AttackFeature>& member_features,
                                       const std::vector<AttackFeature>& nonmember_features) {
    if (member_features.empty() || member_features.size() != nonmember_features.size())
        throw std::invalid_argument("attack evaluation pools must be balanced");
    nn::MlpNetT<float> net(model.arch, model.params);
    auto score = [&](const AttackFeature& f) {
        const std::vector<float> x = {f.p[0], f.p[1], f.p[2]};
        return static_cast<double>(nn::sigmoid(net.forward(x, false)));
    };
    std::vector<double> member_scores, nonmember_scores;
    member_scores.reserve(member_features.size());
    nonmember_scores.reserve(nonmember_features.size());
    for (const auto& f : member_features) member_scores.push_back(score(f));
    for (const auto& f : nonmember_features) nonmember_scores.push_back(score(f));
    return metrics_from_scores(member_scores, nonmember_scores, threshold);
}

AttackMetrics evaluate_attack(const AttackModel& model, double threshold,
                              const SidModel& target, const FeatureCache& cache,
                              const std::vector<ClipRef>& in_refs,
                              const std::vector<ClipRef>& out_refs) {
    if (in_refs.size() != out_refs.size())
        throw std::invalid_argument("attack evaluation pools must be balanced");
    SidPredictor predictor(target);
    std::vector<AttackFeature> member_features, nonmember_features;
    for (const auto& ref : in_refs)
        member_features.push_back(extract_attack_feature(predictor.posteriors(cache, ref)));
    for (const auto& ref : out_refs)
        nonmember_features.push_back(extract_attack_feature(predictor.posteriors(cache, ref)));
    return evaluate_attack_features(model, threshold, member_features, nonmember_features);
}

void export_attack_csv(const std::vector<MembershipRecord>& records,
                       const std::filesystem::path& path) {
    std::string out = "p1,p2,p3,label,source,speaker_id,clip_id\n";
    char line[160];
    for (const auto& r : records) {
        std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g,%s,%s,%d,%d\n",
                      static_cast<double>(r.feature.p[0]), static_cast<double>(r.feature.p[1]),
                      static_cast<double>(r.feature.p[2]),
                      r.label == MemberLabel::member ? "member" : "nonmember",
                      r.source == RecordSource::shadow ? "shadow" : "target", r.speaker_id,
                      r.clip_id);
        out += line;
    }
    write_text(path, out);
}

void save_attack_model(const AttackModel& model, double threshold,
                       const nlohmann::json& train_config,
                       const std::filesystem::path& dir) {
    Checkpoint ckpt;
    ckpt.kind = "mlp";
    ckpt.arch = model.arch.to_json();
    ckpt.train_config = train_config;
    ckpt.extra = {{"role", "attack"}, {"threshold", threshold}};
    ckpt.params = model.params;
    save_checkpoint(ckpt, dir);
}

std::pair<AttackModel, double> load_attack_model(const std::filesystem::path& dir) {
    Checkpoint ckpt = load_checkpoint(dir);
    if (ckpt.kind != "mlp") throw std::runtime_error("checkpoint is not an attack model");
    AttackModel model{nn::MlpArch::from_json(ckpt.arch), std::move(ckpt.params)};
    return {std::move(model), ckpt.extra.at("threshold").get<double>()};
}

}  // namespace sidlab
