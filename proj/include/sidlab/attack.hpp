#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sidlab/sid.hpp"

namespace sidlab {

// Top-3 posterior probabilities, sorted descending; class identities are
// discarded so the attack transfers across models with different class
// counts.
struct AttackFeature {
    std::array<float, 3> p{0.0f, 0.0f, 0.0f};
};

enum class MemberLabel { member, nonmember };
enum class RecordSource { shadow, target };

struct MembershipRecord {
    AttackFeature feature;
    MemberLabel label = MemberLabel::nonmember;
    RecordSource source = RecordSource::shadow;
    int clip_id = -1;
    int speaker_id = -1;
};

struct AttackMetrics {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    double precision = 0.0;  // 0 with degenerate flag when tp+fp == 0
    double recall = 0.0;
    double threshold = 0.5;
    bool degenerate_precision = false;
};

struct AttackModel {
    nn::MlpArch arch;
    nn::ParamSet params;
};

// Three largest entries, sorted descending. Throws when fewer than 3 classes.
AttackFeature extract_attack_feature(const std::vector<float>& posterior);

// One record per clip: member for in_refs (clips seen in SID training),
// nonmember for out_refs. Requires |in| == |out| and clips inside the model's
// cohort.
std::vector<MembershipRecord> build_attack_dataset(const SidModel& model,
                                                   const FeatureCache& cache,
                                                   const std::vector<ClipRef>& in_refs,
                                                   const std::vector<ClipRef>& out_refs,
                                                   RecordSource source);

nn::TrainConfig default_attack_train_config(uint64_t seed);

// Binary classifier 3 -> 64 -> 64 -> 1 (ReLU hidden, sigmoid output) trained
// with binary cross-entropy. Records must be shadow-sourced and balanced.
AttackModel train_attack(const std::vector<MembershipRecord>& records,
                         const nn::TrainConfig& config);

// Sigmoid membership score.
double attack_score(const AttackModel& model, const AttackFeature& feature);

// Threshold from {0.000, 0.001, ..., 1.000} maximizing validation accuracy;
// ties break toward 0.5 (then toward the smaller threshold). Validation
// records must be balanced, shadow-sourced, disjoint from training.
double select_threshold(const AttackModel& model,
                        const std::vector<MembershipRecord>& validation);

// Same sweep over arbitrary balanced feature pools. This is the leaky
// "highest overall attack accuracy" reading where the threshold is tuned on
// the evaluation data itself; kept behind an explicit call site.
double select_threshold_on_features(const AttackModel& model,
                                    const std::vector<AttackFeature>& member_features,
                                    const std::vector<AttackFeature>& nonmember_features);

// score >= threshold => member.
AttackMetrics evaluate_attack_features(const AttackModel& model, double threshold,
                                       const std::vector<AttackFeature>& member_features,
                                       const std::vector<AttackFeature>& nonmember_features);

AttackMetrics evaluate_attack(const AttackModel& model, double threshold,
                              const SidModel& target, const FeatureCache& cache,
                              const std::vector<ClipRef>& in_refs,
                              const std::vector<ClipRef>& out_refs);

// p1,p2,p3,label,source,speaker_id,clip_id
void export_attack_csv(const std::vector<MembershipRecord>& records,
                       const std::filesystem::path& path);

void save_attack_model(const AttackModel& model, double threshold,
                       const nlohmann::json& train_config,
                       const std::filesystem::path& dir);
std::pair<AttackModel, double> load_attack_model(const std::filesystem::path& dir);

}  // namespace sidlab
