#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "da4lg/dataset.hpp"
#include "da4lg/model.hpp"
#include "da4lg/objectives.hpp"
#include "da4lg/tape.hpp"

namespace da4lg {

enum class ViewMode { multi, single };
ViewMode view_mode_from_string(const std::string& s);

struct TrainConfig {
    int batch_size = 64;
    int epochs = 60;
    double learning_rate = 5e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    std::string policy = "domain_adapter";
    int adapter_rank = 4;
    double adapter_alpha = 4.0;
    TaskMask task_mask;
    ViewMode view_mode = ViewMode::multi;
    int single_view_index = 0;
    VlcMode vlc_mode = VlcMode::infonce;
    double vlc_temperature = 0.07;
    int prefix_tokens = 4;

    TrainingPolicy training_policy() const;
};

// Flat `key = value` file; the key set is closed and unknown keys are rejected.
TrainConfig train_config_from_file(const std::string& path);

// Frozen-encoder features, computed once per dataset (the vision and language
// encoders never change during training).
struct FeatureCache {
    std::map<std::string, std::vector<Mat>> f_v;          // object_id -> per selected view
    std::map<std::string, Mat> f_l;                       // reference_id
    std::map<std::string, std::vector<int>> tokens;       // reference_id
    std::vector<int> view_indices;                        // selected views (J or 1 of them)
};

FeatureCache build_feature_cache(const GroundingModel& model, const GroundingDataset& ds,
                                 ViewMode mode, int single_view_index);

struct BatchLoss {
    int node = -1;  // total loss node on the tape
    double lgr = 0.0, vlc = 0.0, vgc = 0.0, total = 0.0;
};

// Builds the full multi-task loss for one batch of references on the tape.
// Binds must wrap the model's domain/head/prefix/decoder stores on the same tape.
BatchLoss batch_loss_on_tape(ad::Tape& t, TapeBind& domain_bind, TapeBind& head_bind,
                             TapeBind& prefix_bind, TapeBind& decoder_bind, GroundingModel& model,
                             const GroundingDataset& ds,
                             const std::vector<const ReferenceRecord*>& refs,
                             const FeatureCache& cache, const TrainConfig& cfg);

struct EpochMetrics {
    int epoch = 0;
    double loss_lgr = 0, loss_vlc = 0, loss_vgc = 0, loss_total = 0;
    double val_acc_all = 0, val_acc_visual = 0, val_acc_blind = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    int best_epoch = -1;
    double best_val_acc = 0.0;
};

class AdamOptimizer {
public:
    AdamOptimizer(double lr, double wd, double beta1, double beta2, double eps)
        : lr_(lr), wd_(wd), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    // grads keyed "group.name"; only trainable parameters are updated.
    void step(GroundingModel& model, const std::map<std::string, Mat>& grads);

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> state_;  // first/second moments
};

// Runs one optimizer step over a batch; returns the loss terms. Used by the
// train loop and directly by tests.
BatchLoss train_step(GroundingModel& model, const GroundingDataset& ds,
                     const std::vector<const ReferenceRecord*>& refs, const FeatureCache& cache,
                     const TrainConfig& cfg, AdamOptimizer& opt);

// Full epoch loop with metrics and checkpointing. If out_dir is non-empty,
// writes metrics.jsonl plus checkpoint_final/ and checkpoint_best/.
TrainResult train(GroundingModel& model, const GroundingDataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace da4lg
