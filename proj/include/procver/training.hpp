#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "procver/dataset.hpp"
#include "procver/model.hpp"
#include "procver/rng.hpp"
#include "procver/tensor.hpp"

namespace procver {

struct TrainConfig {
    std::size_t batch_size = 16;   // even: every batch is positive pairs
    std::size_t total_epochs = 10;
    double base_lr = 1e-4;
    double weight_decay = 0.01;
    double lambda = 1.0;           // alignment-loss weight; 0 disables it
    std::size_t k = 16;            // sampled frames per clip, must match the model
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0; // extra epoch_NNN snapshots; 0 = best/last only
    std::size_t eval_every = 1;       // epochs between validation passes
    double aug_sigma = 0.0;           // train-time Gaussian feature jitter
    double clip_norm = 5.0;           // global gradient-norm ceiling
    std::size_t val_pairs = 64;       // target positives and negatives each
};

void validate(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double cls = 0.0;
    double seq = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    bool clipped = false;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double val_auc = 0.0;
    std::size_t after_step = 0; // steps completed when this was recorded
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;

    std::string to_jsonl() const; // one JSON object per line, byte-stable
};

// Training labels: procedures sorted by (task_id, procedure_id) take class
// indices 0..C-1.
std::map<std::string, std::size_t> class_index_map(const std::vector<const ProcedureRecord*>& procs);

// One positive pair: two distinct videos of the same procedure.
struct BatchPair {
    const ProcedureRecord* procedure = nullptr;
    const VideoRecord* a = nullptr;
    const VideoRecord* b = nullptr;
    std::size_t label = 0;
};

// Draws batch_size/2 positive pairs from procedures that have at least two
// videos.
std::vector<BatchPair> build_batch(const std::vector<const ProcedureRecord*>& procs,
                                   const std::map<std::string, std::size_t>& labels,
                                   std::size_t batch_size, Rng& rng);

// Every feature file of the dataset, preloaded and keyed by video id.
class FeatureStore {
public:
    explicit FeatureStore(const Dataset& ds);
    const Tensor& features(const std::string& video_id) const;

private:
    std::map<std::string, Tensor> table_;
};

// Train-mode clip: per-segment random frames plus optional feature jitter.
Tensor make_train_clip(const Tensor& features, std::size_t k, double aug_sigma, Rng& rng);

struct TrainResult {
    CatModel model;      // final-epoch weights
    TrainLog log;        // records produced by this call (resume logs its own tail)
    std::string last_checkpoint;
    std::string best_checkpoint; // empty when no validation pass ran
    double best_val_auc = -1.0;
    std::size_t best_epoch = 0;
};

// Optimizes the joint classification + alignment objective with Adam under a
// cosine schedule; writes last/best (and optional periodic) checkpoints plus
// a JSONL log into out_dir. Divergence aborts with NumericError.
TrainResult train(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::string& out_dir);

// Continues a run from a checkpoint written by train(); the dataset must be
// the one the run started from. The trajectory is identical to the
// uninterrupted run.
TrainResult resume_training(const Dataset& ds, const std::string& checkpoint_path,
                            const std::string& out_dir);

} // namespace procver
