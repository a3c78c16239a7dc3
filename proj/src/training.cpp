#include "procver/training.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "procver/checkpoint.hpp"
#include "procver/errors.hpp"
#include "procver/eval.hpp"
#include "procver/losses.hpp"
#include "procver/optim.hpp"
#include "procver/pvft.hpp"
#include "procver/sampling.hpp"

namespace procver {

using nlohmann::json;
namespace fs = std::filesystem;

void validate(const TrainConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (cfg.batch_size < 2 || cfg.batch_size % 2 != 0) {
        fail("batch_size must be even and at least 2");
    }
    if (cfg.total_epochs == 0) {
        fail("total_epochs must be positive");
    }
    if (!(cfg.base_lr > 0.0)) {
        fail("base_lr must be positive");
    }
    if (cfg.weight_decay < 0.0) {
        fail("weight_decay must be nonnegative");
    }
    if (cfg.lambda < 0.0) {
        fail("lambda must be nonnegative");
    }
    if (cfg.k == 0) {
        fail("k must be positive");
    }
    if (cfg.eval_every == 0) {
        fail("eval_every must be positive");
    }
    if (cfg.aug_sigma < 0.0) {
        fail("aug_sigma must be nonnegative");
    }
    if (!(cfg.clip_norm > 0.0)) {
        fail("clip_norm must be positive");
    }
    if (cfg.val_pairs == 0) {
        fail("val_pairs must be positive");
    }
}

TrainConfig train_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ConfigError("train config: not a JSON object");
    }
    TrainConfig cfg;
    static const std::set<std::string> known = {
        "batch_size", "total_epochs", "base_lr", "weight_decay", "lambda",      "k",
        "seed",       "checkpoint_every", "eval_every", "aug_sigma", "clip_norm", "val_pairs",
    };
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key)) {
            throw ConfigError("train config: unknown key '" + key + "'");
        }
    }
    auto get_size = [&](const char* key, std::size_t& out) {
        if (doc.contains(key)) {
            if (!doc[key].is_number_unsigned()) {
                throw ConfigError(std::string("train config: ") + key + " must be a non-negative integer");
            }
            out = doc[key].get<std::size_t>();
        }
    };
    auto get_double = [&](const char* key, double& out) {
        if (doc.contains(key)) {
            if (!doc[key].is_number()) {
                throw ConfigError(std::string("train config: ") + key + " must be a number");
            }
            out = doc[key].get<double>();
        }
    };
    try {
        get_size("batch_size", cfg.batch_size);
        get_size("total_epochs", cfg.total_epochs);
        get_double("base_lr", cfg.base_lr);
        get_double("weight_decay", cfg.weight_decay);
        get_double("lambda", cfg.lambda);
        get_size("k", cfg.k);
        if (doc.contains("seed")) {
            cfg.seed = doc["seed"].get<std::uint64_t>();
        }
        get_size("checkpoint_every", cfg.checkpoint_every);
        get_size("eval_every", cfg.eval_every);
        get_double("aug_sigma", cfg.aug_sigma);
        get_double("clip_norm", cfg.clip_norm);
        get_size("val_pairs", cfg.val_pairs);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json doc;
    doc["batch_size"] = cfg.batch_size;
    doc["total_epochs"] = cfg.total_epochs;
    doc["base_lr"] = cfg.base_lr;
    doc["weight_decay"] = cfg.weight_decay;
    doc["lambda"] = cfg.lambda;
    doc["k"] = cfg.k;
    doc["seed"] = cfg.seed;
    doc["checkpoint_every"] = cfg.checkpoint_every;
    doc["eval_every"] = cfg.eval_every;
    doc["aug_sigma"] = cfg.aug_sigma;
    doc["clip_norm"] = cfg.clip_norm;
    doc["val_pairs"] = cfg.val_pairs;
    return doc.dump(2) + "\n";
}

namespace {

json step_line(const StepRecord& r) {
    json j;
    j["type"] = "step";
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["cls"] = r.cls;
    j["seq"] = r.seq;
    j["total"] = r.total;
    j["grad_norm"] = r.grad_norm;
    j["clipped"] = r.clipped;
    return j;
}

json epoch_line(const EpochRecord& r) {
    json j;
    j["type"] = "epoch";
    j["epoch"] = r.epoch;
    j["val_auc"] = r.val_auc;
    return j;
}

} // namespace

std::string TrainLog::to_jsonl() const {
    std::string out;
    std::size_t e = 0;
    for (const StepRecord& s : steps) {
        while (e < epochs.size() && epochs[e].after_step <= s.step) {
            out += epoch_line(epochs[e]).dump() + "\n";
            ++e;
        }
        out += step_line(s).dump() + "\n";
    }
    for (; e < epochs.size(); ++e) {
        out += epoch_line(epochs[e]).dump() + "\n";
    }
    return out;
}

std::map<std::string, std::size_t> class_index_map(const std::vector<const ProcedureRecord*>& procs) {
    std::vector<const ProcedureRecord*> sorted = procs;
    std::sort(sorted.begin(), sorted.end(), [](const ProcedureRecord* a, const ProcedureRecord* b) {
        return std::tie(a->task_id, a->procedure_id) < std::tie(b->task_id, b->procedure_id);
    });
    std::map<std::string, std::size_t> out;
    for (const ProcedureRecord* p : sorted) {
        if (!out.emplace(p->procedure_id, out.size()).second) {
            throw DataError("class_index_map: duplicate procedure id '" + p->procedure_id + "'");
        }
    }
    return out;
}

std::vector<BatchPair> build_batch(const std::vector<const ProcedureRecord*>& procs,
                                   const std::map<std::string, std::size_t>& labels,
                                   std::size_t batch_size, Rng& rng) {
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw ConfigError("build_batch: batch_size must be even and at least 2");
    }
    std::vector<const ProcedureRecord*> eligible;
    for (const ProcedureRecord* p : procs) {
        if (p->videos.size() >= 2) {
            eligible.push_back(p);
        }
    }
    if (eligible.empty()) {
        throw DataError("build_batch: no procedure has two or more videos");
    }
    std::vector<BatchPair> out;
    out.reserve(batch_size / 2);
    for (std::size_t i = 0; i < batch_size / 2; ++i) {
        const ProcedureRecord* p = eligible[rng.uniform_int(std::uint64_t{eligible.size()})];
        const std::size_t n = p->videos.size();
        const std::size_t va = rng.uniform_int(std::uint64_t{n});
        std::size_t vb = rng.uniform_int(std::uint64_t{n - 1});
        if (vb >= va) {
            ++vb;
        }
        BatchPair bp;
        bp.procedure = p;
        bp.a = &p->videos[va];
        bp.b = &p->videos[vb];
        bp.label = labels.at(p->procedure_id);
        out.push_back(bp);
    }
    return out;
}

FeatureStore::FeatureStore(const Dataset& ds) {
    for (const Task& task : ds.tasks) {
        for (const ProcedureRecord& p : task.procedures) {
            for (const VideoRecord& v : p.videos) {
                table_.emplace(v.video_id, read_features(ds.feature_path(v)));
            }
        }
    }
}

const Tensor& FeatureStore::features(const std::string& video_id) const {
    const auto it = table_.find(video_id);
    if (it == table_.end()) {
        throw DataError("feature store: unknown video '" + video_id + "'");
    }
    return it->second;
}

Tensor make_train_clip(const Tensor& features, std::size_t k, double aug_sigma, Rng& rng) {
    Tensor clip = sample_segments(features, k, SampleMode::train, &rng);
    if (aug_sigma > 0.0) {
        for (double& v : clip.data) {
            v += rng.normal(0.0, aug_sigma);
        }
    }
    return clip;
}

namespace {

std::vector<PairSample> make_val_pairs(const std::vector<const ProcedureRecord*>& val_procs,
                                       const TrainConfig& tcfg) {
    if (val_procs.empty()) {
        return {};
    }
    const std::size_t avail_pos = enumerate_positive_pairs(val_procs).size();
    const std::size_t avail_neg = enumerate_negative_pairs(val_procs).size();
    if (avail_pos == 0 || avail_neg == 0) {
        return {};
    }
    Rng rng = Rng(tcfg.seed).derive("val-pairs");
    return sample_pairs(val_procs, std::min(tcfg.val_pairs, avail_pos),
                        std::min(tcfg.val_pairs, avail_neg), rng);
}

json trainer_state(std::size_t next_epoch, std::size_t global_step, double best_val_auc,
                   std::size_t best_epoch, const TrainConfig& tcfg) {
    json j;
    j["epoch"] = next_epoch;
    j["global_step"] = global_step;
    j["best_val_auc"] = best_val_auc;
    j["best_epoch"] = best_epoch;
    j["train_config"] = json::parse(train_config_to_json(tcfg));
    return j;
}

TrainResult run_training(const Dataset& ds, CatModel model, AdamState adam, const TrainConfig& tcfg,
                         std::size_t start_epoch, std::size_t global_step, double best_val_auc,
                         std::size_t best_epoch, const std::string& out_dir, bool fresh) {
    const DatasetSplit split = make_split(ds);
    if (split.train.empty()) {
        throw DataError("train: dataset has no training procedures");
    }
    if (model.config().num_classes != split.train.size()) {
        throw ConfigError("train: model expects " + std::to_string(model.config().num_classes) +
                          " classes but the training split has " + std::to_string(split.train.size()) +
                          " procedures");
    }
    if (model.config().frames != tcfg.k) {
        throw ConfigError("train: clip length k=" + std::to_string(tcfg.k) +
                          " does not match the model's frames=" + std::to_string(model.config().frames));
    }
    const auto labels = class_index_map(split.train);
    const FeatureStore store(ds);

    std::size_t train_videos = 0;
    for (const ProcedureRecord* p : split.train) {
        train_videos += p->videos.size();
    }
    const std::size_t steps_per_epoch = std::max<std::size_t>(1, (train_videos + tcfg.batch_size - 1) / tcfg.batch_size);
    const std::size_t total_steps = tcfg.total_epochs * steps_per_epoch;
    const std::vector<PairSample> val_pairs = make_val_pairs(split.val, tcfg);
    const std::size_t num_pairs = tcfg.batch_size / 2;

    fs::create_directories(out_dir);
    std::ofstream log_out(out_dir + "/train_log.jsonl",
                          fresh ? std::ios::trunc : std::ios::app);
    if (!log_out.good()) {
        throw IoError("train: cannot open log file in " + out_dir);
    }

    TrainLog log;
    std::string last_path;
    std::string best_path;
    const Rng root_rng(tcfg.seed);

    auto save = [&](CatModel& m, const std::string& name, std::size_t next_epoch) {
        const json state = trainer_state(next_epoch, global_step, best_val_auc, best_epoch, tcfg);
        const Checkpoint ck = make_checkpoint(m, &adam, &root_rng, state.dump());
        const std::string path = out_dir + "/" + name;
        save_checkpoint(ck, path);
        return path;
    };

    for (std::size_t epoch = start_epoch; epoch < tcfg.total_epochs; ++epoch) {
        Rng erng = Rng(tcfg.seed).derive("epoch/" + std::to_string(epoch));
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const auto batch = build_batch(split.train, labels, tcfg.batch_size, erng);
            model.zero_grads();
            Tape t;
            std::vector<Tape::NodeId> logit_rows;
            std::vector<std::size_t> batch_labels;
            logit_rows.reserve(tcfg.batch_size);
            batch_labels.reserve(tcfg.batch_size);
            Tape::NodeId seq_sum = -1;
            try {
                for (const BatchPair& bp : batch) {
                    const auto clip_a =
                        t.constant(make_train_clip(store.features(bp.a->video_id), tcfg.k, tcfg.aug_sigma, erng));
                    const auto clip_b =
                        t.constant(make_train_clip(store.features(bp.b->video_id), tcfg.k, tcfg.aug_sigma, erng));
                    const ForwardNodes fa = model.build_forward(t, clip_a);
                    const ForwardNodes fb = model.build_forward(t, clip_b);
                    logit_rows.push_back(fa.logits);
                    batch_labels.push_back(bp.label);
                    logit_rows.push_back(fb.logits);
                    batch_labels.push_back(bp.label);
                    const auto sa = build_sequence_alignment_loss(t, fa.frame_features, fb.frame_features);
                    seq_sum = (seq_sum < 0) ? sa : t.add(seq_sum, sa);
                }
                const auto cls = build_classification_loss_mean(t, logit_rows, batch_labels);
                const auto seq = t.scale(seq_sum, 1.0 / static_cast<double>(num_pairs));
                const auto total = t.add(cls, t.scale(seq, tcfg.lambda));
                t.backward(total);

                StepRecord rec;
                rec.step = global_step;
                rec.cls = t.value(cls).scalar_value();
                rec.seq = t.value(seq).scalar_value();
                rec.total = t.value(total).scalar_value();
                rec.grad_norm = clip_global_norm(model.parameters(), tcfg.clip_norm);
                rec.clipped = rec.grad_norm > tcfg.clip_norm;
                rec.lr = cosine_lr(global_step, total_steps, tcfg.base_lr);
                adam.step(model.parameters(), rec.lr);
                log_out << step_line(rec).dump() << "\n";
                log.steps.push_back(rec);
            } catch (const NumericError& e) {
                log_out.flush();
                throw NumericError("training diverged at step " + std::to_string(global_step) + ": " +
                                   e.what());
            }
            ++global_step;
        }

        const bool last_epoch = epoch + 1 == tcfg.total_epochs;
        if (!val_pairs.empty() && ((epoch + 1) % tcfg.eval_every == 0 || last_epoch)) {
            const auto distances = compute_pair_distances(model, ds, val_pairs);
            EpochRecord er;
            er.epoch = epoch;
            er.val_auc = auc(distances);
            er.after_step = global_step;
            log_out << epoch_line(er).dump() << "\n";
            log.epochs.push_back(er);
            if (er.val_auc > best_val_auc) {
                best_val_auc = er.val_auc;
                best_epoch = epoch;
                best_path = save(model, "best.ckpt", epoch + 1);
            }
        }
        last_path = save(model, "last.ckpt", epoch + 1);
        if (tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch + 1);
            save(model, name, epoch + 1);
        }
        log_out.flush();
    }

    return TrainResult{std::move(model), std::move(log), std::move(last_path), std::move(best_path),
                       best_val_auc, best_epoch};
}

} // namespace

TrainResult train(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
                  const std::string& out_dir) {
    validate(tcfg);
    CatModel model(mcfg);
    AdamState adam(AdamConfig{0.9, 0.999, 1e-8, tcfg.weight_decay});
    adam.init(model.parameters());
    return run_training(ds, std::move(model), std::move(adam), tcfg, 0, 0, -1.0, 0, out_dir, true);
}

TrainResult resume_training(const Dataset& ds, const std::string& checkpoint_path,
                            const std::string& out_dir) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    if (!ck.has_optimizer) {
        throw ConfigError("resume: checkpoint has no optimizer state");
    }
    json state;
    try {
        state = json::parse(ck.trainer_state_json);
        if (!state.contains("train_config")) {
            throw ConfigError("resume: checkpoint was not written by train()");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("resume: bad trainer state: ") + e.what());
    }
    TrainConfig tcfg;
    std::size_t start_epoch = 0;
    std::size_t global_step = 0;
    double best_val_auc = -1.0;
    std::size_t best_epoch = 0;
    try {
        tcfg = train_config_from_json(state.at("train_config").dump());
        start_epoch = state.at("epoch").get<std::size_t>();
        global_step = state.at("global_step").get<std::size_t>();
        best_val_auc = state.at("best_val_auc").get<double>();
        best_epoch = state.at("best_epoch").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("resume: bad trainer state: ") + e.what());
    }
    if (start_epoch >= tcfg.total_epochs) {
        throw ConfigError("resume: run already completed (" + std::to_string(start_epoch) + " epochs)");
    }
    CatModel model = model_from_checkpoint(ck);
    AdamState adam(ck.adam_config);
    adam.init(model.parameters());
    restore_optimizer(adam, ck);
    return run_training(ds, std::move(model), std::move(adam), tcfg, start_epoch, global_step,
                        best_val_auc, best_epoch, out_dir, false);
}

} // namespace procver
