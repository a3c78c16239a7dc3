#include "procver/generator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "procver/manifest.hpp"
#include "procver/pvft.hpp"

namespace procver {

namespace {

using nlohmann::json;

const char* kVerbs[] = {
    "take", "put", "pour", "screw", "unscrew", "open", "close", "press",
    "cut", "stir", "wipe", "insert", "remove", "attach", "detach", "lift",
    "lower", "shake", "fold", "plug", "unplug", "tighten", "loosen", "measure",
};
const char* kObjects[] = {
    "flask", "tube", "clamp", "beaker", "funnel", "stopper", "pipette", "burner",
    "stand", "lid", "valve", "bottle", "cap", "wire", "panel", "screwdriver",
    "bolt", "bracket", "filter", "hose", "gauge", "switch", "lever", "tray",
    "cloth", "brush", "pan", "kettle", "cable", "socket", "card", "tape",
};
constexpr std::size_t kNumVerbs = std::size(kVerbs);
constexpr std::size_t kNumObjects = std::size(kObjects);

std::string indexed_id(const std::string& prefix, std::size_t i, int width) {
    std::ostringstream out;
    out << prefix << std::setw(width) << std::setfill('0') << i;
    return out.str();
}

std::size_t draw_in(Rng& rng, std::size_t lo, std::size_t hi) { // inclusive
    return lo + static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::string sequence_signature(const std::vector<StepToken>& steps) {
    std::string sig;
    for (const StepToken& s : steps) {
        sig += s.canonical();
        sig += '\n';
    }
    return sig;
}

enum class OpKind { del, ins, swap_adj };

// One step-level transformation. Deletions keep at least two steps and swaps
// need an adjacent pair of distinct tokens; infeasible picks fall back to
// insertion, which is always possible.
void apply_transformation(std::vector<StepToken>& seq, const std::vector<StepToken>& vocab,
                          const GeneratorConfig& cfg, Rng& rng) {
    const double r = rng.uniform();
    OpKind kind = OpKind::swap_adj;
    if (r < cfg.delete_weight) {
        kind = OpKind::del;
    } else if (r < cfg.delete_weight + cfg.insert_weight) {
        kind = OpKind::ins;
    }
    if (kind == OpKind::del && seq.size() < 3) {
        kind = OpKind::ins;
    }
    if (kind == OpKind::swap_adj) {
        std::vector<std::size_t> spots;
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            if (!(seq[i] == seq[i + 1])) {
                spots.push_back(i);
            }
        }
        if (spots.empty()) {
            kind = OpKind::ins;
        } else {
            const std::size_t p = spots[rng.uniform_int(spots.size())];
            std::swap(seq[p], seq[p + 1]);
            return;
        }
    }
    if (kind == OpKind::del) {
        seq.erase(seq.begin() + static_cast<std::ptrdiff_t>(rng.uniform_int(seq.size())));
        return;
    }
    const StepToken& tok = vocab[rng.uniform_int(vocab.size())];
    seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(rng.uniform_int(seq.size() + 1)), tok);
}

std::vector<StepToken> make_variant(const std::vector<StepToken>& base,
                                    const std::vector<StepToken>& vocab,
                                    const std::set<std::string>& used,
                                    const GeneratorConfig& cfg, const std::string& task_id,
                                    Rng& rng) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        std::vector<StepToken> seq = base;
        const std::size_t ops = draw_in(rng, cfg.variant_ops_range[0], cfg.variant_ops_range[1]);
        for (std::size_t i = 0; i < ops; ++i) {
            apply_transformation(seq, vocab, cfg, rng);
        }
        if (!used.contains(sequence_signature(seq))) {
            return seq;
        }
    }
    throw DataError("step_vocab_size " + std::to_string(cfg.step_vocab_size) +
                    " is too small to build " + std::to_string(cfg.procedures_per_task) +
                    " distinct procedures for task '" + task_id + "'");
}

} // namespace

void validate(const GeneratorConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ConfigError("generator config: " + msg); };
    if (cfg.d_in == 0) {
        fail("d_in must be positive");
    }
    if (cfg.num_tasks == 0 || cfg.num_tasks > 999) {
        fail("num_tasks must be in [1, 999]");
    }
    if (cfg.procedures_per_task == 0 || cfg.procedures_per_task > 99) {
        fail("procedures_per_task must be in [1, 99]");
    }
    if (cfg.videos_per_procedure == 0 || cfg.videos_per_procedure > 999) {
        fail("videos_per_procedure must be in [1, 999]");
    }
    if (cfg.duration_range[0] < 1 || cfg.duration_range[0] > cfg.duration_range[1]) {
        fail("duration_range must satisfy 1 <= min <= max");
    }
    if (cfg.noise_sigma < 0.0) {
        fail("noise_sigma must be non-negative");
    }
    if (cfg.appearance_sigma < 0.0) {
        fail("appearance_sigma must be non-negative");
    }
    if (cfg.delete_weight < 0.0 || cfg.insert_weight < 0.0 || cfg.swap_weight < 0.0 ||
        std::abs(cfg.delete_weight + cfg.insert_weight + cfg.swap_weight - 1.0) > 1e-9) {
        fail("transformation weights must be non-negative and sum to 1");
    }
    if (cfg.base_steps_range[0] < 2 || cfg.base_steps_range[0] > cfg.base_steps_range[1]) {
        fail("base_steps_range must satisfy 2 <= min <= max");
    }
    if (cfg.variant_ops_range[0] < 1 || cfg.variant_ops_range[0] > cfg.variant_ops_range[1]) {
        fail("variant_ops_range must satisfy 1 <= min <= max");
    }
    if (cfg.step_vocab_size < cfg.base_steps_range[1]) {
        fail("step_vocab_size must cover the longest base sequence");
    }
    if (cfg.step_vocab_size > kNumVerbs * kNumObjects) {
        fail("step_vocab_size exceeds the verb-object pool (" +
             std::to_string(kNumVerbs * kNumObjects) + ")");
    }
    if (cfg.val_tasks + cfg.test_tasks > cfg.num_tasks) {
        fail("val_tasks + test_tasks exceed num_tasks");
    }
    if (cfg.min_video_frames == 0) {
        fail("min_video_frames must be positive");
    }
}

GeneratorConfig generator_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ConfigError("generator config: not a JSON object");
    }
    GeneratorConfig cfg;
    static const std::set<std::string> known = {
        "seed", "d_in", "num_tasks", "procedures_per_task", "videos_per_procedure",
        "step_vocab_size", "duration_range", "noise_sigma", "appearance_sigma",
        "transform_weights",
        "base_steps_range", "variant_ops_range", "val_tasks", "test_tasks",
        "min_video_frames",
    };
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key)) {
            throw ConfigError("generator config: unknown key '" + key + "'");
        }
    }
    auto get_size = [&](const char* key, std::size_t& out) {
        if (doc.contains(key)) {
            if (!doc[key].is_number_unsigned()) {
                throw ConfigError(std::string("generator config: ") + key +
                                  " must be a non-negative integer");
            }
            out = doc[key].get<std::size_t>();
        }
    };
    auto get_range = [&](const char* key, std::array<std::size_t, 2>& out) {
        if (doc.contains(key)) {
            if (!doc[key].is_array() || doc[key].size() != 2) {
                throw ConfigError(std::string("generator config: ") + key +
                                  " must be a [min, max] pair");
            }
            out[0] = doc[key][0].get<std::size_t>();
            out[1] = doc[key][1].get<std::size_t>();
        }
    };
    try {
    if (doc.contains("seed")) {
        cfg.seed = doc["seed"].get<std::uint64_t>();
    }
    get_size("d_in", cfg.d_in);
    get_size("num_tasks", cfg.num_tasks);
    get_size("procedures_per_task", cfg.procedures_per_task);
    get_size("videos_per_procedure", cfg.videos_per_procedure);
    get_size("step_vocab_size", cfg.step_vocab_size);
    get_range("duration_range", cfg.duration_range);
    if (doc.contains("noise_sigma")) {
        cfg.noise_sigma = doc["noise_sigma"].get<double>();
    }
    if (doc.contains("appearance_sigma")) {
        cfg.appearance_sigma = doc["appearance_sigma"].get<double>();
    }
    if (doc.contains("transform_weights")) {
        const json& w = doc["transform_weights"];
        if (!w.is_object() || !w.contains("delete") || !w.contains("insert") ||
            !w.contains("swap") || w.size() != 3) {
            throw ConfigError("generator config: transform_weights needs delete/insert/swap");
        }
        cfg.delete_weight = w["delete"].get<double>();
        cfg.insert_weight = w["insert"].get<double>();
        cfg.swap_weight = w["swap"].get<double>();
    }
    get_range("base_steps_range", cfg.base_steps_range);
    get_range("variant_ops_range", cfg.variant_ops_range);
    get_size("val_tasks", cfg.val_tasks);
    get_size("test_tasks", cfg.test_tasks);
    get_size("min_video_frames", cfg.min_video_frames);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

std::string generator_config_to_json(const GeneratorConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["d_in"] = cfg.d_in;
    doc["num_tasks"] = cfg.num_tasks;
    doc["procedures_per_task"] = cfg.procedures_per_task;
    doc["videos_per_procedure"] = cfg.videos_per_procedure;
    doc["step_vocab_size"] = cfg.step_vocab_size;
    doc["duration_range"] = cfg.duration_range;
    doc["noise_sigma"] = cfg.noise_sigma;
    doc["appearance_sigma"] = cfg.appearance_sigma;
    doc["transform_weights"] = {
        {"delete", cfg.delete_weight},
        {"insert", cfg.insert_weight},
        {"swap", cfg.swap_weight},
    };
    doc["base_steps_range"] = cfg.base_steps_range;
    doc["variant_ops_range"] = cfg.variant_ops_range;
    doc["val_tasks"] = cfg.val_tasks;
    doc["test_tasks"] = cfg.test_tasks;
    doc["min_video_frames"] = cfg.min_video_frames;
    return doc.dump(2) + "\n";
}

GeneratorConfig load_generator_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open generator config '" + path + "'");
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return generator_config_from_json(text);
}

Tensor step_prototype(const GeneratorConfig& cfg, const StepToken& token) {
    Rng rng = Rng(cfg.seed).derive("proto/" + token.canonical());
    Tensor proto({cfg.d_in});
    for (;;) {
        for (double& v : proto.data) {
            v = rng.normal();
        }
        const double norm = l2_norm(proto);
        if (norm > 1e-9) {
            for (double& v : proto.data) {
                v /= norm;
            }
            return proto;
        }
    }
}

std::vector<StepToken> dataset_vocabulary(const GeneratorConfig& cfg) {
    Rng rng = Rng(cfg.seed).derive("vocab");
    std::vector<std::size_t> pool(kNumVerbs * kNumObjects);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = i;
    }
    std::vector<StepToken> vocab;
    vocab.reserve(cfg.step_vocab_size);
    for (std::size_t i = 0; i < cfg.step_vocab_size; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
        vocab.push_back(StepToken{kVerbs[pool[i] / kNumObjects], kObjects[pool[i] % kNumObjects]});
    }
    return vocab;
}

SynthVideo synth_video(const GeneratorConfig& cfg, const std::vector<StepToken>& steps,
                       Rng& rng) {
    if (steps.empty()) {
        throw DataError("synth_video: empty step sequence");
    }
    std::vector<std::size_t> durations(steps.size());
    std::size_t total = 0;
    for (std::size_t& d : durations) {
        d = draw_in(rng, cfg.duration_range[0], cfg.duration_range[1]);
        total += d;
    }
    // pad short videos round-robin so every video supports K-segment sampling
    for (std::size_t pad = 0; total < cfg.min_video_frames; ++pad, ++total) {
        ++durations[pad % durations.size()];
    }
    // one constant appearance offset per video, norm appearance_sigma
    Tensor appearance({cfg.d_in});
    for (;;) {
        for (double& v : appearance.data) {
            v = rng.normal();
        }
        const double norm = l2_norm(appearance);
        if (norm > 1e-9) {
            for (double& v : appearance.data) {
                v *= cfg.appearance_sigma / norm;
            }
            break;
        }
    }
    SynthVideo out;
    out.features = Tensor({total, cfg.d_in});
    out.step_offsets.reserve(steps.size());
    std::size_t frame = 0;
    for (std::size_t s = 0; s < steps.size(); ++s) {
        out.step_offsets.push_back(frame);
        const Tensor proto = step_prototype(cfg, steps[s]);
        for (std::size_t f = 0; f < durations[s]; ++f, ++frame) {
            for (std::size_t j = 0; j < cfg.d_in; ++j) {
                out.features(frame, j) =
                    proto[j] + appearance[j] + cfg.noise_sigma * rng.normal();
            }
        }
    }
    return out;
}

Dataset generate_dataset(const GeneratorConfig& cfg, const std::string& out_dir) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "features");

    Dataset ds;
    ds.dim = cfg.d_in;
    ds.root = out_dir;

    const std::vector<StepToken> vocab = dataset_vocabulary(cfg);
    for (std::size_t ti = 0; ti < cfg.num_tasks; ++ti) {
        const std::string task_id = indexed_id("task_", ti, 3);
        Task task;
        task.task_id = task_id;

        Split split = Split::train;
        if (ti >= cfg.num_tasks - cfg.test_tasks) {
            split = Split::test;
        } else if (ti >= cfg.num_tasks - cfg.test_tasks - cfg.val_tasks) {
            split = Split::val;
        }

        Rng rng_struct = Rng(cfg.seed).derive("struct/" + task_id);

        // base sequence: distinct tokens so adjacent swaps always change order
        std::vector<StepToken> base;
        {
            const std::size_t len =
                draw_in(rng_struct, cfg.base_steps_range[0], cfg.base_steps_range[1]);
            std::vector<std::size_t> pool(vocab.size());
            for (std::size_t i = 0; i < pool.size(); ++i) {
                pool[i] = i;
            }
            for (std::size_t i = 0; i < len; ++i) {
                const std::size_t j =
                    i + static_cast<std::size_t>(rng_struct.uniform_int(pool.size() - i));
                std::swap(pool[i], pool[j]);
                base.push_back(vocab[pool[i]]);
            }
        }

        std::set<std::string> used{sequence_signature(base)};
        std::vector<std::vector<StepToken>> sequences{base};
        for (std::size_t pi = 1; pi < cfg.procedures_per_task; ++pi) {
            std::vector<StepToken> variant =
                make_variant(base, vocab, used, cfg, task_id, rng_struct);
            used.insert(sequence_signature(variant));
            sequences.push_back(std::move(variant));
        }

        for (std::size_t pi = 0; pi < cfg.procedures_per_task; ++pi) {
            ProcedureRecord proc;
            proc.task_id = task_id;
            proc.procedure_id = task_id + indexed_id(".p", pi, 2);
            proc.steps = sequences[pi];
            proc.split = split;
            for (std::size_t vi = 0; vi < cfg.videos_per_procedure; ++vi) {
                VideoRecord vid;
                vid.video_id = proc.procedure_id + indexed_id(".v", vi, 3);
                vid.feature_file = "features/" + vid.video_id + ".pvft";
                Rng rng_v = Rng(cfg.seed).derive("video/" + vid.video_id);
                const SynthVideo sv = synth_video(cfg, proc.steps, rng_v);
                vid.num_frames = sv.features.rows();
                write_features(ds.feature_path(vid), sv.features);
                proc.videos.push_back(std::move(vid));
            }
            task.procedures.push_back(std::move(proc));
        }
        ds.tasks.push_back(std::move(task));
    }

    save_manifest(ds, (fs::path(out_dir) / "manifest.json").string());
    std::ofstream cfg_out((fs::path(out_dir) / "generator_config.json").string(),
                          std::ios::trunc);
    cfg_out << generator_config_to_json(cfg);
    if (!cfg_out) {
        throw IoError("cannot write generator config under '" + out_dir + "'");
    }
    return ds;
}

} // namespace procver
