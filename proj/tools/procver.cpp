// procver: procedure-consistency verification toolkit.
//
// Subcommands cover the full pipeline: synthetic dataset generation, model
// training, offline evaluation, pair scoring, online stream monitoring, and
// multi-checkpoint reports. Every subcommand is byte-reproducible from its
// inputs and seeds.
//
// Exit codes: 0 success (warn: clean stream), 2 usage or configuration error,
// 3 data/file error, 4 numeric divergence, 5 warning raised (warn only).

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "procver/checkpoint.hpp"
#include "procver/dataset.hpp"
#include "procver/errors.hpp"
#include "procver/eval.hpp"
#include "procver/generator.hpp"
#include "procver/manifest.hpp"
#include "procver/model.hpp"
#include "procver/online.hpp"
#include "procver/pvft.hpp"
#include "procver/rng.hpp"
#include "procver/sampling.hpp"
#include "procver/training.hpp"

namespace fs = std::filesystem;
using namespace procver;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitWarned = 5;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << text;
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

Dataset load_dataset(const std::string& dir) {
    return load_manifest((fs::path(dir) / "manifest.json").string());
}

// --workers resolution: explicit flag wins, then PROCVER_WORKERS, then 1.
// The worker count never changes any output bytes, only wall time.
std::size_t resolve_workers(std::size_t flag_value) {
    if (flag_value > 0) {
        return flag_value;
    }
    const char* env = std::getenv("PROCVER_WORKERS");
    if (env == nullptr || *env == '\0') {
        return 1;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || v == 0) {
        throw ConfigError("PROCVER_WORKERS must be a positive integer, got '" + std::string(env) +
                          "'");
    }
    return static_cast<std::size_t>(v);
}

struct PairSpec {
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

PairSpec parse_pair_spec(const std::string& text) {
    const auto comma = text.find(',');
    auto fail = [&] {
        throw ConfigError("--pairs expects <n_pos>,<n_neg> with both counts positive, got '" +
                          text + "'");
    };
    if (comma == std::string::npos || comma == 0 || comma + 1 >= text.size()) {
        fail();
    }
    PairSpec spec;
    for (const auto& [part, slot] :
         {std::pair<std::string, std::size_t*>{text.substr(0, comma), &spec.n_pos},
          std::pair<std::string, std::size_t*>{text.substr(comma + 1), &spec.n_neg}}) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            fail();
        }
        *slot = static_cast<std::size_t>(std::stoull(part));
    }
    if (spec.n_pos == 0 || spec.n_neg == 0) {
        fail();
    }
    return spec;
}

Tensor normalized(const Tensor& embedding) {
    const double n = l2_norm(embedding);
    if (n < 1e-12) {
        throw NumericError("embedding has near-zero norm, cannot normalize");
    }
    Tensor out = embedding;
    for (double& x : out.data) {
        x /= n;
    }
    return out;
}

CatModel load_model(const std::string& checkpoint_path) {
    return model_from_checkpoint(load_checkpoint(checkpoint_path));
}

Tensor embed_feature_file(const CatModel& model, const std::string& path) {
    const Tensor features = read_features(path);
    return model.embed(
        sample_segments(features, model.config().frames, SampleMode::eval, nullptr));
}

void check_class_count(const CatModel& model, const Dataset& ds) {
    const std::size_t train_procs = make_split(ds).train.size();
    if (model.config().num_classes != train_procs) {
        throw DataError("checkpoint was trained with " +
                        std::to_string(model.config().num_classes) +
                        " procedure classes but the dataset's train split has " +
                        std::to_string(train_procs));
    }
}

// report.json -> report.distance.csv / report.checkpoints.csv
std::string out_stem(const std::string& out_path) {
    const std::string suffix = ".json";
    if (out_path.size() > suffix.size() &&
        out_path.compare(out_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return out_path.substr(0, out_path.size() - suffix.size());
    }
    return out_path;
}

void write_report_files(const MetricsReport& report, const std::string& out_path) {
    const std::string stem = out_stem(out_path);
    write_text_file(out_path, report.to_json());
    write_text_file(stem + ".distance.csv", report.distance_curve_csv());
    write_text_file(stem + ".checkpoints.csv", report.checkpoint_curve_csv());
}

void print_metrics(const MetricsReport& report, bool with_splits) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "AUC %.2f\n", 100.0 * report.auc);
    std::fputs(buf, stdout);
    std::snprintf(buf, sizeof(buf), "WDR %.4f\n", report.wdr);
    std::fputs(buf, stdout);
    if (with_splits) {
        for (const auto& [name, value] : report.per_split_auc) {
            std::snprintf(buf, sizeof(buf), "AUC[%s] %.2f\n", name.c_str(), 100.0 * value);
            std::fputs(buf, stdout);
        }
    }
}

// Per-procedure groups of l2-normalized embeddings for the spread statistics.
SpreadStats split_spread(const CatModel& model, const Dataset& ds,
                         const std::vector<const ProcedureRecord*>& procs, std::size_t workers) {
    std::vector<VideoRef> refs;
    std::vector<std::size_t> group_of;
    for (std::size_t g = 0; g < procs.size(); ++g) {
        for (const VideoRecord& v : procs[g]->videos) {
            refs.push_back(VideoRef{procs[g], &v});
            group_of.push_back(g);
        }
    }
    const std::vector<Tensor> embeddings = embed_videos(model, ds, refs, workers);
    std::vector<std::vector<Tensor>> groups(procs.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        groups[group_of[i]].push_back(normalized(embeddings[i]));
    }
    return embedding_spread(groups);
}

struct EvalOutcome {
    MetricsReport report;
    std::vector<PairDistance> distances;
};

// Shared core of `eval` and `report`: sample pairs once, score them with one
// model, and assemble the scalar metrics.
EvalOutcome evaluate_checkpoint(const CatModel& model, const Dataset& ds,
                                const std::vector<const ProcedureRecord*>& procs,
                                const PairSpec& spec, std::uint64_t seed, bool with_splits,
                                std::size_t workers, const std::string& checkpoint_label) {
    Rng rng = Rng(seed).derive("eval-pairs");
    const std::vector<PairSample> pairs = sample_pairs(procs, spec.n_pos, spec.n_neg, rng);
    EvalOutcome out;
    out.distances = compute_pair_distances(model, ds, pairs, workers);
    out.report.auc = auc(out.distances);
    out.report.wdr = wdr(out.distances);
    out.report.tau = select_tau(out.distances);
    out.report.distance_curve = distance_vs_levenshtein(out.distances);
    if (with_splits) {
        out.report.per_split_auc = split_auc(out.distances);
    }
    out.report.checkpoint_curve.push_back(
        CheckpointCurvePoint{checkpoint_label, out.report.wdr, out.report.auc});
    return out;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    bool force = false;
};

int run_gen_data(const GenDataArgs& args) {
    GeneratorConfig cfg;
    if (!args.config_path.empty()) {
        cfg = load_generator_config(args.config_path);
    }
    if (args.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(args.seed);
    }
    if (fs::exists(args.out_dir)) {
        if (!fs::is_directory(args.out_dir)) {
            throw DataError("output path '" + args.out_dir + "' exists and is not a directory");
        }
        if (!fs::is_empty(args.out_dir) && !args.force) {
            throw DataError("output directory '" + args.out_dir +
                            "' is not empty (pass --force to write into it anyway)");
        }
    }
    const Dataset ds = generate_dataset(cfg, args.out_dir);
    std::size_t procedures = 0;
    std::size_t steps = 0;
    for (const Task& task : ds.tasks) {
        procedures += task.procedures.size();
        for (const ProcedureRecord& p : task.procedures) {
            steps += p.steps.size();
        }
    }
    std::printf("tasks %zu\n", ds.tasks.size());
    std::printf("procedures %zu\n", procedures);
    std::printf("videos %zu\n", ds.video_count());
    std::printf("steps %zu\n", steps);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data_dir;
    std::string model_config;
    std::string train_config;
    std::string out_dir;
    std::string resume;
};

int run_train(const TrainArgs& args) {
    const Dataset ds = load_dataset(args.data_dir);
    TrainResult result = [&] {
        if (!args.resume.empty()) {
            if (!args.model_config.empty() || !args.train_config.empty()) {
                throw ConfigError(
                    "--resume restores the run's configs; do not pass --model-config or "
                    "--train-config with it");
            }
            return resume_training(ds, args.resume, args.out_dir);
        }
        if (args.model_config.empty() || args.train_config.empty()) {
            throw ConfigError("train needs --model-config and --train-config (or --resume)");
        }
        const ModelConfig mcfg = model_config_from_json(read_text_file(args.model_config));
        const TrainConfig tcfg = train_config_from_json(read_text_file(args.train_config));
        return train(ds, mcfg, tcfg, args.out_dir);
    }();

    std::printf("steps %zu\n", result.log.steps.size());
    if (!result.best_checkpoint.empty()) {
        std::printf("best val AUC %.4f (epoch %zu)\n", result.best_val_auc, result.best_epoch);
        std::printf("best checkpoint %s\n", result.best_checkpoint.c_str());
    }
    std::printf("last checkpoint %s\n", result.last_checkpoint.c_str());
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string data_dir;
    std::string checkpoint;
    std::string pairs;
    std::string out_path;
    std::string split = "test";
    bool splits = false;
    std::size_t workers = 0;
    std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& args) {
    const Dataset ds = load_dataset(args.data_dir);
    const CatModel model = load_model(args.checkpoint);
    check_class_count(model, ds);
    const PairSpec spec = parse_pair_spec(args.pairs);
    const std::size_t workers = resolve_workers(args.workers);
    const auto procs = ds.procedures_in(parse_split(args.split));

    EvalOutcome outcome =
        evaluate_checkpoint(model, ds, procs, spec, args.seed, args.splits, workers,
                            fs::path(args.checkpoint).filename().string());
    const SpreadStats spread = split_spread(model, ds, procs, workers);
    outcome.report.intra_variance = spread.intra;
    outcome.report.inter_variance = spread.inter;

    write_report_files(outcome.report, args.out_path);
    print_metrics(outcome.report, args.splits);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
    std::string checkpoint;
    std::string ref;
    std::vector<std::string> candidates;
};

int run_score(const ScoreArgs& args) {
    const CatModel model = load_model(args.checkpoint);
    const Tensor e_ref = embed_feature_file(model, args.ref);
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(args.candidates.size());
    for (const std::string& cand : args.candidates) {
        scored.emplace_back(score(e_ref, embed_feature_file(model, cand)), &cand);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [s, path] : scored) {
        std::printf("%.6f %s\n", s, path->c_str());
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// warn

struct WarnArgs {
    std::string checkpoint;
    std::string reference;
    std::string stream;
    std::size_t window_k = 30;
    double threshold = 0.0;
    std::size_t stride = 25;
};

// Prints every history entry not yet printed, inserting the warning line
// right after the entry that crossed.
void print_new_distances(const StreamMonitor& monitor, std::size_t& printed, bool& warn_printed) {
    for (; printed < monitor.history().size(); ++printed) {
        const auto& [t, d] = monitor.history()[printed];
        nlohmann::json line;
        line["t"] = t;
        line["distance"] = d;
        std::cout << line.dump() << "\n";
        if (!warn_printed && monitor.warned_at() && *monitor.warned_at() == t) {
            std::cout << WarningEvent{t, d, monitor.warn_threshold()}.to_json() << "\n";
            warn_printed = true;
        }
        std::cout.flush();
    }
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// Feeds frame rows read from stdin: one PVFT header, then rows arriving in
// arbitrary chunks. An early end of input closes the stream cleanly; a
// partial row is an error.
void feed_from_stdin(const CatModel& model, StreamMonitor& monitor, std::size_t& printed,
                     bool& warn_printed) {
    unsigned char header[16];
    std::cin.read(reinterpret_cast<char*>(header), 16);
    if (std::cin.gcount() != 16 || std::memcmp(header, "PVFT", 4) != 0) {
        throw IoError("stdin stream: missing PVFT header");
    }
    const std::uint32_t version = get_u32_le(header + 4);
    const std::uint32_t num_frames = get_u32_le(header + 8);
    const std::uint32_t dim = get_u32_le(header + 12);
    if (version != 1) {
        throw DataError("stdin stream: unsupported version " + std::to_string(version));
    }
    if (num_frames == 0 || dim == 0) {
        throw DataError("stdin stream: zero frames or zero dim");
    }

    std::vector<unsigned char> row_bytes(4ull * dim);
    for (std::uint32_t r = 0; r < num_frames; ++r) {
        std::cin.read(reinterpret_cast<char*>(row_bytes.data()),
                      static_cast<std::streamsize>(row_bytes.size()));
        const std::streamsize got = std::cin.gcount();
        if (got == 0) {
            break; // stream ended early, treat as closed
        }
        if (got != static_cast<std::streamsize>(row_bytes.size())) {
            throw DataError("stdin stream: truncated frame row");
        }
        Tensor row({1, dim});
        for (std::uint32_t c = 0; c < dim; ++c) {
            row.data[c] =
                static_cast<double>(std::bit_cast<float>(get_u32_le(row_bytes.data() + 4ull * c)));
        }
        monitor.feed(model, row);
        print_new_distances(monitor, printed, warn_printed);
    }
}

int run_warn(const WarnArgs& args) {
    const CatModel model = load_model(args.checkpoint);
    StreamMonitor monitor(read_features(args.reference), args.window_k, args.threshold,
                          args.stride);
    std::size_t printed = 0;
    bool warn_printed = false;
    if (args.stream == "-") {
        feed_from_stdin(model, monitor, printed, warn_printed);
    } else {
        monitor.feed(model, read_features(args.stream));
        print_new_distances(monitor, printed, warn_printed);
    }
    return monitor.warned_at() ? kExitWarned : kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string data_dir;
    std::string run_dir;
    std::string pairs;
    std::string out_path;
    std::string split = "test";
    bool splits = false;
    std::size_t workers = 0;
    std::uint64_t seed = 0;
};

int run_report(const ReportArgs& args) {
    const Dataset ds = load_dataset(args.data_dir);
    const PairSpec spec = parse_pair_spec(args.pairs);
    const std::size_t workers = resolve_workers(args.workers);
    const auto procs = ds.procedures_in(parse_split(args.split));

    // Training progression: every periodic snapshot in name order, falling
    // back to the final checkpoint when no periodic ones were written.
    std::vector<std::string> curve_files;
    for (const auto& entry : fs::directory_iterator(args.run_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("epoch_", 0) == 0 && name.size() > 5 &&
            name.compare(name.size() - 5, 5, ".ckpt") == 0) {
            curve_files.push_back(name);
        }
    }
    std::sort(curve_files.begin(), curve_files.end());
    if (curve_files.empty() && fs::exists(fs::path(args.run_dir) / "last.ckpt")) {
        curve_files.push_back("last.ckpt");
    }
    if (curve_files.empty()) {
        throw DataError("no checkpoints found in '" + args.run_dir + "'");
    }

    MetricsReport report;
    for (const std::string& name : curve_files) {
        const CatModel model = load_model((fs::path(args.run_dir) / name).string());
        check_class_count(model, ds);
        const EvalOutcome outcome =
            evaluate_checkpoint(model, ds, procs, spec, args.seed, false, workers, name);
        report.checkpoint_curve.push_back(outcome.report.checkpoint_curve.front());
    }

    // Headline metrics come from the strongest available model of the run.
    std::string final_name = curve_files.back();
    for (const char* preferred : {"best.ckpt", "last.ckpt"}) {
        if (fs::exists(fs::path(args.run_dir) / preferred)) {
            final_name = preferred;
            break;
        }
    }
    const CatModel final_model = load_model((fs::path(args.run_dir) / final_name).string());
    check_class_count(final_model, ds);
    const EvalOutcome final_outcome = evaluate_checkpoint(final_model, ds, procs, spec, args.seed,
                                                          args.splits, workers, final_name);
    report.auc = final_outcome.report.auc;
    report.wdr = final_outcome.report.wdr;
    report.tau = final_outcome.report.tau;
    report.distance_curve = final_outcome.report.distance_curve;
    report.per_split_auc = final_outcome.report.per_split_auc;
    const SpreadStats spread = split_spread(final_model, ds, procs, workers);
    report.intra_variance = spread.intra;
    report.inter_variance = spread.inter;

    write_report_files(report, args.out_path);
    std::printf("checkpoints %zu\n", report.checkpoint_curve.size());
    print_metrics(report, args.splits);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"procedure-consistency verification toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic step-structured dataset");
    gen->add_option("--config", gen_args.config_path,
                    "generator config JSON (defaults apply when omitted)");
    gen->add_option("--out", gen_args.out_dir, "output dataset directory")->required();
    gen->add_option("--seed", gen_args.seed, "override the config's seed");
    gen->add_flag("--force", gen_args.force, "write into a non-empty output directory");

    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "train a procedure embedder");
    tr->add_option("--data", train_args.data_dir, "dataset directory")->required();
    tr->add_option("--model-config", train_args.model_config, "model config JSON");
    tr->add_option("--train-config", train_args.train_config, "training config JSON");
    tr->add_option("--out", train_args.out_dir, "run directory for checkpoints and the log")
        ->required();
    tr->add_option("--resume", train_args.resume, "checkpoint to continue from");

    EvalArgs eval_args;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on verification pairs");
    ev->add_option("--data", eval_args.data_dir, "dataset directory")->required();
    ev->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
    ev->add_option("--pairs", eval_args.pairs, "pair counts as <n_pos>,<n_neg>")->required();
    ev->add_option("--out", eval_args.out_path, "metrics report JSON path (CSV curves beside it)")
        ->required();
    ev->add_option("--split", eval_args.split, "dataset split to draw pairs from")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    ev->add_flag("--splits", eval_args.splits,
                 "also report AUC per negative kind (alter-order/alter-number)");
    ev->add_option("--workers", eval_args.workers,
                   "embedding worker threads (PROCVER_WORKERS fallback; never changes results)");
    ev->add_option("--seed", eval_args.seed, "pair sampling seed")->capture_default_str();

    ScoreArgs score_args;
    auto* sc = app.add_subcommand("score", "rank candidate videos by embedding similarity");
    sc->add_option("--checkpoint", score_args.checkpoint, "model checkpoint")->required();
    sc->add_option("--ref", score_args.ref, "reference feature file")->required();
    sc->add_option("--cand", score_args.candidates, "candidate feature files")
        ->required()
        ->expected(-1);

    WarnArgs warn_args;
    auto* wa = app.add_subcommand("warn", "monitor a stream against a reference procedure");
    wa->add_option("--checkpoint", warn_args.checkpoint, "model checkpoint")->required();
    wa->add_option("--reference", warn_args.reference, "reference feature file")->required();
    wa->add_option("--stream", warn_args.stream, "stream feature file, or '-' for stdin")
        ->required();
    wa->add_option("--k", warn_args.window_k, "reference window half-width")
        ->capture_default_str();
    wa->add_option("--threshold", warn_args.threshold, "warning threshold on the distance")
        ->required();
    wa->add_option("--stride", warn_args.stride, "frames between evaluations")
        ->capture_default_str();

    ReportArgs report_args;
    auto* re = app.add_subcommand("report", "summarize a training run across its checkpoints");
    re->add_option("--data", report_args.data_dir, "dataset directory")->required();
    re->add_option("--run", report_args.run_dir, "training output directory")->required();
    re->add_option("--pairs", report_args.pairs, "pair counts as <n_pos>,<n_neg>")->required();
    re->add_option("--out", report_args.out_path,
                   "metrics report JSON path (CSV curves beside it)")
        ->required();
    re->add_option("--split", report_args.split, "dataset split to draw pairs from")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    re->add_flag("--splits", report_args.splits,
                 "also report AUC per negative kind (alter-order/alter-number)");
    re->add_option("--workers", report_args.workers,
                   "embedding worker threads (PROCVER_WORKERS fallback; never changes results)");
    re->add_option("--seed", report_args.seed, "pair sampling seed")->capture_default_str();

    int rc = kExitOk;
    gen->callback([&] { rc = run_gen_data(gen_args); });
    tr->callback([&] { rc = run_train(train_args); });
    ev->callback([&] { rc = run_eval(eval_args); });
    sc->callback([&] { rc = run_score(score_args); });
    wa->callback([&] { rc = run_warn(warn_args); });
    re->callback([&] { rc = run_report(report_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) { // DataError, IoError, filesystem errors
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return rc;
}
