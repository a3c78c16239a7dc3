#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "procver/errors.hpp"

namespace procver {

// Atomic action unit, e.g. {"take", "flask"} with canonical form "take-flask".
// The object part may itself contain '-'; parsing splits on the first one.
struct StepToken {
    std::string verb;
    std::string object;

    std::string canonical() const { return verb + "-" + object; }
    bool operator==(const StepToken&) const = default;
};

StepToken parse_step_token(const std::string& canonical);

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct VideoRecord {
    std::string video_id;
    std::string feature_file; // path relative to the dataset root
    std::size_t num_frames = 0;
};

// One procedure: an ordered step sequence plus the videos performing it.
struct ProcedureRecord {
    std::string task_id;
    std::string procedure_id;
    std::vector<StepToken> steps;
    Split split = Split::train;
    std::vector<VideoRecord> videos;
};

struct Task {
    std::string task_id;
    std::vector<ProcedureRecord> procedures;
};

// Owning, immutable-after-load container for a whole dataset on disk.
struct Dataset {
    std::size_t dim = 0;
    std::string root; // directory holding the manifest and feature files
    std::vector<Task> tasks;

    std::string feature_path(const VideoRecord& v) const;
    std::vector<const ProcedureRecord*> procedures_in(Split s) const;
    std::size_t video_count() const;
};

// Per-split views of procedures; pointers stay valid for the Dataset lifetime.
struct DatasetSplit {
    std::vector<const ProcedureRecord*> train;
    std::vector<const ProcedureRecord*> val;
    std::vector<const ProcedureRecord*> test;
};

DatasetSplit make_split(const Dataset& ds);

// Non-owning handle to one video within its procedure.
struct VideoRef {
    const ProcedureRecord* procedure = nullptr;
    const VideoRecord* video = nullptr;
};

// One verification pair. Positives are two videos of the same procedure
// (ed == 0); negatives are two procedures of one task (ed >= 1).
struct PairSample {
    VideoRef a;
    VideoRef b;
    bool is_positive = false;
    std::size_t ed = 0;
};

} // namespace procver
