#include "procver/dataset.hpp"

namespace procver {

StepToken parse_step_token(const std::string& canonical) {
    const auto dash = canonical.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == canonical.size()) {
        throw DataError("step token '" + canonical + "' is not of the form verb-object");
    }
    return StepToken{canonical.substr(0, dash), canonical.substr(dash + 1)};
}

const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    throw ConfigError("unknown split value");
}

Split parse_split(const std::string& name) {
    if (name == "train") {
        return Split::train;
    }
    if (name == "val") {
        return Split::val;
    }
    if (name == "test") {
        return Split::test;
    }
    throw DataError("unknown split '" + name + "' (expected train|val|test)");
}

std::string Dataset::feature_path(const VideoRecord& v) const {
    if (root.empty()) {
        return v.feature_file;
    }
    return root + "/" + v.feature_file;
}

std::vector<const ProcedureRecord*> Dataset::procedures_in(Split s) const {
    std::vector<const ProcedureRecord*> out;
    for (const Task& t : tasks) {
        for (const ProcedureRecord& p : t.procedures) {
            if (p.split == s) {
                out.push_back(&p);
            }
        }
    }
    return out;
}

std::size_t Dataset::video_count() const {
    std::size_t n = 0;
    for (const Task& t : tasks) {
        for (const ProcedureRecord& p : t.procedures) {
            n += p.videos.size();
        }
    }
    return n;
}

DatasetSplit make_split(const Dataset& ds) {
    return DatasetSplit{
        ds.procedures_in(Split::train),
        ds.procedures_in(Split::val),
        ds.procedures_in(Split::test),
    };
}

} // namespace procver
