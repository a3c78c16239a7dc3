#include "procver/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "procver/pvft.hpp"

namespace procver {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const char* where, std::initializer_list<const char*> keys) {
    if (!obj.is_object()) {
        throw DataError(std::string("manifest: ") + where + " is not an object");
    }
    for (const char* k : keys) {
        if (!obj.contains(k)) {
            throw DataError(std::string("manifest: ") + where + " missing key '" + k + "'");
        }
    }
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* k : keys) {
            known = known || key == k;
        }
        if (!known) {
            throw DataError(std::string("manifest: ") + where + " has unknown key '" + key + "'");
        }
    }
}

std::size_t positive_int(const json& v, const std::string& what) {
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) {
        throw DataError("manifest: " + what + " must be a positive integer");
    }
    return v.get<std::size_t>();
}

std::string nonempty_string(const json& v, const std::string& what) {
    if (!v.is_string() || v.get<std::string>().empty()) {
        throw DataError("manifest: " + what + " must be a non-empty string");
    }
    return v.get<std::string>();
}

} // namespace

Dataset load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest '" + path + "'");
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("manifest '" + path + "': " + e.what());
    }
    require_keys(doc, "document", {"dim", "tasks"});

    Dataset ds;
    ds.dim = positive_int(doc["dim"], "dim");
    ds.root = std::filesystem::path(path).parent_path().string();
    if (!doc["tasks"].is_array()) {
        throw DataError("manifest: tasks must be an array");
    }

    std::set<std::string> task_ids, procedure_ids, video_ids;
    for (const json& jt : doc["tasks"]) {
        require_keys(jt, "task", {"task_id", "procedures"});
        Task task;
        task.task_id = nonempty_string(jt["task_id"], "task_id");
        if (!task_ids.insert(task.task_id).second) {
            throw DataError("manifest: duplicate task_id '" + task.task_id + "'");
        }
        if (!jt["procedures"].is_array() || jt["procedures"].empty()) {
            throw DataError("manifest: task '" + task.task_id + "' has no procedures");
        }
        std::set<std::string> step_signatures;
        for (const json& jp : jt["procedures"]) {
            require_keys(jp, "procedure", {"procedure_id", "steps", "split", "videos"});
            ProcedureRecord proc;
            proc.task_id = task.task_id;
            proc.procedure_id = nonempty_string(jp["procedure_id"], "procedure_id");
            if (!procedure_ids.insert(proc.procedure_id).second) {
                throw DataError("manifest: procedure '" + proc.procedure_id +
                                "' appears more than once (possible split overlap)");
            }
            proc.split = parse_split(nonempty_string(jp["split"], "split"));
            if (!jp["steps"].is_array() || jp["steps"].empty()) {
                throw DataError("manifest: procedure '" + proc.procedure_id + "' has no steps");
            }
            std::string signature;
            for (const json& js : jp["steps"]) {
                proc.steps.push_back(parse_step_token(nonempty_string(js, "step")));
                signature += proc.steps.back().canonical();
                signature += '\n';
            }
            if (!step_signatures.insert(signature).second) {
                throw DataError("manifest: task '" + task.task_id +
                                "' contains two procedures with identical step sequences");
            }
            if (!jp["videos"].is_array()) {
                throw DataError("manifest: procedure '" + proc.procedure_id +
                                "' videos must be an array");
            }
            for (const json& jv : jp["videos"]) {
                require_keys(jv, "video", {"video_id", "feature_file", "num_frames"});
                VideoRecord vid;
                vid.video_id = nonempty_string(jv["video_id"], "video_id");
                if (!video_ids.insert(vid.video_id).second) {
                    throw DataError("manifest: duplicate video_id '" + vid.video_id + "'");
                }
                vid.feature_file = nonempty_string(jv["feature_file"], "feature_file");
                vid.num_frames = positive_int(jv["num_frames"], "num_frames");
                const FeatureHeader h = read_feature_header(ds.feature_path(vid));
                if (h.num_frames != vid.num_frames) {
                    throw DataError("manifest: video '" + vid.video_id + "' declares " +
                                    std::to_string(vid.num_frames) + " frames but file has " +
                                    std::to_string(h.num_frames));
                }
                if (h.dim != ds.dim) {
                    throw DataError("manifest: video '" + vid.video_id + "' feature dim " +
                                    std::to_string(h.dim) + " != dataset dim " +
                                    std::to_string(ds.dim));
                }
                proc.videos.push_back(std::move(vid));
            }
            task.procedures.push_back(std::move(proc));
        }
        ds.tasks.push_back(std::move(task));
    }
    if (ds.tasks.empty()) {
        throw DataError("manifest: no tasks");
    }
    return ds;
}

std::string manifest_to_string(const Dataset& ds) {
    json doc;
    doc["dim"] = ds.dim;
    doc["tasks"] = json::array();
    for (const Task& t : ds.tasks) {
        json jt;
        jt["task_id"] = t.task_id;
        jt["procedures"] = json::array();
        for (const ProcedureRecord& p : t.procedures) {
            json jp;
            jp["procedure_id"] = p.procedure_id;
            jp["split"] = split_name(p.split);
            jp["steps"] = json::array();
            for (const StepToken& s : p.steps) {
                jp["steps"].push_back(s.canonical());
            }
            jp["videos"] = json::array();
            for (const VideoRecord& v : p.videos) {
                json jv;
                jv["video_id"] = v.video_id;
                jv["feature_file"] = v.feature_file;
                jv["num_frames"] = v.num_frames;
                jp["videos"].push_back(std::move(jv));
            }
            jt["procedures"].push_back(std::move(jp));
        }
        doc["tasks"].push_back(std::move(jt));
    }
    return doc.dump(2) + "\n";
}

void save_manifest(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << manifest_to_string(ds);
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

} // namespace procver
