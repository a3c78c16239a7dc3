#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "procver/generator.hpp"
#include "procver/levenshtein.hpp"
#include "procver/manifest.hpp"
#include "procver/pvft.hpp"
#include "procver/sampling.hpp"

using namespace procver;
namespace fs = std::filesystem;

namespace {

// Exhaustive-recursion edit distance: the oracle the DP implementation is
// judged against. Exponential, fine for short sequences.
std::size_t lev_oracle(const std::vector<StepToken>& a, std::size_t i,
                       const std::vector<StepToken>& b, std::size_t j) {
    if (i == a.size()) {
        return b.size() - j;
    }
    if (j == b.size()) {
        return a.size() - i;
    }
    const std::size_t del = lev_oracle(a, i + 1, b, j) + 1;
    const std::size_t ins = lev_oracle(a, i, b, j + 1) + 1;
    const std::size_t sub = lev_oracle(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
    return std::min({del, ins, sub});
}

std::size_t lev_oracle(const std::vector<StepToken>& a, const std::vector<StepToken>& b) {
    return lev_oracle(a, 0, b, 0);
}

std::vector<StepToken> tokens(const std::vector<std::string>& canon) {
    std::vector<StepToken> out;
    for (const std::string& c : canon) {
        out.push_back(parse_step_token(c));
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::multiset<std::string> token_multiset(const std::vector<StepToken>& steps) {
    std::multiset<std::string> out;
    for (const StepToken& s : steps) {
        out.insert(s.canonical());
    }
    return out;
}

GeneratorConfig small_config() {
    GeneratorConfig cfg;
    cfg.seed = 77;
    cfg.d_in = 4;
    cfg.num_tasks = 3;
    cfg.procedures_per_task = 3;
    cfg.videos_per_procedure = 2;
    cfg.step_vocab_size = 8;
    cfg.duration_range = {2, 4};
    cfg.noise_sigma = 0.4;
    cfg.base_steps_range = {3, 5};
    cfg.variant_ops_range = {1, 2};
    cfg.val_tasks = 1;
    cfg.test_tasks = 1;
    cfg.min_video_frames = 8;
    return cfg;
}

} // namespace

TEST_CASE("step token parsing") {
    const StepToken t = parse_step_token("take-measuring-cup");
    CHECK(t.verb == "take");
    CHECK(t.object == "measuring-cup"); // split on the first dash only
    CHECK(t.canonical() == "take-measuring-cup");
    CHECK_THROWS_AS(parse_step_token("justoneword"), DataError);
    CHECK_THROWS_AS(parse_step_token("-flask"), DataError);
    CHECK_THROWS_AS(parse_step_token("take-"), DataError);
}

TEST_CASE("edit distance basics") {
    const auto abc = tokens({"a-x", "b-x", "c-x"});
    CHECK(levenshtein(abc, abc) == 0);
    CHECK(levenshtein(abc, tokens({"a-x", "c-x"})) == 1);                  // one deletion
    CHECK(levenshtein(tokens({"a-x", "c-x"}), abc) == 1);                  // one insertion
    CHECK(levenshtein(abc, tokens({"b-x", "a-x", "c-x"})) == 2);           // adjacent swap
    CHECK(levenshtein(abc, {}) == 3);
    CHECK(levenshtein({}, {}) == 0);
}

TEST_CASE("edit distance on a laboratory pair known by hand") {
    const auto a = tokens({"take-clamp", "screw-clamp", "take-tube", "screw-clamp",
                           "take-flask", "pour-flask", "put-flask"});
    const auto b = tokens({"take-clamp", "screw-clamp", "take-flask", "put-flask",
                           "take-tube", "screw-clamp"});
    CHECK(levenshtein(a, b) == 5);
    CHECK(lev_oracle(a, b) == 5);
}

TEST_CASE("edit distance agrees with the recursive oracle on short sequences") {
    // every pair of sequences up to length 4 over a 3-token alphabet; the
    // full length-6 sweep lives in the acceptance gate
    const auto alphabet = tokens({"a-x", "b-x", "c-x"});
    std::vector<std::vector<StepToken>> all;
    all.push_back({});
    for (std::size_t len = 1; len <= 4; ++len) {
        std::size_t count = 1;
        for (std::size_t i = 0; i < len; ++i) {
            count *= 3;
        }
        for (std::size_t code = 0; code < count; ++code) {
            std::vector<StepToken> seq;
            std::size_t c = code;
            for (std::size_t i = 0; i < len; ++i, c /= 3) {
                seq.push_back(alphabet[c % 3]);
            }
            all.push_back(std::move(seq));
        }
    }
    // subsample pairs to keep the suite quick but still cover all lengths
    Rng rng(3);
    std::size_t checked = 0;
    for (std::size_t trial = 0; trial < 4000; ++trial) {
        const auto& a = all[rng.uniform_int(all.size())];
        const auto& b = all[rng.uniform_int(all.size())];
        REQUIRE(levenshtein(a, b) == lev_oracle(a, b));
        ++checked;
    }
    CHECK(checked == 4000);
}

TEST_CASE("edit distance is a metric on random triples") {
    Rng rng(5);
    const auto alphabet = tokens({"a-x", "b-x", "c-x", "d-x"});
    auto random_seq = [&]() {
        std::vector<StepToken> s;
        const std::size_t len = rng.uniform_int(std::uint64_t{7});
        for (std::size_t i = 0; i < len; ++i) {
            s.push_back(alphabet[rng.uniform_int(alphabet.size())]);
        }
        return s;
    };
    for (int trial = 0; trial < 300; ++trial) {
        const auto a = random_seq(), b = random_seq(), c = random_seq();
        const auto dab = levenshtein(a, b);
        CHECK(dab == levenshtein(b, a));
        CHECK((dab == 0) == (a == b));
        CHECK(levenshtein(a, c) <= dab + levenshtein(b, c));
    }
}

TEST_CASE("segment bounds and center selection") {
    // 32 frames in 16 segments: centers are the odd indices
    const auto idx = sample_segment_indices(32, 16, SampleMode::eval, nullptr);
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(idx[i] == 2 * i + 1);
    }
    // num_frames == K selects every frame in both modes
    Rng rng(1);
    const auto eval_ident = sample_segment_indices(5, 5, SampleMode::eval, nullptr);
    const auto train_ident = sample_segment_indices(5, 5, SampleMode::train, &rng);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(eval_ident[i] == i);
        CHECK(train_ident[i] == i);
    }
    CHECK(sample_segment_indices(33, 16, SampleMode::eval, nullptr) ==
          sample_segment_indices(33, 16, SampleMode::eval, nullptr));
    CHECK_THROWS_AS(sample_segment_indices(15, 16, SampleMode::eval, nullptr), DataError);
    CHECK_THROWS_AS(sample_segment_indices(32, 16, SampleMode::train, nullptr), ConfigError);
}

TEST_CASE("train-mode selection stays inside each segment") {
    Rng rng(9);
    const auto bounds = segment_bounds(45, 16);
    for (int trial = 0; trial < 50; ++trial) {
        const auto idx = sample_segment_indices(45, 16, SampleMode::train, &rng);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(idx[i] >= bounds[i].begin);
            CHECK(idx[i] < bounds[i].end);
        }
    }
}

TEST_CASE("segment gather returns the selected rows") {
    Tensor feats({6, 2});
    for (std::size_t i = 0; i < 6; ++i) {
        feats(i, 0) = static_cast<double>(i);
        feats(i, 1) = 10.0 + static_cast<double>(i);
    }
    const Tensor picked = sample_segments(feats, 3, SampleMode::eval, nullptr);
    CHECK(picked.rows() == 3);
    CHECK(picked(0, 0) == 1.0); // centers of [0,2) [2,4) [4,6)
    CHECK(picked(1, 0) == 3.0);
    CHECK(picked(2, 1) == 15.0);
}

TEST_CASE("feature file round-trip and validation") {
    const fs::path dir = fresh_dir("procver_pvft_test");
    const std::string path = (dir / "x.pvft").string();
    Tensor t({3, 2});
    double fill = 0.25;
    for (double& v : t.data) {
        v = fill;
        fill += 0.5;
    }
    write_features(path, t);
    const Tensor back = read_features(path);
    CHECK(back.same_shape(t));
    CHECK(back.data == t.data); // exact: all values are f32-representable

    const FeatureHeader h = read_feature_header(path);
    CHECK(h.version == 1);
    CHECK(h.num_frames == 3);
    CHECK(h.dim == 2);

    // corrupt the magic
    {
        std::string bytes = slurp(path);
        bytes[0] = 'X';
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
    CHECK_THROWS_AS(read_features(path), IoError);

    // truncate the payload
    write_features(path, t);
    {
        std::string bytes = slurp(path);
        bytes.resize(bytes.size() - 4);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
    CHECK_THROWS_AS(read_features(path), DataError);
    CHECK_THROWS_AS(read_features((dir / "missing.pvft").string()), IoError);
}

TEST_CASE("generated datasets are reproducible byte for byte") {
    const GeneratorConfig cfg = small_config();
    const fs::path a = fresh_dir("procver_gen_a");
    const fs::path b = fresh_dir("procver_gen_b");
    const Dataset da = generate_dataset(cfg, a.string());
    generate_dataset(cfg, b.string());
    CHECK(slurp((a / "manifest.json").string()) == slurp((b / "manifest.json").string()));
    CHECK(slurp((a / "generator_config.json").string()) ==
          slurp((b / "generator_config.json").string()));
    for (const Task& t : da.tasks) {
        for (const ProcedureRecord& p : t.procedures) {
            for (const VideoRecord& v : p.videos) {
                CHECK(slurp((a / v.feature_file).string()) == slurp((b / v.feature_file).string()));
            }
        }
    }
}

TEST_CASE("generated dataset structure and split layout") {
    const GeneratorConfig cfg = small_config();
    const fs::path dir = fresh_dir("procver_gen_struct");
    const Dataset ds = generate_dataset(cfg, dir.string());
    CHECK(ds.tasks.size() == 3);
    CHECK(ds.procedures_in(Split::train).size() == 3);
    CHECK(ds.procedures_in(Split::val).size() == 3);
    CHECK(ds.procedures_in(Split::test).size() == 3);

    std::set<std::string> proc_ids;
    for (const Task& t : ds.tasks) {
        std::set<std::string> signatures;
        for (const ProcedureRecord& p : t.procedures) {
            CHECK(proc_ids.insert(p.procedure_id).second);
            CHECK(!p.steps.empty());
            std::string sig;
            for (const StepToken& s : p.steps) {
                sig += s.canonical() + "|";
            }
            CHECK(signatures.insert(sig).second); // all procedures distinct
            for (const VideoRecord& v : p.videos) {
                CHECK(v.num_frames >= cfg.min_video_frames);
                const FeatureHeader h = read_feature_header(ds.feature_path(v));
                CHECK(h.num_frames == v.num_frames);
                CHECK(h.dim == cfg.d_in);
            }
        }
    }
}

TEST_CASE("loading a generated manifest reproduces it exactly") {
    const GeneratorConfig cfg = small_config();
    const fs::path dir = fresh_dir("procver_gen_roundtrip");
    generate_dataset(cfg, dir.string());
    const std::string manifest_path = (dir / "manifest.json").string();
    const std::string original = slurp(manifest_path);
    const Dataset loaded = load_manifest(manifest_path);
    CHECK(manifest_to_string(loaded) == original);
    CHECK(loaded.dim == cfg.d_in);
    CHECK(loaded.video_count() == cfg.num_tasks * cfg.procedures_per_task *
                                      cfg.videos_per_procedure);
}

TEST_CASE("manifest validation rejects malformed inputs") {
    const GeneratorConfig cfg = small_config();
    const fs::path dir = fresh_dir("procver_manifest_errors");
    generate_dataset(cfg, dir.string());
    const std::string path = (dir / "manifest.json").string();
    const std::string good = slurp(path);

    auto write_text = [&](const std::string& text) {
        std::ofstream out(path, std::ios::trunc);
        out << text;
    };

    write_text("{ not json");
    CHECK_THROWS_AS(load_manifest(path), DataError);

    // unknown key at document level
    write_text(std::string("{\"extra\": 1, ") + good.substr(good.find('{') + 1));
    CHECK_THROWS_AS(load_manifest(path), DataError);

    // a procedure listed under two splits via a duplicated id
    {
        std::string dup = good;
        const std::string needle = "task_000.p01";
        dup.replace(dup.find("task_000.p02"), needle.size(), needle);
        write_text(dup);
        CHECK_THROWS_AS(load_manifest(path), DataError);
    }

    // declared frame count disagreeing with the feature file
    {
        std::string wrong = good;
        const auto pos = wrong.find("\"num_frames\": ");
        wrong.replace(pos, std::string("\"num_frames\": ").size(), "\"num_frames\": 4000");
        const auto end = wrong.find_first_of(",\n", pos + 18);
        wrong.erase(pos + 18, end - (pos + 18));
        write_text(wrong);
        CHECK_THROWS_AS(load_manifest(path), DataError);
    }

    // dataset dim disagreeing with feature files
    {
        std::string wrong = good;
        const auto pos = wrong.find("\"dim\": 4");
        wrong.replace(pos, 8, "\"dim\": 5");
        write_text(wrong);
        CHECK_THROWS_AS(load_manifest(path), DataError);
    }

    write_text(good);
    fs::remove(dir / "features" / "task_000.p00.v000.pvft");
    CHECK_THROWS_AS(load_manifest(path), IoError);
}

TEST_CASE("zero noise produces identical frames per step") {
    GeneratorConfig cfg = small_config();
    cfg.noise_sigma = 0.0;
    const auto steps = tokens({"take-flask", "pour-flask", "take-flask"});
    Rng rng(4);
    const SynthVideo sv = synth_video(cfg, steps, rng);
    REQUIRE(sv.step_offsets.size() == 3);
    const Tensor proto0 = step_prototype(cfg, steps[0]);
    CHECK(l2_norm(proto0) == doctest::Approx(1.0).epsilon(1e-12));
    // every frame equals its step prototype (through f32 rounding)
    for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t begin = sv.step_offsets[s];
        const std::size_t end = s + 1 < 3 ? sv.step_offsets[s + 1] : sv.features.rows();
        const Tensor proto = step_prototype(cfg, steps[s]);
        for (std::size_t f = begin; f < end; ++f) {
            for (std::size_t j = 0; j < cfg.d_in; ++j) {
                CHECK(sv.features(f, j) == proto[j]);
            }
        }
    }
    // steps 0 and 2 share a token, steps 0 and 1 do not
    CHECK(sv.features(sv.step_offsets[2], 0) == sv.features(0, 0));
    CHECK(sv.features(sv.step_offsets[1], 0) != sv.features(0, 0));
}

TEST_CASE("swap-only generation permutes the base step multiset") {
    GeneratorConfig cfg = small_config();
    cfg.delete_weight = 0.0;
    cfg.insert_weight = 0.0;
    cfg.swap_weight = 1.0;
    cfg.procedures_per_task = 4;
    const fs::path dir = fresh_dir("procver_gen_swaponly");
    const Dataset ds = generate_dataset(cfg, dir.string());
    for (const Task& t : ds.tasks) {
        const auto base_multiset = token_multiset(t.procedures[0].steps);
        for (const ProcedureRecord& p : t.procedures) {
            CHECK(token_multiset(p.steps) == base_multiset);
        }
    }
}

TEST_CASE("variant construction fails loudly when the space is exhausted") {
    GeneratorConfig cfg = small_config();
    cfg.base_steps_range = {2, 2};
    cfg.step_vocab_size = 2;
    cfg.variant_ops_range = {1, 1};
    cfg.delete_weight = 0.0;
    cfg.insert_weight = 0.0;
    cfg.swap_weight = 1.0;
    cfg.procedures_per_task = 3; // only one distinct swap variant exists
    const fs::path dir = fresh_dir("procver_gen_exhausted");
    CHECK_THROWS_AS(generate_dataset(cfg, dir.string()), DataError);
}

TEST_CASE("generator config json round-trip and validation") {
    GeneratorConfig cfg = small_config();
    const std::string text = generator_config_to_json(cfg);
    const GeneratorConfig back = generator_config_from_json(text);
    CHECK(generator_config_to_json(back) == text);

    CHECK_THROWS_AS(generator_config_from_json("{\"typo_key\": 1}"), ConfigError);
    CHECK_THROWS_AS(generator_config_from_json("{\"noise_sigma\": -1}"), ConfigError);
    CHECK_THROWS_AS(generator_config_from_json(
                        "{\"transform_weights\": {\"delete\": 1.0, \"insert\": 0.5, \"swap\": 0.0}}"),
                    ConfigError);
    // partial configs fall back to defaults
    const GeneratorConfig partial = generator_config_from_json("{\"num_tasks\": 2}");
    CHECK(partial.num_tasks == 2);
    CHECK(partial.d_in == GeneratorConfig{}.d_in);
}

TEST_CASE("pair sampling enumerates within-procedure and within-task pairs") {
    // two procedures in one task, two videos each: 2 positives, 4 negatives
    Dataset ds;
    ds.dim = 4;
    Task task;
    task.task_id = "t";
    for (int p = 0; p < 2; ++p) {
        ProcedureRecord proc;
        proc.task_id = "t";
        proc.procedure_id = "t.p" + std::to_string(p);
        proc.steps = p == 0 ? tokens({"a-x", "b-x", "c-x"}) : tokens({"a-x", "c-x"});
        for (int v = 0; v < 2; ++v) {
            VideoRecord vid;
            vid.video_id = proc.procedure_id + ".v" + std::to_string(v);
            vid.feature_file = vid.video_id + ".pvft";
            vid.num_frames = 16;
            proc.videos.push_back(vid);
        }
        task.procedures.push_back(std::move(proc));
    }
    ds.tasks.push_back(std::move(task));

    const auto procs = ds.procedures_in(Split::train);
    REQUIRE(procs.size() == 2);
    CHECK(enumerate_positive_pairs(procs).size() == 2);
    CHECK(enumerate_negative_pairs(procs).size() == 4);

    Rng rng(8);
    const auto pairs = sample_pairs(procs, 2, 4, rng);
    CHECK(pairs.size() == 6);
    for (const PairSample& s : pairs) {
        if (s.is_positive) {
            CHECK(s.a.procedure->procedure_id == s.b.procedure->procedure_id);
            CHECK(s.ed == 0);
        } else {
            CHECK(s.a.procedure->procedure_id != s.b.procedure->procedure_id);
            CHECK(s.a.procedure->task_id == s.b.procedure->task_id);
            CHECK(s.ed == 1); // the two sequences differ by one deletion
        }
    }
    CHECK_THROWS_AS(sample_pairs(procs, 3, 0, rng), DataError);
    CHECK_THROWS_AS(sample_pairs(procs, 0, 5, rng), DataError);

    // same seed, same pairs
    Rng r1(21), r2(21);
    const auto p1 = sample_pairs(procs, 1, 2, r1);
    const auto p2 = sample_pairs(procs, 1, 2, r2);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].a.video->video_id == p2[i].a.video->video_id);
        CHECK(p1[i].b.video->video_id == p2[i].b.video->video_id);
    }
}

TEST_CASE("negative pairs never cross tasks") {
    GeneratorConfig cfg = small_config();
    const fs::path dir = fresh_dir("procver_gen_pairs");
    const Dataset ds = generate_dataset(cfg, dir.string());
    const auto procs = ds.procedures_in(Split::train);
    const auto negatives = enumerate_negative_pairs(procs);
    CHECK(!negatives.empty());
    for (const PairSample& s : negatives) {
        CHECK(s.a.procedure->task_id == s.b.procedure->task_id);
        CHECK(s.ed >= 1);
    }
}
