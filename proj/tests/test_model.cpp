#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "procver/checkpoint.hpp"
#include "procver/model.hpp"

#include "fd_check.hpp"

using namespace procver;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_in = 6;
    cfg.width = 8;
    cfg.frames = 4;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.embedding_dim = 10;
    cfg.num_classes = 3;
    cfg.seed = 5;
    return cfg;
}

Tensor random_clip(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return procver::testing::random_tensor({cfg.frames, cfg.d_in}, rng, 0.8);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
}

} // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config();
    cfg.heads = 3; // 8 % 3 != 0
    CHECK_THROWS_AS(CatModel{cfg}, ConfigError);
    cfg = tiny_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(CatModel{cfg}, ConfigError);
    cfg = tiny_config();
    cfg.d_in = 0;
    CHECK_THROWS_AS(CatModel{cfg}, ConfigError);
    CHECK(ModelConfig{}.embedding_dim == 128);
    CHECK(ModelConfig{}.frames == 16);
}

TEST_CASE("forward output shapes") {
    const ModelConfig cfg = tiny_config();
    CatModel model(cfg);
    const ForwardOutput out = model.forward(random_clip(cfg, 1));
    CHECK(out.frame_features.shape == std::vector<std::size_t>{cfg.frames, cfg.width});
    CHECK(out.encoded.shape == std::vector<std::size_t>{cfg.frames, cfg.width});
    CHECK(out.embedding.shape == std::vector<std::size_t>{cfg.embedding_dim});
    CHECK(out.logits.shape == std::vector<std::size_t>{cfg.num_classes});

    Tensor bad({cfg.frames, cfg.d_in + 1});
    CHECK_THROWS_AS(model.forward(bad), ShapeError);
}

TEST_CASE("the head consumes the full flattened time axis") {
    const ModelConfig cfg = tiny_config();
    const CatModel model(cfg);
    bool found = false;
    for (const Parameter& p : model.parameters()) {
        if (p.name == "head.w") {
            found = true;
            CHECK(p.value.rows() == cfg.frames * cfg.width);
            CHECK(p.value.cols() == cfg.embedding_dim);
        }
    }
    CHECK(found);
}

TEST_CASE("forward is deterministic for fixed seed and input") {
    const ModelConfig cfg = tiny_config();
    CatModel a(cfg);
    CatModel b(cfg);
    const Tensor clip = random_clip(cfg, 2);
    const ForwardOutput oa = a.forward(clip);
    const ForwardOutput ob = b.forward(clip);
    CHECK(oa.embedding.data == ob.embedding.data);
    CHECK(oa.logits.data == ob.logits.data);
    CHECK(a.embed(clip).data == a.embed(clip).data);

    ModelConfig other = cfg;
    other.seed = 6;
    CatModel c(other);
    CHECK(c.forward(clip).embedding.data != oa.embedding.data);
}

TEST_CASE("identical clips produce identical embeddings") {
    const ModelConfig cfg = tiny_config();
    CatModel model(cfg);
    const Tensor clip = random_clip(cfg, 3);
    Tensor copy = clip;
    CHECK(model.embed(clip).data == model.embed(copy).data);
}

TEST_CASE("permuting input rows changes the embedding") {
    const ModelConfig cfg = tiny_config();
    CatModel model(cfg);
    const Tensor clip = random_clip(cfg, 4);
    Tensor permuted = clip;
    for (std::size_t j = 0; j < cfg.d_in; ++j) {
        std::swap(permuted(0, j), permuted(3, j));
    }
    CHECK(model.embed(clip).data != model.embed(permuted).data);
}

TEST_CASE("without the encoder the embedder is linear in the input") {
    ModelConfig cfg = tiny_config();
    cfg.use_transformer_encoder = false;
    CatModel model(cfg);
    // zero the position embedding and all biases on the path to the embedding
    for (Parameter* p : model.parameters()) {
        if (p->name == "pos" || p->name == "proj.b" || p->name == "head.b") {
            p->value.data.assign(p->value.data.size(), 0.0);
        }
    }
    const Tensor clip = random_clip(cfg, 5);
    Tensor doubled = clip;
    for (double& v : doubled.data) {
        v *= 2.0;
    }
    const Tensor e1 = model.embed(clip);
    const Tensor e2 = model.embed(doubled);
    for (std::size_t i = 0; i < e1.size(); ++i) {
        CHECK(e2[i] == doctest::Approx(2.0 * e1[i]).epsilon(1e-12));
    }
}

TEST_CASE("disabling the encoder strictly shrinks the model") {
    ModelConfig with = tiny_config();
    ModelConfig without = tiny_config();
    without.use_transformer_encoder = false;
    CatModel a(with);
    CatModel b(without);
    CHECK(b.scalar_parameter_count() < a.scalar_parameter_count());
    const ForwardOutput out = b.forward(random_clip(without, 6));
    CHECK(out.encoded.shape == std::vector<std::size_t>{without.frames, without.width});
    CHECK(out.embedding.shape == std::vector<std::size_t>{without.embedding_dim});
}

TEST_CASE("logit gradients match finite differences for every parameter group") {
    const ModelConfig cfg = tiny_config(); // K=4, D=8, layers=1, heads=2
    CatModel model(cfg);
    const Tensor clip = random_clip(cfg, 7);
    auto fn = [&](Tape& t) {
        const ForwardNodes n = model.build_forward(t, t.constant(clip));
        return t.cross_entropy_from_logits(n.logits, 1);
    };
    Rng probe(99);
    const auto rep = procver::testing::fd_check_bound(fn, model.parameters(), 3, probe, 60);
    CHECK(rep.points >= 60);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("input gradients flow through the whole stack") {
    const ModelConfig cfg = tiny_config();
    CatModel model(cfg);
    Tape t;
    const Tape::NodeId clip = t.input(random_clip(cfg, 8));
    const ForwardNodes n = model.build_forward_const(t, clip);
    t.backward(t.cross_entropy_from_logits(n.logits, 0));
    const Tensor g = t.grad(clip);
    double norm = 0.0;
    for (double v : g.data) {
        norm += v * v;
    }
    CHECK(norm > 0.0);
}

TEST_CASE("checkpoint round-trips the model bit-exactly") {
    const ModelConfig cfg = tiny_config();
    CatModel model(cfg);
    const Tensor clip = random_clip(cfg, 9);
    const ForwardOutput before = model.forward(clip);

    const fs::path dir = fs::temp_directory_path() / "procver_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();

    AdamState opt;
    opt.init(model.parameters());
    opt.step_count = 17;
    opt.m[0].data[0] = 0.125;
    Rng rng(44);
    rng.normal();
    save_checkpoint(make_checkpoint(model, &opt, &rng, "{\"epoch\": 3}"), path);

    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.trainer_state_json == "{\"epoch\": 3}");
    CHECK(ck.has_optimizer);
    CHECK(ck.adam_step_count == 17);
    CHECK(ck.adam_m[0].data[0] == 0.125);
    CHECK(Rng::deserialize(ck.rng_state) == rng);

    CatModel restored = model_from_checkpoint(ck);
    const ForwardOutput after = restored.forward(clip);
    CHECK(after.embedding.data == before.embedding.data);
    CHECK(after.logits.data == before.logits.data);
    CHECK(after.encoded.data == before.encoded.data);

    AdamState opt2;
    opt2.init(restored.parameters());
    restore_optimizer(opt2, ck);
    CHECK(opt2.step_count == 17);
    CHECK(opt2.m[0].data[0] == 0.125);
}

TEST_CASE("checkpoint corruption and truncation are detected") {
    const ModelConfig cfg = tiny_config();
    CatModel model(cfg);
    const fs::path dir = fs::temp_directory_path() / "procver_ckpt_corrupt";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ckpt").string();
    save_checkpoint(make_checkpoint(model, nullptr, nullptr), path);

    const std::string good = slurp(path);

    spit(path, good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    std::string flipped = good;
    flipped[good.size() / 2] = static_cast<char>(flipped[good.size() / 2] ^ 0x40);
    spit(path, flipped);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    spit(path, "NOPE" + good.substr(4));
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    CHECK_THROWS_AS(load_checkpoint((dir / "absent.ckpt").string()), IoError);

    // a config mismatch surfaces as a clear error, not a crash
    Checkpoint ck = load_checkpoint((spit(path, good), path));
    ck.params[0].first = "not_a_real_parameter";
    CHECK_THROWS_AS(model_from_checkpoint(ck), DataError);
}

TEST_CASE("model config json round-trip") {
    const ModelConfig cfg = tiny_config();
    const ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(model_config_to_json(back) == model_config_to_json(cfg));
    CHECK_THROWS_AS(model_config_from_json("{\"wat\": 1}"), ConfigError);
    CHECK_THROWS_AS(model_config_from_json("not json"), ConfigError);
}
