#include "procver/model.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "procver/errors.hpp"

namespace procver {

namespace {

using nlohmann::json;

} // namespace

void validate(const ModelConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (cfg.d_in == 0) {
        fail("d_in must be positive");
    }
    if (cfg.width == 0 || cfg.heads == 0 || cfg.width % cfg.heads != 0) {
        fail("width must be positive and divisible by heads");
    }
    if (cfg.frames == 0) {
        fail("frames must be at least 1");
    }
    if (cfg.num_classes < 2) {
        fail("num_classes must be at least 2");
    }
    if (cfg.embedding_dim < 2) {
        fail("embedding_dim must be at least 2");
    }
    if (cfg.use_transformer_encoder && cfg.layers == 0) {
        fail("layers must be at least 1 when the encoder is enabled");
    }
}

ModelConfig model_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ConfigError("model config: not a JSON object");
    }
    static const std::set<std::string> known = {
        "d_in", "width", "frames", "layers", "heads", "embedding_dim",
        "num_classes", "use_transformer_encoder", "seed",
    };
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key)) {
            throw ConfigError("model config: unknown key '" + key + "'");
        }
    }
    ModelConfig cfg;
    try {
        auto get_size = [&](const char* key, std::size_t& out) {
            if (doc.contains(key)) {
                out = doc[key].get<std::size_t>();
            }
        };
        get_size("d_in", cfg.d_in);
        get_size("width", cfg.width);
        get_size("frames", cfg.frames);
        get_size("layers", cfg.layers);
        get_size("heads", cfg.heads);
        get_size("embedding_dim", cfg.embedding_dim);
        get_size("num_classes", cfg.num_classes);
        if (doc.contains("use_transformer_encoder")) {
            cfg.use_transformer_encoder = doc["use_transformer_encoder"].get<bool>();
        }
        if (doc.contains("seed")) {
            cfg.seed = doc["seed"].get<std::uint64_t>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json doc;
    doc["d_in"] = cfg.d_in;
    doc["width"] = cfg.width;
    doc["frames"] = cfg.frames;
    doc["layers"] = cfg.layers;
    doc["heads"] = cfg.heads;
    doc["embedding_dim"] = cfg.embedding_dim;
    doc["num_classes"] = cfg.num_classes;
    doc["use_transformer_encoder"] = cfg.use_transformer_encoder;
    doc["seed"] = cfg.seed;
    return doc.dump(2) + "\n";
}

std::size_t CatModel::add_param(const std::string& name, Tensor value) {
    params_.emplace_back(name, std::move(value));
    return params_.size() - 1;
}

CatModel::CatModel(ModelConfig cfg) : cfg_(cfg) {
    validate(cfg_);
    Rng rng = Rng(cfg_.seed).derive("model-init");

    auto uniform_tensor = [&](std::vector<std::size_t> shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : t.data) {
            v = rng.uniform(-bound, bound);
        }
        return t;
    };
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out,
                      std::size_t& w_idx, std::size_t& b_idx) {
        w_idx = add_param(name + ".w", uniform_tensor({in, out}, in));
        b_idx = add_param(name + ".b", uniform_tensor({out}, in));
    };

    linear("proj", cfg_.d_in, cfg_.width, proj_w_, proj_b_);

    Tensor pos({cfg_.frames, cfg_.width});
    for (double& v : pos.data) {
        v = rng.normal(0.0, 0.02);
    }
    pos_ = add_param("pos", std::move(pos));

    if (cfg_.use_transformer_encoder) {
        const std::size_t d = cfg_.width;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string p = "enc" + std::to_string(l);
            LayerIdx L;
            L.ln1_g = add_param(p + ".ln1.g", Tensor::full({d}, 1.0));
            L.ln1_b = add_param(p + ".ln1.b", Tensor::zeros({d}));
            linear(p + ".attn.q", d, d, L.wq, L.bq);
            linear(p + ".attn.k", d, d, L.wk, L.bk);
            linear(p + ".attn.v", d, d, L.wv, L.bv);
            linear(p + ".attn.o", d, d, L.wo, L.bo);
            L.ln2_g = add_param(p + ".ln2.g", Tensor::full({d}, 1.0));
            L.ln2_b = add_param(p + ".ln2.b", Tensor::zeros({d}));
            linear(p + ".mlp.fc1", d, 4 * d, L.w1, L.b1);
            linear(p + ".mlp.fc2", 4 * d, d, L.w2, L.b2);
            layer_idx_.push_back(L);
        }
        final_g_ = add_param("final_ln.g", Tensor::full({cfg_.width}, 1.0));
        final_b_ = add_param("final_ln.b", Tensor::zeros({cfg_.width}));
    }

    linear("head", cfg_.frames * cfg_.width, cfg_.embedding_dim, head_w_, head_b_);
    linear("cls", cfg_.embedding_dim, cfg_.num_classes, cls_w_, cls_b_);
}

template <typename Bind>
ForwardNodes CatModel::assemble(Tape& t, Tape::NodeId clip, Bind bind) const {
    const Tensor& x = t.value(clip);
    if (x.rank() != 2 || x.shape[0] != cfg_.frames || x.shape[1] != cfg_.d_in) {
        throw ShapeError("forward: clip shape " + x.shape_str() + ", expected [" +
                         std::to_string(cfg_.frames) + "x" + std::to_string(cfg_.d_in) + "]");
    }
    ForwardNodes out;
    out.frame_features = t.add_row_broadcast(t.matmul(clip, bind(proj_w_)), bind(proj_b_));
    Tape::NodeId h = t.add(out.frame_features, bind(pos_));
    if (cfg_.use_transformer_encoder) {
        for (const LayerIdx& L : layer_idx_) {
            Tape::NodeId n1 = t.layer_norm_rows(h, bind(L.ln1_g), bind(L.ln1_b));
            Tape::NodeId att = t.multi_head_attention(
                n1, bind(L.wq), bind(L.bq), bind(L.wk), bind(L.bk), bind(L.wv), bind(L.bv),
                bind(L.wo), bind(L.bo), cfg_.heads);
            Tape::NodeId a = t.add(h, att);
            Tape::NodeId n2 = t.layer_norm_rows(a, bind(L.ln2_g), bind(L.ln2_b));
            Tape::NodeId m = t.gelu(t.add_row_broadcast(t.matmul(n2, bind(L.w1)), bind(L.b1)));
            Tape::NodeId m2 = t.add_row_broadcast(t.matmul(m, bind(L.w2)), bind(L.b2));
            h = t.add(a, m2);
        }
        h = t.layer_norm_rows(h, bind(final_g_), bind(final_b_));
    }
    out.encoded = h;
    // the time axis is flattened, never pooled: the head sees all K positions
    Tape::NodeId flat = t.reshape(h, {1, cfg_.frames * cfg_.width});
    Tape::NodeId emb_row = t.add_row_broadcast(t.matmul(flat, bind(head_w_)), bind(head_b_));
    out.embedding = t.reshape(emb_row, {cfg_.embedding_dim});
    Tape::NodeId logits_row = t.add_row_broadcast(t.matmul(emb_row, bind(cls_w_)), bind(cls_b_));
    out.logits = t.reshape(logits_row, {cfg_.num_classes});
    return out;
}

ForwardNodes CatModel::build_forward(Tape& t, Tape::NodeId clip) {
    return assemble(t, clip, [&](std::size_t i) { return t.param(params_[i]); });
}

ForwardNodes CatModel::build_forward_const(Tape& t, Tape::NodeId clip) const {
    return assemble(t, clip, [&](std::size_t i) { return t.constant(params_[i].value); });
}

ForwardOutput CatModel::forward(const Tensor& clip) const {
    Tape t;
    const ForwardNodes n = build_forward_const(t, t.constant(clip));
    ForwardOutput out;
    out.frame_features = t.value(n.frame_features);
    out.encoded = t.value(n.encoded);
    out.embedding = t.value(n.embedding);
    out.logits = t.value(n.logits);
    return out;
}

Tensor CatModel::embed(const Tensor& clip) const {
    Tape t;
    const ForwardNodes n = build_forward_const(t, t.constant(clip));
    return t.value(n.embedding);
}

std::vector<Parameter*> CatModel::parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (Parameter& p : params_) {
        out.push_back(&p);
    }
    return out;
}

std::size_t CatModel::scalar_parameter_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) {
        n += p.value.size();
    }
    return n;
}

void CatModel::zero_grads() {
    for (Parameter& p : params_) {
        p.zero_grad();
    }
}

} // namespace procver
