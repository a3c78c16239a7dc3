#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "procver/autodiff.hpp"
#include "procver/rng.hpp"

namespace procver {

struct ModelConfig {
    std::size_t d_in = 0;            // per-frame input feature dim
    std::size_t width = 64;          // encoder width D
    std::size_t frames = 16;         // sampled frames per clip K
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t embedding_dim = 128; // D' fed to the classifier
    std::size_t num_classes = 0;     // training procedures C
    bool use_transformer_encoder = true;
    std::uint64_t seed = 0;
};

void validate(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

struct ForwardOutput {
    Tensor frame_features; // (K x D), projected clip before position/encoder
    Tensor encoded;        // (K x D)
    Tensor embedding;      // (D')
    Tensor logits;         // (C)
};

// Node handles for building losses on top of a forward pass.
struct ForwardNodes {
    Tape::NodeId frame_features = -1;
    Tape::NodeId encoded = -1;
    Tape::NodeId embedding = -1;
    Tape::NodeId logits = -1;
};

// Procedure embedder: frame projection, learnable position embedding,
// pre-norm transformer encoder, flatten head (time axis is never pooled) and
// procedure classifier.
class CatModel {
public:
    explicit CatModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    // Training-mode graph: parameters become tape leaves, so backward()
    // accumulates into their grads.
    ForwardNodes build_forward(Tape& t, Tape::NodeId clip);
    // Evaluation-mode graph over frozen parameter values.
    ForwardNodes build_forward_const(Tape& t, Tape::NodeId clip) const;

    ForwardOutput forward(const Tensor& clip) const;
    Tensor embed(const Tensor& clip) const;

    std::vector<Parameter*> parameters(); // stable order, matches checkpoints
    const std::vector<Parameter>& parameters() const { return params_; }
    std::size_t scalar_parameter_count() const;
    void zero_grads();

private:
    template <typename Bind>
    ForwardNodes assemble(Tape& t, Tape::NodeId clip, Bind bind) const;

    std::size_t add_param(const std::string& name, Tensor value);

    ModelConfig cfg_;
    std::vector<Parameter> params_;

    struct LayerIdx {
        std::size_t ln1_g, ln1_b;
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t ln2_g, ln2_b;
        std::size_t w1, b1, w2, b2;
    };
    std::size_t proj_w_ = 0, proj_b_ = 0, pos_ = 0;
    std::vector<LayerIdx> layer_idx_;
    std::size_t final_g_ = 0, final_b_ = 0;
    std::size_t head_w_ = 0, head_b_ = 0;
    std::size_t cls_w_ = 0, cls_b_ = 0;
};

} // namespace procver
