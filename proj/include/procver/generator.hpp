#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "procver/dataset.hpp"
#include "procver/rng.hpp"
#include "procver/tensor.hpp"

namespace procver {

// Synthetic procedural-video generator. All tasks share one step vocabulary —
// mirroring a fixed feature extractor, whose step appearance space does not
// change between tasks — and each task owns a base procedure; sibling
// procedures are step-level transformations of the base (deletions,
// insertions, adjacent order exchanges). Each step token owns a fixed
// unit-norm prototype vector and every frame emits prototype plus isotropic
// Gaussian noise, so videos of one procedure agree in structure but not in
// appearance, and held-out tasks reuse the step space seen in training.
// appearance_sigma > 0 additionally gives every video one constant offset
// vector of that norm — scene/actor appearance that dominates raw feature
// distances yet carries no information about the procedure.
struct GeneratorConfig {
    std::uint64_t seed = 0;
    std::size_t d_in = 32;
    std::size_t num_tasks = 1;
    std::size_t procedures_per_task = 2;
    std::size_t videos_per_procedure = 2;
    std::size_t step_vocab_size = 12;
    std::array<std::size_t, 2> duration_range{8, 24}; // frames per step
    double noise_sigma = 0.5;
    double appearance_sigma = 0.0; // norm of the per-video constant offset
    double delete_weight = 1.0 / 3.0;
    double insert_weight = 1.0 / 3.0;
    double swap_weight = 1.0 / 3.0;

    // shape of the procedure space
    std::array<std::size_t, 2> base_steps_range{5, 8};
    std::array<std::size_t, 2> variant_ops_range{1, 3}; // transformations per variant

    // whole tasks are held out so every split keeps within-task negatives
    std::size_t val_tasks = 0;
    std::size_t test_tasks = 0;

    std::size_t min_video_frames = 16; // short videos are padded up to this
};

void validate(const GeneratorConfig& cfg);

GeneratorConfig generator_config_from_json(const std::string& text);
std::string generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig load_generator_config(const std::string& path);

// The fixed unit-norm prototype of one step token, a pure function of
// (seed, token).
Tensor step_prototype(const GeneratorConfig& cfg, const StepToken& token);

// The shared step vocabulary every task draws its procedures from, a pure
// function of the seed.
std::vector<StepToken> dataset_vocabulary(const GeneratorConfig& cfg);

// Frame features for an explicit step sequence, with the first frame index of
// each step. Used by generation and by synthetic streaming scenarios.
struct SynthVideo {
    Tensor features; // (num_frames x d_in)
    std::vector<std::size_t> step_offsets;
};

SynthVideo synth_video(const GeneratorConfig& cfg, const std::vector<StepToken>& steps,
                       Rng& rng);

// Generates the dataset under out_dir: manifest.json, generator_config.json
// and features/*.pvft. Byte-identical for equal configs; per-video RNG
// streams are derived from (seed, video_id) so output does not depend on the
// order videos are materialized in.
Dataset generate_dataset(const GeneratorConfig& cfg, const std::string& out_dir);

} // namespace procver
