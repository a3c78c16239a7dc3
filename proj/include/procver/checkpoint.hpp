#pragma once

#include <string>
#include <utility>
#include <vector>

#include "procver/model.hpp"
#include "procver/optim.hpp"
#include "procver/rng.hpp"

namespace procver {

// Versioned binary snapshot of a model, optionally with optimizer moments and
// an RNG stream, closed by a CRC32 so corruption is detected on load.
struct Checkpoint {
    ModelConfig config;
    std::string trainer_state_json = "{}";
    std::vector<std::pair<std::string, Tensor>> params; // ordered as in the model

    bool has_optimizer = false;
    AdamConfig adam_config;
    std::size_t adam_step_count = 0;
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;

    std::string rng_state; // empty when absent
};

Checkpoint make_checkpoint(const CatModel& model, const AdamState* optimizer, const Rng* rng,
                           const std::string& trainer_state_json = "{}");

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the model and overwrites its parameters from the checkpoint;
// names and shapes must line up exactly.
CatModel model_from_checkpoint(const Checkpoint& ck);

// Restores moments into an optimizer created for the same parameter order.
void restore_optimizer(AdamState& opt, const Checkpoint& ck);

std::uint32_t crc32(const unsigned char* data, std::size_t len);

} // namespace procver
