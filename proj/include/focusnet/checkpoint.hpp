#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "focusnet/model.hpp"

namespace focusnet {

inline constexpr int kCheckpointVersion = 1;

/// Raised when a checkpoint cannot be read or does not fit the current setup.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Container layout:
///   line 1    "FOCUSNET-CHECKPOINT <version>\n"
///   8 bytes   little-endian length of the JSON header
///   header    JSON: stage, epochs, config echo, optimizer steps, tensor table
///   payload   float32 little-endian tensors in header order
struct Checkpoint {
    int stage = 0;               // 1..4
    int epochs_done = 0;
    int epochs_planned = 0;
    nlohmann::json config;       // snet, organs, seed, loss, train echo
    std::map<std::string, torch::Tensor> model;       // parameter name -> values
    std::map<std::string, torch::Tensor> optimizer;   // "<param>/exp_avg", "<param>/exp_avg_sq"
    std::map<std::string, int64_t> optimizer_steps;   // param name -> Adam step

    bool complete() const { return epochs_done >= epochs_planned; }
    std::string tag() const { return "stage" + std::to_string(stage); }
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every named parameter of the model.
std::map<std::string, torch::Tensor> capture_parameters(FocusNetImpl& model);

/// Loads parameters by name; throws CheckpointError on a missing name or shape mismatch.
void restore_parameters(FocusNetImpl& model, const std::map<std::string, torch::Tensor>& params);

/// Rebuilds the model recorded in the checkpoint's config echo and loads its parameters.
FocusNet model_from_checkpoint(const Checkpoint& ckpt);

void capture_optimizer(torch::optim::Adam& opt, FocusNetImpl& model, Checkpoint& ckpt);
void restore_optimizer(torch::optim::Adam& opt, FocusNetImpl& model, const Checkpoint& ckpt);

}  // namespace focusnet
