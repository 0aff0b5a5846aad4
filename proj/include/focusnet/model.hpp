#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "focusnet/snet.hpp"
#include "focusnet/sol.hpp"
#include "focusnet/sos.hpp"

namespace focusnet {

enum class ParamGroup { SNet, Sol, Sos };

/// S-Net backbone plus the localization head and one segmentation head per small
/// organ. Parameter names are prefixed "snet.", "sol." and "sos_<id>.".
class FocusNetImpl : public torch::nn::Module {
public:
    FocusNetImpl(const SNetConfig& cfg, std::vector<OrganSpec> organs, uint64_t seed);

    SNet snet{nullptr};
    SolNet sol{nullptr};             // null when no organ is small
    std::map<int, SosNet> sos;       // keyed by class id

    const SNetConfig& snet_config() const { return cfg_; }
    const std::vector<OrganSpec>& organs() const { return organs_; }
    const OrganSpec& organ(int id) const;
    std::vector<OrganSpec> small_organs() const;
    std::vector<int> small_ids() const;
    int64_t sos_in_channels() const;
    uint64_t seed() const { return seed_; }

    std::vector<torch::Tensor> group_parameters(ParamGroup g);
    void set_trainable(ParamGroup g, bool trainable);

private:
    SNetConfig cfg_;
    std::vector<OrganSpec> organs_;
    uint64_t seed_;
};
TORCH_MODULE(FocusNet);

/// FNV-1a over the raw bytes of the tensors, in order.
uint64_t parameter_hash(const std::vector<torch::Tensor>& tensors);

}  // namespace focusnet
