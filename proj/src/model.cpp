#include "focusnet/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "focusnet/rng.hpp"

namespace focusnet {

FocusNetImpl::FocusNetImpl(const SNetConfig& cfg, std::vector<OrganSpec> organs, uint64_t seed)
    : cfg_(cfg), organs_(std::move(organs)), seed_(seed) {
    std::sort(organs_.begin(), organs_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (static_cast<int64_t>(organs_.size()) + 1 != cfg_.num_classes)
        throw std::invalid_argument("FocusNet: organ table does not match snet.num_classes");
    snet = register_module("snet", build_snet(cfg_, seed));
    const auto small = small_organs();
    if (!small.empty()) {
        sol = register_module("sol", build_solnet(static_cast<int64_t>(small.size()),
                                                  cfg_.decoder_channels(), mix_seed(seed, 10),
                                                  cfg_.se_reduction));
        for (const auto& o : small) {
            sos.emplace(o.id, register_module(
                "sos_" + std::to_string(o.id),
                build_sosnet(sos_in_channels(), cfg_.decoder_channels(),
                             mix_seed(seed, 100 + static_cast<uint64_t>(o.id)), cfg_.se_reduction)));
        }
    }
}

const OrganSpec& FocusNetImpl::organ(int id) const {
    for (const auto& o : organs_)
        if (o.id == id) return o;
    throw std::out_of_range("unknown organ id " + std::to_string(id));
}

std::vector<OrganSpec> FocusNetImpl::small_organs() const {
    std::vector<OrganSpec> out;
    for (const auto& o : organs_)
        if (o.is_small) out.push_back(o);
    return out;
}

std::vector<int> FocusNetImpl::small_ids() const {
    std::vector<int> out;
    for (const auto& o : organs_)
        if (o.is_small) out.push_back(o.id);
    return out;
}

int64_t FocusNetImpl::sos_in_channels() const {
    return cfg_.decoder_channels() + 1 + cfg_.encoder_hr_channels() + 1;
}

std::vector<torch::Tensor> FocusNetImpl::group_parameters(ParamGroup g) {
    switch (g) {
        case ParamGroup::SNet: return snet->parameters();
        case ParamGroup::Sol: return sol ? sol->parameters() : std::vector<torch::Tensor>{};
        case ParamGroup::Sos: {
            std::vector<torch::Tensor> out;
            for (auto& [id, head] : sos) {
                auto p = head->parameters();
                out.insert(out.end(), p.begin(), p.end());
            }
            return out;
        }
    }
    return {};
}

void FocusNetImpl::set_trainable(ParamGroup g, bool trainable) {
    for (auto& p : group_parameters(g)) p.set_requires_grad(trainable);
}

uint64_t parameter_hash(const std::vector<torch::Tensor>& tensors) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tensors) {
        auto c = t.detach().contiguous().cpu();
        const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
        const auto n = static_cast<size_t>(c.numel()) * c.element_size();
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

}  // namespace focusnet
