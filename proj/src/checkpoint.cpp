#include "focusnet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "focusnet/phantom.hpp"

namespace focusnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMagic = "FOCUSNET-CHECKPOINT";

void append_tensor(std::string& payload, const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous().cpu();
    const auto* p = c.data_ptr<float>();
    const auto n = static_cast<size_t>(c.numel());
    if constexpr (std::endian::native == std::endian::little) {
        payload.append(reinterpret_cast<const char*>(p), n * sizeof(float));
    } else {
        for (size_t i = 0; i < n; ++i) {
            auto b = std::bit_cast<std::array<char, 4>>(p[i]);
            std::reverse(b.begin(), b.end());
            payload.append(b.data(), 4);
        }
    }
}

json tensor_entry(const std::string& name, const torch::Tensor& t, uint64_t offset) {
    return {{"name", name}, {"shape", t.sizes().vec()}, {"offset", offset}};
}

torch::Tensor read_tensor(const std::string& blob, uint64_t offset, const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (auto s : shape) n *= s;
    const uint64_t bytes = static_cast<uint64_t>(n) * sizeof(float);
    if (offset + bytes > blob.size()) throw CheckpointError("checkpoint payload is truncated");
    auto t = torch::empty(shape, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), blob.data() + offset, bytes);
    if constexpr (std::endian::native != std::endian::little) {
        auto* p = t.data_ptr<float>();
        for (int64_t i = 0; i < n; ++i) {
            auto b = std::bit_cast<std::array<char, 4>>(p[i]);
            std::reverse(b.begin(), b.end());
            p[i] = std::bit_cast<float>(b);
        }
    }
    return t;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::string payload;
    json model = json::array(), optim = json::array();
    for (const auto& [name, t] : ckpt.model) {
        model.push_back(tensor_entry(name, t, payload.size()));
        append_tensor(payload, t);
    }
    for (const auto& [name, t] : ckpt.optimizer) {
        optim.push_back(tensor_entry(name, t, payload.size()));
        append_tensor(payload, t);
    }
    json header = {{"version", kCheckpointVersion},
                   {"stage", ckpt.stage},
                   {"epochs_done", ckpt.epochs_done},
                   {"epochs_planned", ckpt.epochs_planned},
                   {"config", ckpt.config},
                   {"optimizer_steps", ckpt.optimizer_steps},
                   {"model_tensors", model},
                   {"optimizer_tensors", optim}};
    const std::string text = header.dump();
    const uint64_t len = text.size();

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
        out << kMagic << ' ' << kCheckpointVersion << '\n';
        std::array<char, 8> lenb{};
        for (int i = 0; i < 8; ++i) lenb[static_cast<size_t>(i)] = static_cast<char>((len >> (8 * i)) & 0xff);
        out.write(lenb.data(), 8);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("missing checkpoint " + path.string());
    std::string first;
    std::getline(in, first);
    std::istringstream fl(first);
    std::string magic;
    int version = 0;
    fl >> magic >> version;
    if (magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint file");
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    std::array<unsigned char, 8> lenb{};
    in.read(reinterpret_cast<char*>(lenb.data()), 8);
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(lenb[static_cast<size_t>(i)]) << (8 * i);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("checkpoint header is truncated: " + path.string());
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    try {
        const json h = json::parse(text);
        if (h.at("version").get<int>() != kCheckpointVersion)
            throw CheckpointError("checkpoint header version mismatch");
        ckpt.stage = h.at("stage").get<int>();
        ckpt.epochs_done = h.at("epochs_done").get<int>();
        ckpt.epochs_planned = h.at("epochs_planned").get<int>();
        ckpt.config = h.at("config");
        ckpt.optimizer_steps = h.at("optimizer_steps").get<std::map<std::string, int64_t>>();
        for (const auto& e : h.at("model_tensors"))
            ckpt.model[e.at("name").get<std::string>()] =
                read_tensor(blob, e.at("offset").get<uint64_t>(), e.at("shape").get<std::vector<int64_t>>());
        for (const auto& e : h.at("optimizer_tensors"))
            ckpt.optimizer[e.at("name").get<std::string>()] =
                read_tensor(blob, e.at("offset").get<uint64_t>(), e.at("shape").get<std::vector<int64_t>>());
    } catch (const json::exception& e) {
        throw CheckpointError("malformed checkpoint header in " + path.string() + ": " + e.what());
    }
    if (ckpt.stage < 1 || ckpt.stage > 4) throw CheckpointError("checkpoint has an invalid stage tag");
    return ckpt;
}

std::map<std::string, torch::Tensor> capture_parameters(FocusNetImpl& model) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& item : model.named_parameters()) out[item.key()] = item.value().detach().clone();
    return out;
}

void restore_parameters(FocusNetImpl& model, const std::map<std::string, torch::Tensor>& params) {
    torch::NoGradGuard guard;
    auto named = model.named_parameters();
    if (named.size() != params.size())
        throw CheckpointError("checkpoint holds " + std::to_string(params.size()) +
                              " parameter tensors, the model has " + std::to_string(named.size()));
    for (auto& item : named) {
        auto it = params.find(item.key());
        if (it == params.end()) throw CheckpointError("checkpoint lacks parameter " + item.key());
        if (it->second.sizes() != item.value().sizes())
            throw CheckpointError("shape mismatch for parameter " + item.key());
        item.value().copy_(it->second);
    }
}

FocusNet model_from_checkpoint(const Checkpoint& ckpt) {
    SNetConfig cfg;
    std::vector<OrganSpec> organs;
    uint64_t seed = 0;
    try {
        cfg = ckpt.config.at("snet").get<SNetConfig>();
        organs = ckpt.config.at("organs").get<std::vector<OrganSpec>>();
        seed = ckpt.config.at("seed").get<uint64_t>();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint config echo is incomplete: ") + e.what());
    }
    FocusNet model(cfg, organs, seed);
    restore_parameters(*model, ckpt.model);
    return model;
}

void capture_optimizer(torch::optim::Adam& opt, FocusNetImpl& model, Checkpoint& ckpt) {
    ckpt.optimizer.clear();
    ckpt.optimizer_steps.clear();
    auto& state = opt.state();
    for (const auto& item : model.named_parameters()) {
        auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        ckpt.optimizer[item.key() + "/exp_avg"] = s.exp_avg().detach().clone();
        ckpt.optimizer[item.key() + "/exp_avg_sq"] = s.exp_avg_sq().detach().clone();
        ckpt.optimizer_steps[item.key()] = s.step();
    }
}

void restore_optimizer(torch::optim::Adam& opt, FocusNetImpl& model, const Checkpoint& ckpt) {
    auto& state = opt.state();
    for (const auto& item : model.named_parameters()) {
        auto step = ckpt.optimizer_steps.find(item.key());
        if (step == ckpt.optimizer_steps.end()) continue;
        auto m = ckpt.optimizer.find(item.key() + "/exp_avg");
        auto v = ckpt.optimizer.find(item.key() + "/exp_avg_sq");
        if (m == ckpt.optimizer.end() || v == ckpt.optimizer.end())
            throw CheckpointError("optimizer state incomplete for " + item.key());
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(step->second);
        s->exp_avg(m->second.clone());
        s->exp_avg_sq(v->second.clone());
        state[item.value().unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace focusnet
