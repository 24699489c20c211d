#include "scenes/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace scenes {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'C', 'E', 'N', 'C', 'K', 'P', '1'};

}  // namespace

json arch_to_json(const ExpertArchConfig& arch) {
    return json{{"latent_dim", arch.latent_dim},
                {"n_blocks", arch.n_blocks},
                {"n_features", arch.n_features},
                {"height", arch.height},
                {"width", arch.width},
                {"unet_depth", arch.unet_depth},
                {"unet_base_channels", arch.unet_base_channels}};
}

ExpertArchConfig arch_from_json(const json& j) {
    ExpertArchConfig arch;
    arch.latent_dim = j.at("latent_dim").get<int64_t>();
    arch.n_blocks = j.at("n_blocks").get<int64_t>();
    arch.n_features = j.at("n_features").get<int64_t>();
    arch.height = j.at("height").get<int64_t>();
    arch.width = j.at("width").get<int64_t>();
    arch.unet_depth = j.at("unet_depth").get<int64_t>();
    arch.unet_base_channels = j.at("unet_base_channels").get<int64_t>();
    return arch;
}

void save_checkpoint(const std::vector<Expert>& experts, const ExpertArchConfig& arch,
                     const json& train_config, const std::filesystem::path& path) {
    json entries = json::array();
    std::vector<torch::Tensor> flat;
    int64_t offset = 0;
    for (size_t k = 0; k < experts.size(); ++k) {
        for (const auto& item : experts[k]->named_parameters()) {
            auto data = item.value().detach().to(torch::kFloat32).contiguous();
            entries.push_back({{"name", "expert" + std::to_string(k) + "/" + item.key()},
                               {"shape", item.value().sizes().vec()},
                               {"dtype", "float32"},
                               {"offset", offset}});
            offset += data.numel() * static_cast<int64_t>(sizeof(float));
            flat.push_back(data);
        }
    }
    json header{{"format", "scenes-checkpoint"},
                {"version", 1},
                {"n_experts", experts.size()},
                {"arch", arch_to_json(arch)},
                {"train_config", train_config},
                {"entries", entries}};
    const std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    f.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = header_str.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& t : flat) {
        f.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                t.numel() * static_cast<std::streamsize>(sizeof(float)));
    }
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, torch::Dtype dtype) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
    }
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!f || hlen == 0 || hlen > (64ull << 20)) {
        throw std::runtime_error("load_checkpoint: corrupt header length");
    }
    std::string header_str(hlen, '\0');
    f.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw std::runtime_error("load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception&) {
        throw std::runtime_error("load_checkpoint: corrupt header JSON");
    }
    if (header.value("format", "") != "scenes-checkpoint" || header.value("version", -1) != 1) {
        throw std::runtime_error("load_checkpoint: unsupported checkpoint format");
    }

    Checkpoint ckpt;
    ckpt.arch = arch_from_json(header.at("arch"));
    ckpt.arch.dtype = dtype;
    ckpt.train_config = header.value("train_config", json::object());
    const size_t n_experts = header.at("n_experts").get<size_t>();
    for (size_t k = 0; k < n_experts; ++k) ckpt.experts.emplace_back(ckpt.arch);

    const std::streampos data_start = f.tellg();
    torch::NoGradGuard no_grad;
    size_t entry_idx = 0;
    const auto& entries = header.at("entries");
    for (size_t k = 0; k < n_experts; ++k) {
        for (const auto& item : ckpt.experts[k]->named_parameters()) {
            if (entry_idx >= entries.size()) {
                throw std::runtime_error("load_checkpoint: missing parameter entries");
            }
            const auto& e = entries[entry_idx++];
            const std::string expect = "expert" + std::to_string(k) + "/" + item.key();
            if (e.at("name").get<std::string>() != expect ||
                e.at("shape").get<std::vector<int64_t>>() != item.value().sizes().vec()) {
                throw std::runtime_error(
                    "load_checkpoint: checkpoint does not match the configured architecture (" +
                    expect + ")");
            }
            auto buf = torch::empty(item.value().sizes(), torch::kFloat32);
            f.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<int64_t>()));
            f.read(reinterpret_cast<char*>(buf.data_ptr<float>()),
                   buf.numel() * static_cast<std::streamsize>(sizeof(float)));
            if (!f) throw std::runtime_error("load_checkpoint: truncated parameter data");
            item.value().copy_(buf.to(dtype));
        }
    }
    if (entry_idx != entries.size()) {
        throw std::runtime_error("load_checkpoint: extra parameter entries");
    }
    return ckpt;
}

}  // namespace scenes
