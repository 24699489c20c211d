#include "scenes/nets.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <stdexcept>
#include <string>

#include "scenes/layering.hpp"

namespace scenes {

namespace F = torch::nn::functional;

namespace {

constexpr double kLogvarClamp = 10.0;

int64_t unet_block_channels(const ExpertArchConfig& cfg, int64_t block_index) {
    return block_index == 0 ? cfg.unet_base_channels : 2 * cfg.unet_base_channels;
}

torch::Tensor resample(const torch::Tensor& x, int64_t h, int64_t w) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kNearest));
}

// Adds a batch dim to [C,H,W] inputs and strips it from the outputs.
torch::Tensor ensure_batched(const torch::Tensor& t, bool& was_unbatched) {
    was_unbatched = t.dim() == 3;
    return was_unbatched ? t.unsqueeze(0) : t;
}

}  // namespace

void ExpertArchConfig::validate() const {
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    if (n_blocks < 2 || n_blocks > 4) throw std::invalid_argument("n_blocks must be in [2,4]");
    if (n_features < 1) throw std::invalid_argument("n_features must be >= 1");
    if (unet_depth < 1) throw std::invalid_argument("unet_depth must be >= 1");
    if (unet_base_channels < 1) throw std::invalid_argument("unet_base_channels must be >= 1");
    const int64_t unet_div = int64_t{1} << unet_depth;
    const int64_t enc_div = int64_t{1} << n_blocks;
    if (height % unet_div != 0 || width % unet_div != 0) {
        throw std::invalid_argument("image size must be divisible by 2^unet_depth");
    }
    if (height % enc_div != 0 || width % enc_div != 0) {
        throw std::invalid_argument("image size must be divisible by 2^n_blocks");
    }
}

bool ExpertArchConfig::same_shape(const ExpertArchConfig& other) const {
    return latent_dim == other.latent_dim && n_blocks == other.n_blocks &&
           n_features == other.n_features && height == other.height && width == other.width &&
           unet_depth == other.unet_depth && unet_base_channels == other.unet_base_channels;
}

AttentionUNetImpl::AttentionUNetImpl(const ExpertArchConfig& config) : depth(config.unet_depth) {
    config.validate();
    int64_t in_ch = 4;  // RGB + scope
    for (int64_t i = 0; i < depth; ++i) {
        const int64_t out_ch = unet_block_channels(config, i);
        down_convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
        down_norms->push_back(torch::nn::InstanceNorm2d(
            torch::nn::InstanceNorm2dOptions(out_ch).affine(true)));
        in_ch = out_ch;
    }
    // Up path mirrors the down path; each block consumes the upsampled
    // features concatenated with the skip at that resolution.
    for (int64_t i = depth - 1; i >= 0; --i) {
        const int64_t skip_ch = unet_block_channels(config, i);
        const int64_t out_ch = skip_ch;
        up_convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch + skip_ch, out_ch, 3).padding(1)));
        up_norms->push_back(torch::nn::InstanceNorm2d(
            torch::nn::InstanceNorm2dOptions(out_ch).affine(true)));
        in_ch = out_ch;
    }
    head = torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, 1, 1));
    register_module("down_convs", down_convs);
    register_module("down_norms", down_norms);
    register_module("up_convs", up_convs);
    register_module("up_norms", up_norms);
    register_module("head", head);
}

torch::Tensor AttentionUNetImpl::forward(const torch::Tensor& image, const torch::Tensor& scope) {
    torch::Tensor x = torch::cat({image, scope}, /*dim=*/-3);
    std::vector<torch::Tensor> skips;
    for (int64_t i = 0; i < depth; ++i) {
        x = down_convs[i]->as<torch::nn::Conv2d>()->forward(x);
        x = down_norms[i]->as<torch::nn::InstanceNorm2d>()->forward(x);
        x = torch::relu(x);
        skips.push_back(x);
        x = resample(x, x.size(-2) / 2, x.size(-1) / 2);
    }
    for (int64_t i = 0; i < depth; ++i) {
        const torch::Tensor& skip = skips[depth - 1 - i];
        x = resample(x, skip.size(-2), skip.size(-1));
        x = torch::cat({x, skip}, -3);
        x = up_convs[i]->as<torch::nn::Conv2d>()->forward(x);
        x = up_norms[i]->as<torch::nn::InstanceNorm2d>()->forward(x);
        x = torch::relu(x);
    }
    return torch::sigmoid(head->forward(x));
}

EncoderImpl::EncoderImpl(const ExpertArchConfig& config) : latent_dim(config.latent_dim) {
    config.validate();
    int64_t in_ch = 4;  // RGB + region
    for (int64_t i = 0; i < config.n_blocks; ++i) {
        convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, config.n_features, 3).padding(1)));
        in_ch = config.n_features;
    }
    const int64_t spatial = (config.height >> config.n_blocks) * (config.width >> config.n_blocks);
    fc1 = torch::nn::Linear(config.n_features * spatial, 4 * latent_dim);
    fc2 = torch::nn::Linear(4 * latent_dim, 2 * latent_dim);
    register_module("convs", convs);
    register_module("fc1", fc1);
    register_module("fc2", fc2);
}

LatentStats EncoderImpl::forward(const torch::Tensor& image, const torch::Tensor& region) {
    torch::Tensor x = torch::cat({image, region}, -3);
    for (const auto& conv : *convs) {
        x = torch::relu(conv->as<torch::nn::Conv2d>()->forward(x));
        x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
    }
    x = x.flatten(1);
    x = torch::relu(fc1->forward(x));
    x = fc2->forward(x);
    auto halves = x.chunk(2, /*dim=*/-1);
    return {halves[0], halves[1].clamp(-kLogvarClamp, kLogvarClamp)};
}

BroadcastDecoderImpl::BroadcastDecoderImpl(const ExpertArchConfig& config)
    : latent_dim(config.latent_dim) {
    config.validate();
    int64_t in_ch = latent_dim + 2;
    for (int64_t i = 0; i < config.n_blocks; ++i) {
        convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, config.n_features, 3).padding(1)));
        in_ch = config.n_features;
    }
    head = torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, 4, 1));
    register_module("convs", convs);
    register_module("head", head);

    const auto ys = torch::linspace(-1.0, 1.0, config.height).view({config.height, 1}).expand({config.height, config.width});
    const auto xs = torch::linspace(-1.0, 1.0, config.width).view({1, config.width}).expand({config.height, config.width});
    grid = register_buffer("grid", torch::stack({ys, xs}, 0));
}

std::pair<torch::Tensor, torch::Tensor> BroadcastDecoderImpl::forward(const torch::Tensor& z,
                                                                      double grid_shift) {
    if (z.dim() != 2 || z.size(1) != latent_dim) {
        throw std::invalid_argument("decoder: expected z of shape [B," + std::to_string(latent_dim) + "]");
    }
    const int64_t batch = z.size(0);
    const int64_t h = grid.size(1), w = grid.size(2);
    torch::Tensor x = z.view({batch, latent_dim, 1, 1}).expand({batch, latent_dim, h, w});
    torch::Tensor coords = (grid + grid_shift).unsqueeze(0).expand({batch, 2, h, w});
    x = torch::cat({x, coords}, 1);
    for (const auto& conv : *convs) {
        x = torch::relu(conv->as<torch::nn::Conv2d>()->forward(x));
    }
    x = torch::sigmoid(head->forward(x));
    return {x.narrow(1, 0, 3), x.narrow(1, 3, 1)};
}

ExpertImpl::ExpertImpl(const ExpertArchConfig& cfg) : config(cfg) {
    attention = AttentionUNet(cfg);
    encoder = Encoder(cfg);
    decoder = BroadcastDecoder(cfg);
    register_module("attention", attention);
    register_module("encoder", encoder);
    register_module("decoder", decoder);
    this->to(cfg.dtype);
}

torch::Tensor attention_forward(Expert& expert, const torch::Tensor& image,
                                const torch::Tensor& scope) {
    check_image_rgb(image, "attention_forward: image");
    check_pixel_map(scope, "attention_forward: scope");
    if (image.size(-2) != expert->config.height || image.size(-1) != expert->config.width) {
        throw std::invalid_argument("attention_forward: image does not match configured size");
    }
    bool unbatched = false;
    auto img = ensure_batched(image, unbatched);
    bool su = false;
    auto sc = ensure_batched(scope, su);
    auto alpha = expert->attention->forward(img, sc);
    return unbatched ? alpha.squeeze(0) : alpha;
}

LatentStats encoder_forward(Expert& expert, const torch::Tensor& image,
                            const torch::Tensor& region) {
    check_image_rgb(image, "encoder_forward: image");
    check_pixel_map(region, "encoder_forward: region");
    if (image.size(-2) != expert->config.height || image.size(-1) != expert->config.width) {
        throw std::invalid_argument("encoder_forward: image does not match configured size");
    }
    bool unbatched = false;
    auto img = ensure_batched(image, unbatched);
    bool ru = false;
    auto reg = ensure_batched(region, ru);
    auto stats = expert->encoder->forward(img, reg);
    if (unbatched) {
        stats.mu = stats.mu.squeeze(0);
        stats.logvar = stats.logvar.squeeze(0);
    }
    return stats;
}

std::pair<torch::Tensor, torch::Tensor> decoder_forward(Expert& expert, const torch::Tensor& z) {
    const bool unbatched = z.dim() == 1;
    auto zz = unbatched ? z.unsqueeze(0) : z;
    auto [appearance, mask] = expert->decoder->forward(zz);
    if (unbatched) {
        appearance = appearance.squeeze(0);
        mask = mask.squeeze(0);
    }
    return {appearance, mask};
}

torch::Tensor reparameterize(const LatentStats& stats, torch::Generator& gen) {
    auto eps = torch::randn(stats.mu.sizes(), gen, stats.mu.options());
    return stats.mu + torch::exp(0.5 * stats.logvar) * eps;
}

torch::Generator make_generator(uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    return gen;
}

Expert init_expert(const ExpertArchConfig& config, uint64_t seed) {
    Expert expert(config);
    auto gen = make_generator(seed);
    torch::NoGradGuard no_grad;
    for (auto& item : expert->named_parameters()) {
        auto& p = item.value();
        const bool is_weight = item.key().ends_with("weight");
        if (is_weight && p.dim() >= 2) {
            const double fan_in = static_cast<double>(p.numel() / p.size(0));
            const double bound = 1.0 / std::sqrt(fan_in);
            p.uniform_(-bound, bound, gen);
        } else if (is_weight) {
            p.fill_(1.0);  // norm gains
        } else {
            p.zero_();
        }
    }
    return expert;
}

}  // namespace scenes
