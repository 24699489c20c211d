#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace scenes {

struct ExpertArchConfig {
    int64_t latent_dim = 2;
    int64_t n_blocks = 4;    // encoder/decoder depth
    int64_t n_features = 32; // channels per encoder/decoder block
    int64_t height = 64, width = 64;
    // Attention U-Net: depth down/up blocks; block channels are
    // base, 2*base, 2*base, ... (paper-scale base 32 gives 32-64-64-64).
    int64_t unet_depth = 4;
    int64_t unet_base_channels = 32;
    torch::Dtype dtype = torch::kFloat32;

    void validate() const;
    bool same_shape(const ExpertArchConfig& other) const;
};

struct LatentStats {
    torch::Tensor mu;      // [*, L]
    torch::Tensor logvar;  // [*, L], clamped to [-10, 10]
};

// U-Net over (image, scope) emitting a sigmoid attention map. Down/up block:
// 3x3 conv, instance norm, ReLU, factor-2 resample; skips concatenate at
// matching resolution. The 1x1 output head carries no norm.
struct AttentionUNetImpl : torch::nn::Module {
    explicit AttentionUNetImpl(const ExpertArchConfig& config);
    torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& scope);

    torch::nn::ModuleList down_convs, down_norms, up_convs, up_norms;
    torch::nn::Conv2d head{nullptr};
    int64_t depth;
};
TORCH_MODULE(AttentionUNet);

// Conv blocks (3x3 conv, ReLU, 2x2 max pool) over (image, region), then a
// two-layer head: FC to 4L with ReLU, FC to 2L split into mean/logvar.
struct EncoderImpl : torch::nn::Module {
    explicit EncoderImpl(const ExpertArchConfig& config);
    LatentStats forward(const torch::Tensor& image, const torch::Tensor& region);

    torch::nn::ModuleList convs;
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    int64_t latent_dim;
};
TORCH_MODULE(Encoder);

// Spatial broadcast decoder: the latent is tiled across the full H x W grid,
// two coordinate channels in [-1,1] are appended, and conv blocks plus a 1x1
// sigmoid head emit 4 channels (RGB appearance + mask probability).
struct BroadcastDecoderImpl : torch::nn::Module {
    explicit BroadcastDecoderImpl(const ExpertArchConfig& config);
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z,
                                                    double grid_shift = 0.0);

    torch::nn::ModuleList convs;
    torch::nn::Conv2d head{nullptr};
    torch::Tensor grid;  // [2,H,W] buffer
    int64_t latent_dim;
};
TORCH_MODULE(BroadcastDecoder);

// One expert: attention net, encoder, decoder, all class-specific.
struct ExpertImpl : torch::nn::Module {
    explicit ExpertImpl(const ExpertArchConfig& config);

    AttentionUNet attention{nullptr};
    Encoder encoder{nullptr};
    BroadcastDecoder decoder{nullptr};
    ExpertArchConfig config;
};
TORCH_MODULE(Expert);

// Spec-level single-scene ops ([3,H,W]/[1,H,W] in, shape-checked).
torch::Tensor attention_forward(Expert& expert, const torch::Tensor& image,
                                const torch::Tensor& scope);
LatentStats encoder_forward(Expert& expert, const torch::Tensor& image,
                            const torch::Tensor& region);
std::pair<torch::Tensor, torch::Tensor> decoder_forward(Expert& expert, const torch::Tensor& z);

// z = mu + exp(logvar/2) * eps, one standard-normal draw per call.
torch::Tensor reparameterize(const LatentStats& stats, torch::Generator& gen);

// Fan-in-scaled uniform weights, zero biases, unit norm gains; deterministic
// for a given seed.
Expert init_expert(const ExpertArchConfig& config, uint64_t seed);

torch::Generator make_generator(uint64_t seed);

}  // namespace scenes
