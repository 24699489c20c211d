#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace scenes {

// 8-bit PNG round trips. Quantization byte = round(value * 255) is part of
// the on-disk format; readers map back with byte / 255.
void write_image_png(const std::filesystem::path& path, const torch::Tensor& image_rgb);
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask);
torch::Tensor read_image_png(const std::filesystem::path& path);  // [3,H,W] float32
torch::Tensor read_mask_png(const std::filesystem::path& path);   // [1,H,W] float32

// Tiles [3,H,W] images into a grid with a light separator, row-major.
torch::Tensor tile_grid(const std::vector<torch::Tensor>& images, int64_t columns,
                        int64_t pad = 2, double pad_value = 1.0);

}  // namespace scenes
