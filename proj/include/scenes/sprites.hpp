#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "scenes/layering.hpp"

namespace scenes {

enum class Shape { circle = 0, square = 1, triangle = 2 };

// Per-layer class ids used throughout: 0 = background, 1..3 = shapes.
constexpr int64_t kBackgroundClass = 0;
constexpr int64_t kNumClasses = 4;

inline int64_t class_of_shape(Shape s) { return static_cast<int64_t>(s) + 1; }
const char* shape_name(Shape s);
Shape shape_from_name(const std::string& name);

enum class ColorScheme { unique, random_colors };

struct SpriteSpec {
    Shape shape = Shape::circle;
    std::array<int, 3> color{255, 0, 0};  // 8-bit RGB
    double center_row = 0, center_col = 0;
    // Half-extent in pixels: radius (circle), half-side (square),
    // half-height (triangle; base width equals height).
    double size = 0;
};

struct SceneSpec {
    std::array<int, 3> background_color{0, 0, 0};
    std::vector<SpriteSpec> sprites;  // back-to-front
    int64_t height = 64, width = 64;
    std::vector<int> depth_order;  // sprites[t] = canonical draw slot depth_order[t]
};

struct DatasetConfig {
    int64_t n_train = 50000;
    int64_t n_val = 100;
    ColorScheme color_scheme = ColorScheme::unique;
    int sprites_per_scene = 3;
    int64_t height = 64, width = 64;
    uint64_t seed = 0;

    void validate() const;
};

struct GroundTruth {
    LayerStack layer_stack;
    std::vector<torch::Tensor> regions;  // visible regions, back-to-front
    std::vector<int64_t> classes;        // per layer, background first
    std::vector<int> depth_order;
};

struct SceneRecord {
    torch::Tensor image;  // [3,H,W] float32
    GroundTruth gt;
};

// Binary {0,1} rasterization at pixel centers (i+0.5, j+0.5); the sprite's
// bounding box must lie inside the [0,H]x[0,W] image rectangle.
torch::Tensor render_sprite_mask(const SpriteSpec& spec, int64_t height, int64_t width);

SceneSpec sample_scene_spec(std::mt19937_64& rng, const DatasetConfig& config);

std::pair<torch::Tensor, GroundTruth> render_scene(const SceneSpec& spec);

// Seed for scene `index` within a split; val scenes continue the global
// index after n_train so every scene owns an independent stream.
uint64_t scene_seed(const DatasetConfig& config, const std::string& split, int64_t index);

// On-disk layout:
//   manifest.json
//   {split}/scene_{i:06d}.png          8-bit RGB image
//   {split}/scene_{i:06d}_mask_{t}.png 8-bit full mask, t = 1..T back-to-front
//   {split}/scene_{i:06d}.json         sprite metadata + depth order
void generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

DatasetConfig read_manifest(const std::filesystem::path& dataset_dir);
int64_t split_count(const DatasetConfig& config, const std::string& split);

SceneRecord load_scene(const std::filesystem::path& dataset_dir, const DatasetConfig& config,
                       const std::string& split, int64_t index);
std::vector<SceneRecord> load_dataset(const std::filesystem::path& dataset_dir,
                                      const std::string& split);

// Images only, stacked as uint8 [N,3,H,W]; the memory-lean path for training.
torch::Tensor load_split_images(const std::filesystem::path& dataset_dir,
                                const std::string& split);

const char* color_scheme_name(ColorScheme s);
ColorScheme color_scheme_from_name(const std::string& name);

}  // namespace scenes
