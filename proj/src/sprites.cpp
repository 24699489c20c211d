#include "scenes/sprites.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "scenes/image_io.hpp"
#include "scenes/rng.hpp"

namespace scenes {

using nlohmann::json;

namespace {

constexpr int kDatasetFormatVersion = 1;

// Class-fixed half-extents relative to min(H, W).
double sprite_half_extent(Shape shape, int64_t height, int64_t width) {
    const double m = static_cast<double>(std::min(height, width));
    switch (shape) {
        case Shape::circle: return 0.22 * m;    // radius
        case Shape::square: return 0.18 * m;    // half-side
        case Shape::triangle: return 0.20 * m;  // half-height
    }
    throw std::logic_error("unknown shape");
}

std::array<int, 3> unique_color(Shape shape) {
    switch (shape) {
        case Shape::circle: return {255, 0, 0};
        case Shape::square: return {0, 255, 0};
        case Shape::triangle: return {0, 0, 255};
    }
    throw std::logic_error("unknown shape");
}

torch::Tensor constant_image(const std::array<int, 3>& color, int64_t h, int64_t w) {
    auto img = torch::empty({3, h, w}, torch::kFloat32);
    for (int c = 0; c < 3; ++c) img[c].fill_(static_cast<float>(color[c]) / 255.0f);
    return img;
}

json sprite_to_json(const SpriteSpec& s) {
    return json{{"shape", shape_name(s.shape)},
                {"color", s.color},
                {"center", {s.center_row, s.center_col}},
                {"size", s.size}};
}

SpriteSpec sprite_from_json(const json& j) {
    SpriteSpec s;
    s.shape = shape_from_name(j.at("shape").get<std::string>());
    s.color = j.at("color").get<std::array<int, 3>>();
    s.center_row = j.at("center").at(0).get<double>();
    s.center_col = j.at("center").at(1).get<double>();
    s.size = j.at("size").get<double>();
    return s;
}

std::filesystem::path scene_stem(const std::filesystem::path& dir, const std::string& split,
                                 int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%06lld", static_cast<long long>(index));
    return dir / split / buf;
}

}  // namespace

const char* shape_name(Shape s) {
    switch (s) {
        case Shape::circle: return "circle";
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
    }
    throw std::logic_error("unknown shape");
}

Shape shape_from_name(const std::string& name) {
    if (name == "circle") return Shape::circle;
    if (name == "square") return Shape::square;
    if (name == "triangle") return Shape::triangle;
    throw std::invalid_argument("unknown shape name: " + name);
}

const char* color_scheme_name(ColorScheme s) {
    return s == ColorScheme::unique ? "unique" : "random";
}

ColorScheme color_scheme_from_name(const std::string& name) {
    if (name == "unique") return ColorScheme::unique;
    if (name == "random") return ColorScheme::random_colors;
    throw std::invalid_argument("unknown color scheme: " + name);
}

void DatasetConfig::validate() const {
    if (n_train < 1 || n_val < 1) throw std::invalid_argument("dataset counts must be >= 1");
    if (height < 16 || width < 16) throw std::invalid_argument("image size must be >= 16");
    if (sprites_per_scene < 0) throw std::invalid_argument("sprites_per_scene must be >= 0");
}

torch::Tensor render_sprite_mask(const SpriteSpec& spec, int64_t height, int64_t width) {
    const double cr = spec.center_row, cc = spec.center_col, s = spec.size;
    if (s < 0) throw std::invalid_argument("render_sprite_mask: negative size");
    if (cr - s < 0 || cr + s > static_cast<double>(height) || cc - s < 0 ||
        cc + s > static_cast<double>(width)) {
        throw std::invalid_argument("render_sprite_mask: sprite out of bounds");
    }
    auto mask = torch::zeros({1, height, width}, torch::kFloat32);
    auto acc = mask.accessor<float, 3>();
    for (int64_t i = 0; i < height; ++i) {
        const double y = static_cast<double>(i) + 0.5;
        for (int64_t j = 0; j < width; ++j) {
            const double x = static_cast<double>(j) + 0.5;
            bool inside = false;
            switch (spec.shape) {
                case Shape::circle:
                    inside = (y - cr) * (y - cr) + (x - cc) * (x - cc) <= s * s;
                    break;
                case Shape::square:
                    inside = std::abs(y - cr) <= s && std::abs(x - cc) <= s;
                    break;
                case Shape::triangle: {
                    // Apex up at (cr - s, cc); base of half-width s at cr + s.
                    const double dy = y - (cr - s);
                    inside = dy >= 0 && dy <= 2 * s && std::abs(x - cc) <= 0.5 * dy;
                    break;
                }
            }
            if (inside) acc[0][i][j] = 1.0f;
        }
    }
    return mask;
}

SceneSpec sample_scene_spec(std::mt19937_64& rng, const DatasetConfig& config) {
    config.validate();
    SceneSpec scene;
    scene.height = config.height;
    scene.width = config.width;
    for (int c = 0; c < 3; ++c) {
        scene.background_color[c] = static_cast<int>(uniform_int(rng, 0, 127));
    }

    const int n = config.sprites_per_scene;
    std::vector<Shape> classes;
    if (n == 3) {
        classes = {Shape::circle, Shape::square, Shape::triangle};
    } else {
        for (int i = 0; i < n; ++i) {
            classes.push_back(static_cast<Shape>(uniform_int(rng, 0, 2)));
        }
    }

    std::vector<SpriteSpec> canonical;
    for (Shape shape : classes) {
        SpriteSpec sp;
        sp.shape = shape;
        if (config.color_scheme == ColorScheme::unique) {
            sp.color = unique_color(shape);
        } else {
            for (int c = 0; c < 3; ++c) sp.color[c] = static_cast<int>(uniform_int(rng, 128, 255));
        }
        sp.size = sprite_half_extent(shape, config.height, config.width);
        // Integer centers over the widest range keeping the bounding box inside.
        const int64_t lo_r = static_cast<int64_t>(std::ceil(sp.size));
        const int64_t hi_r = static_cast<int64_t>(std::floor(config.height - sp.size));
        const int64_t lo_c = lo_r;
        const int64_t hi_c = static_cast<int64_t>(std::floor(config.width - sp.size));
        sp.center_row = static_cast<double>(uniform_int(rng, lo_r, hi_r));
        sp.center_col = static_cast<double>(uniform_int(rng, lo_c, hi_c));
        canonical.push_back(sp);
    }

    scene.depth_order.resize(n);
    for (int i = 0; i < n; ++i) scene.depth_order[i] = i;
    fisher_yates(rng, scene.depth_order);
    for (int t = 0; t < n; ++t) scene.sprites.push_back(canonical[scene.depth_order[t]]);
    return scene;
}

std::pair<torch::Tensor, GroundTruth> render_scene(const SceneSpec& spec) {
    GroundTruth gt;
    gt.depth_order = spec.depth_order;

    gt.layer_stack.masks.push_back(torch::ones({1, spec.height, spec.width}, torch::kFloat32));
    gt.layer_stack.appearances.push_back(constant_image(spec.background_color, spec.height, spec.width));
    gt.layer_stack.classes.push_back(kBackgroundClass);
    for (const auto& sp : spec.sprites) {
        gt.layer_stack.masks.push_back(render_sprite_mask(sp, spec.height, spec.width));
        gt.layer_stack.appearances.push_back(constant_image(sp.color, spec.height, spec.width));
        gt.layer_stack.classes.push_back(class_of_shape(sp.shape));
    }
    gt.classes = gt.layer_stack.classes;

    auto decomp = regions_from_masks(gt.layer_stack.masks);
    gt.regions = decomp.regions;
    auto image = compose(decomp.regions, gt.layer_stack.appearances);
    return {image, std::move(gt)};
}

uint64_t scene_seed(const DatasetConfig& config, const std::string& split, int64_t index) {
    int64_t global = index;
    if (split == "val") {
        global += config.n_train;
    } else if (split != "train") {
        throw std::invalid_argument("unknown split: " + split);
    }
    return derive_seed(config.seed, static_cast<uint64_t>(global));
}

int64_t split_count(const DatasetConfig& config, const std::string& split) {
    if (split == "train") return config.n_train;
    if (split == "val") return config.n_val;
    throw std::invalid_argument("unknown split: " + split);
}

void generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);

    json manifest{{"format", "scenes-dataset"},
                  {"version", kDatasetFormatVersion},
                  {"config",
                   {{"n_train", config.n_train},
                    {"n_val", config.n_val},
                    {"color_scheme", color_scheme_name(config.color_scheme)},
                    {"sprites_per_scene", config.sprites_per_scene},
                    {"height", config.height},
                    {"width", config.width},
                    {"seed", config.seed}}},
                  {"counts", {{"train", config.n_train}, {"val", config.n_val}}}};
    {
        std::ofstream f(out_dir / "manifest.json");
        f << manifest.dump(2) << "\n";
    }

    for (const std::string split : {"train", "val"}) {
        std::filesystem::create_directories(out_dir / split);
        const int64_t count = split_count(config, split);
        for (int64_t i = 0; i < count; ++i) {
            std::mt19937_64 rng(scene_seed(config, split, i));
            SceneSpec spec = sample_scene_spec(rng, config);
            auto [image, gt] = render_scene(spec);

            const auto stem = scene_stem(out_dir, split, i);
            write_image_png(stem.string() + ".png", image);
            for (int64_t t = 0; t < gt.layer_stack.size(); ++t) {
                write_mask_png(stem.string() + "_mask_" + std::to_string(t + 1) + ".png",
                               gt.layer_stack.masks[t]);
            }
            json meta{{"image_size", {spec.height, spec.width}},
                      {"background_color", spec.background_color},
                      {"classes", gt.classes},
                      {"depth_order", spec.depth_order},
                      {"sprites", json::array()}};
            for (const auto& sp : spec.sprites) meta["sprites"].push_back(sprite_to_json(sp));
            std::ofstream f(stem.string() + ".json");
            f << meta.dump(2) << "\n";
        }
    }
}

DatasetConfig read_manifest(const std::filesystem::path& dataset_dir) {
    std::ifstream f(dataset_dir / "manifest.json");
    if (!f) throw std::runtime_error("missing manifest.json in " + dataset_dir.string());
    json manifest = json::parse(f);
    if (manifest.value("format", "") != "scenes-dataset" ||
        manifest.value("version", -1) != kDatasetFormatVersion) {
        throw std::runtime_error("unsupported dataset manifest in " + dataset_dir.string());
    }
    const json& c = manifest.at("config");
    DatasetConfig config;
    config.n_train = c.at("n_train").get<int64_t>();
    config.n_val = c.at("n_val").get<int64_t>();
    config.color_scheme = color_scheme_from_name(c.at("color_scheme").get<std::string>());
    config.sprites_per_scene = c.at("sprites_per_scene").get<int>();
    config.height = c.at("height").get<int64_t>();
    config.width = c.at("width").get<int64_t>();
    config.seed = c.at("seed").get<uint64_t>();
    if (manifest.at("counts").at("train").get<int64_t>() != config.n_train ||
        manifest.at("counts").at("val").get<int64_t>() != config.n_val) {
        throw std::runtime_error("manifest counts do not match config");
    }
    return config;
}

SceneRecord load_scene(const std::filesystem::path& dataset_dir, const DatasetConfig& config,
                       const std::string& split, int64_t index) {
    if (index < 0 || index >= split_count(config, split)) {
        throw std::out_of_range("scene index out of range");
    }
    const auto stem = scene_stem(dataset_dir, split, index);

    SceneRecord rec;
    rec.image = read_image_png(stem.string() + ".png");

    std::ifstream f(stem.string() + ".json");
    if (!f) throw std::runtime_error("missing scene metadata: " + stem.string() + ".json");
    json meta = json::parse(f);

    const int64_t h = meta.at("image_size").at(0).get<int64_t>();
    const int64_t w = meta.at("image_size").at(1).get<int64_t>();
    if (h != config.height || w != config.width) {
        throw std::runtime_error("scene image size does not match manifest");
    }

    GroundTruth& gt = rec.gt;
    gt.classes = meta.at("classes").get<std::vector<int64_t>>();
    gt.depth_order = meta.at("depth_order").get<std::vector<int>>();
    const auto bg = meta.at("background_color").get<std::array<int, 3>>();

    gt.layer_stack.classes = gt.classes;
    gt.layer_stack.appearances.push_back(constant_image(bg, h, w));
    for (const auto& js : meta.at("sprites")) {
        const SpriteSpec sp = sprite_from_json(js);
        gt.layer_stack.appearances.push_back(constant_image(sp.color, h, w));
    }
    const int64_t layers = static_cast<int64_t>(gt.classes.size());
    for (int64_t t = 0; t < layers; ++t) {
        gt.layer_stack.masks.push_back(
            read_mask_png(stem.string() + "_mask_" + std::to_string(t + 1) + ".png"));
    }
    gt.regions = regions_from_masks(gt.layer_stack.masks).regions;
    return rec;
}

std::vector<SceneRecord> load_dataset(const std::filesystem::path& dataset_dir,
                                      const std::string& split) {
    const DatasetConfig config = read_manifest(dataset_dir);
    std::vector<SceneRecord> out;
    const int64_t count = split_count(config, split);
    out.reserve(count);
    for (int64_t i = 0; i < count; ++i) out.push_back(load_scene(dataset_dir, config, split, i));
    return out;
}

torch::Tensor load_split_images(const std::filesystem::path& dataset_dir,
                                const std::string& split) {
    const DatasetConfig config = read_manifest(dataset_dir);
    const int64_t count = split_count(config, split);
    auto images = torch::empty({count, 3, config.height, config.width}, torch::kUInt8);
    for (int64_t i = 0; i < count; ++i) {
        const auto stem = scene_stem(dataset_dir, split, i);
        auto img = read_image_png(stem.string() + ".png");
        images[i] = (img * 255.0).round().to(torch::kUInt8);
    }
    return images;
}

}  // namespace scenes
