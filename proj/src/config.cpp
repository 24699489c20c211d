#include "scenes/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace scenes {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

const std::set<std::string> kDatasetKeys = {
    "n_train", "n_val", "color_scheme", "sprites_per_scene", "image_size", "seed",
};
const std::set<std::string> kTrainKeys = {
    "preset",      "batch_size",  "lr",         "eval_every",   "patience",
    "lr_decay_factor", "max_decays", "beta",    "gamma",        "sigma_x",
    "lambda",      "n_experts",   "n_steps",    "latent_dim",   "n_blocks",
    "n_features",  "unet_depth",  "unet_base_channels",         "image_size",
    "seed",        "selection",   "update_mode", "max_iterations", "threads",
};
const std::set<std::string> kPathKeys = {"data_dir", "out_dir"};

int64_t to_i64(const std::string& key, const std::string& v) {
    try {
        return std::stoll(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": " + v);
    }
}

double to_f64(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": " + v);
    }
}

void apply_image_size(const std::string& v, int64_t& h, int64_t& w) {
    const auto x = v.find('x');
    if (x == std::string::npos) {
        h = w = to_i64("image_size", v);
    } else {
        h = to_i64("image_size", v.substr(0, x));
        w = to_i64("image_size", v.substr(x + 1));
    }
}

}  // namespace

FlatConfig parse_flat_config_text(const std::string& text) {
    FlatConfig out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");
        }
        out[key] = value;
    }
    return out;
}

FlatConfig parse_flat_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_flat_config_text(buf.str());
}

TrainConfig apply_train_preset(const std::string& name) {
    TrainConfig c;  // paper-scale defaults: 64x64, K=T=4
    if (name == "unique-a" || name == "unique-b") {
        c.arch.latent_dim = 2;
        c.arch.n_blocks = 4;
        c.arch.n_features = 32;
        c.weights.beta = name == "unique-a" ? 9.54 : 0.52;
        c.weights.gamma = name == "unique-a" ? 0.52 : 9.54;
        c.weights.lambda = 1.0;
    } else if (name == "random") {
        c.arch.latent_dim = 5;
        c.arch.n_blocks = 3;
        c.arch.n_features = 32;
        c.weights.beta = 1.0;
        c.weights.gamma = 3.26;
        c.weights.lambda = 0.0;  // shape-only competition
    } else if (name == "desk") {
        c.arch.height = c.arch.width = 32;
        c.arch.latent_dim = 2;
        c.arch.n_blocks = 2;
        c.arch.n_features = 16;
        c.arch.unet_base_channels = 16;
        c.weights.beta = 0.5;
        c.weights.gamma = 2.0;
        c.weights.lambda = 1.0;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return c;
}

TrainConfig train_config_from_flat(const FlatConfig& flat) {
    for (const auto& [key, value] : flat) {
        if (!kTrainKeys.count(key) && !kPathKeys.count(key) && !kDatasetKeys.count(key)) {
            throw std::invalid_argument("config: unknown key " + key);
        }
    }
    TrainConfig c;
    if (auto it = flat.find("preset"); it != flat.end()) c = apply_train_preset(it->second);
    for (const auto& [key, v] : flat) {
        if (key == "batch_size") c.batch_size = to_i64(key, v);
        else if (key == "lr") c.lr = to_f64(key, v);
        else if (key == "eval_every") c.eval_every = to_i64(key, v);
        else if (key == "patience") c.patience = to_i64(key, v);
        else if (key == "lr_decay_factor") c.lr_decay_factor = to_f64(key, v);
        else if (key == "max_decays") c.max_decays = to_i64(key, v);
        else if (key == "beta") c.weights.beta = to_f64(key, v);
        else if (key == "gamma") c.weights.gamma = to_f64(key, v);
        else if (key == "sigma_x") c.weights.sigma_x = to_f64(key, v);
        else if (key == "lambda") c.weights.lambda = to_f64(key, v);
        else if (key == "n_experts") c.n_experts = to_i64(key, v);
        else if (key == "n_steps") c.n_steps = to_i64(key, v);
        else if (key == "latent_dim") c.arch.latent_dim = to_i64(key, v);
        else if (key == "n_blocks") c.arch.n_blocks = to_i64(key, v);
        else if (key == "n_features") c.arch.n_features = to_i64(key, v);
        else if (key == "unet_depth") c.arch.unet_depth = to_i64(key, v);
        else if (key == "unet_base_channels") c.arch.unet_base_channels = to_i64(key, v);
        else if (key == "image_size") apply_image_size(v, c.arch.height, c.arch.width);
        else if (key == "seed") c.seed = static_cast<uint64_t>(to_i64(key, v));
        else if (key == "selection") {
            if (v == "stochastic") c.train_selection = SelectionMode::stochastic;
            else if (v == "greedy") c.train_selection = SelectionMode::greedy;
            else throw std::invalid_argument("config: selection must be stochastic|greedy");
        } else if (key == "update_mode") {
            if (v == "batch") c.update_mode = UpdateMode::batch;
            else if (v == "per_step") c.update_mode = UpdateMode::per_step;
            else throw std::invalid_argument("config: update_mode must be batch|per_step");
        } else if (key == "max_iterations") c.max_iterations = to_i64(key, v);
        else if (key == "threads") c.threads = static_cast<int>(to_i64(key, v));
    }
    return c;
}

DatasetConfig dataset_config_from_flat(const FlatConfig& flat) {
    for (const auto& [key, value] : flat) {
        if (!kDatasetKeys.count(key) && !kTrainKeys.count(key) && !kPathKeys.count(key)) {
            throw std::invalid_argument("config: unknown key " + key);
        }
    }
    DatasetConfig c;
    for (const auto& [key, v] : flat) {
        if (key == "n_train") c.n_train = to_i64(key, v);
        else if (key == "n_val") c.n_val = to_i64(key, v);
        else if (key == "color_scheme") c.color_scheme = color_scheme_from_name(v);
        else if (key == "sprites_per_scene") c.sprites_per_scene = static_cast<int>(to_i64(key, v));
        else if (key == "image_size") apply_image_size(v, c.height, c.width);
        else if (key == "seed") c.seed = static_cast<uint64_t>(to_i64(key, v));
    }
    return c;
}

}  // namespace scenes
