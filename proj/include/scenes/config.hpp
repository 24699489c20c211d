#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "scenes/sprites.hpp"
#include "scenes/trainer.hpp"

namespace scenes {

// Flat `key = value` text config; '#' starts a comment. Unknown keys are
// rejected so typos fail loudly. All keys are optional.
using FlatConfig = std::map<std::string, std::string>;

FlatConfig parse_flat_config_text(const std::string& text);
FlatConfig parse_flat_config(const std::filesystem::path& path);

// Named hyperparameter presets (a `preset = <name>` key applies one before
// the remaining keys):
//   unique-a  best cross-validated unique-color model, beta=9.54 gamma=0.52
//   unique-b  the swapped reading of the same table, beta=0.52 gamma=9.54
//   random    best random-color model, beta=1 gamma=3.26, shape-only
//             competition (lambda=0), L=5, 3 blocks
//   desk      small unique-color setup for quick CPU runs (32x32 images)
TrainConfig apply_train_preset(const std::string& name);

TrainConfig train_config_from_flat(const FlatConfig& flat);
DatasetConfig dataset_config_from_flat(const FlatConfig& flat);

}  // namespace scenes
