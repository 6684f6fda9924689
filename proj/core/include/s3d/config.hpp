#pragma once

#include <filesystem>
#include <string>

#include "s3d/datagen.hpp"
#include "s3d/model.hpp"
#include "s3d/trainer.hpp"

namespace s3d {

// One JSON file configures the whole run: a "data" section (the synthetic
// domain spec and split sizes), a "model" section (architecture), and a
// "train" section (optimization and adaptation hyperparameters). Every field
// is optional and falls back to the documented default.
struct RunConfig {
    DomainSpec data;
    int val_per_class = 20;
    ArchConfig model;
    TrainConfig train;
};

RunConfig default_config();

// Parses and validates; errors carry the offending field path, e.g.
// "train.batch_size: must be positive and even".
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical JSON rendering of a config (sorted keys), used for digests.
std::string canonical_config_json(const RunConfig& cfg);

// FNV-1a hash of the canonical rendering; stable under field reordering in
// the source file.
std::string config_digest(const RunConfig& cfg);

}  // namespace s3d
