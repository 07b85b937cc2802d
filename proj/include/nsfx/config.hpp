#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nsfx/data.hpp"
#include "nsfx/losses.hpp"
#include "nsfx/network.hpp"
#include "nsfx/training.hpp"

namespace nsfx {

// Experiment config files are flat `key = value` lines with dotted keys.
// `#` starts a comment, blank lines are ignored, lists are comma separated,
// and every key may appear at most once. Unknown keys are rejected.
// Relative dataset paths resolve against the config file's directory.
// The full key list lives in README.md.

enum class DatasetKind { mnist, synthetic };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::mnist;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::size_t per_class = 0;  ///< 0 keeps the whole training file
    std::optional<std::uint64_t> subset_seed;  ///< defaults to the run seed
    bool mean_subtract = true;
    std::size_t synthetic_n_per_class = 200;
    std::size_t synthetic_test_per_class = 200;
    std::size_t synthetic_dim = 2;
    double synthetic_separation = 4.0;
};

struct SweepConfig {
    std::vector<NoiseVariant> variants;
    std::vector<double> alpha_squared;
    std::vector<std::uint64_t> seeds;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DatasetConfig dataset;
    std::string preset;            ///< mlp | cnn | linear; empty when layers are explicit
    std::vector<LayerSpec> layers;  ///< explicit stack from model.layers
    NoiseVariant variant = NoiseVariant::none;
    double alpha_squared = 0.0;
    std::size_t batch_size = 64;
    std::size_t iterations = 2000;
    double base_lr = 0.05;
    std::optional<std::vector<std::size_t>> lr_drops;  ///< default: one drop at 75% of iterations
    double lr_factor = 10.0;
    double weight_decay = 1e-3;
    double momentum = 0.9;
    std::size_t record_interval = 100;
    bool timing = false;
    SweepConfig sweep;
    std::filesystem::path output_dir = "out";
    /// Every key as written in the file, for echoing into summaries.
    std::map<std::string, std::string> entries;
};

/// Throws ConfigError naming the offending key or line.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
/// Throws IoError if the file cannot be read, ConfigError on bad content.
ExperimentConfig load_config(const std::filesystem::path& path);

struct PreparedData {
    Dataset train;
    Dataset test;
};

/// Loads or generates the datasets for a run seed, applies the per-class
/// subset and mean subtraction.
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

/// Layer stack for the config (explicit layers win over the preset).
std::vector<LayerSpec> resolve_layers(const ExperimentConfig& config, const Shape& sample_shape);

TrainConfig make_train_config(const ExperimentConfig& config, const PreparedData& data, NoiseSpec noise,
                              std::uint64_t seed);

}  // namespace nsfx
