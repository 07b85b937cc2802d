#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "nsfx/config.hpp"
#include "nsfx/training.hpp"

namespace nsfx {

struct CommandOptions {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    bool quiet = false;
};

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDiverged = 2;
inline constexpr int kExitIo = 3;
/// gradcheck found an element above tolerance.
inline constexpr int kExitCheckFailed = 4;

int cmd_train(const CommandOptions& options);
int cmd_noise_compare(const CommandOptions& options);
int cmd_saturation_study(const CommandOptions& options);

struct GradcheckOptions {
    std::vector<NoiseVariant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
    std::size_t seeds = 100;  ///< random cases per (variant, alpha^2) cell
    std::vector<double> alpha_squared{0.0, 0.05, 0.1, 0.5, 1.0};
    double tolerance = 1e-5;
    bool quiet = false;
};

int cmd_gradcheck(const GradcheckOptions& options);

/// Runs `body` and maps library errors onto exit codes, printing the message
/// on standard error.
int run_guarded(const std::function<int()>& body);

// Building blocks shared by the commands and the acceptance suite.

/// One cell of a sweep: a noise setting under one seed.
struct Cell {
    NoiseSpec noise;
    double alpha_squared = 0.0;
    std::uint64_t seed = 0;

    std::string name() const;  ///< <variant>_a2-<x>_seed-<s>
};

/// Cartesian product variants x alpha^2 with every zero-noise setting
/// collapsed onto a single `none` entry, in first-seen order.
std::vector<std::pair<NoiseVariant, double>> sweep_settings(const std::vector<NoiseVariant>& variants,
                                                            const std::vector<double>& alpha_squared);

/// Trains every cell; the result vector is in cell order whatever the
/// parallelism. `threads` 0 means NSFX_THREADS or the hardware count.
std::vector<TrainResult> run_cells(const ExperimentConfig& config, const std::vector<Cell>& cells,
                                   std::size_t threads = 0,
                                   const std::function<void(const Cell&, const TrainResult&)>& on_done = {});

/// NSFX_THREADS if set to a positive integer, otherwise the hardware count.
std::size_t thread_budget();

std::string format_metrics_csv(const std::vector<MetricsRecord>& records);

/// Writes to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Network parameters in layer order followed by head.W and head.b.
std::vector<NamedTensor> model_tensors(const Model& model);

/// "NSFX", u32 version 1, u32 count, then per tensor: u32 name length, name
/// bytes, u32 rank, rank x u32 dims, float32 values. All little-endian.
std::string encode_params(const std::vector<NamedTensor>& tensors);
/// Throws FormatError on malformed input.
std::vector<NamedTensor> decode_params(const std::string& bytes);
std::vector<NamedTensor> read_params(const std::filesystem::path& path);

}  // namespace nsfx
