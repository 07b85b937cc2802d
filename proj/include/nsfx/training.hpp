#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "nsfx/data.hpp"
#include "nsfx/losses.hpp"
#include "nsfx/network.hpp"

namespace nsfx {

/// Piecewise-constant step decay: the rate is divided by `factor` once for
/// every drop iteration <= the current iteration.
struct LrSchedule {
    double base_lr = 0.05;
    std::vector<std::size_t> drops;
    double factor = 10.0;

    double at(std::size_t iteration) const;
};

struct TrainConfig {
    Shape input_shape;
    std::vector<LayerSpec> layers;
    std::size_t classes = 10;
    NoiseSpec noise;
    std::size_t batch_size = 64;
    std::size_t iterations = 2000;
    LrSchedule schedule{0.05, {1500}, 10.0};
    double weight_decay = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    /// Metrics (loss, errors, average prediction) are sampled every this many iterations.
    std::size_t record_interval = 100;
    /// Fill MetricsRecord::ms with wall-clock time. Off keeps outputs reproducible.
    bool record_timing = false;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct MetricsRecord {
    std::size_t iteration = 0;
    double loss = 0.0;       ///< plain softmax cross-entropy over the whole training set
    double train_err = 0.0;  ///< percent
    double test_err = 0.0;   ///< percent
    double p_bar = 0.0;      ///< mean true-class probability over the training set
    double lr = 0.0;
    double ms = 0.0;
};

struct Model {
    Network net;
    HeadParams head;
};

/// Network and head drawn from the init stream of `config.seed`.
Model init_model(const TrainConfig& config);

struct TrainResult {
    std::vector<MetricsRecord> metrics;
    Model model;
};

using MetricsCallback = std::function<void(const MetricsRecord&)>;

/// Shuffled mini-batch SGD with the configured noisy loss. Metrics are taken
/// at iteration 0, every record_interval iterations and at the end.
/// Throws DivergedError if the loss or a gradient stops being finite.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set,
                  const MetricsCallback& on_record = {});

struct SgdSettings {
    double lr = 0.0;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

/// v <- momentum v - lr (g + weight_decay p); p <- p + v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const SgdSettings& settings, std::size_t iteration);

/// Argmax class per sample under the plain softmax; ties go to the lowest index.
std::vector<std::size_t> predict(const Model& model, const Dataset& ds);

/// Percentage of misclassified samples.
double evaluate(const Model& model, const Dataset& ds);

double average_prediction(const Model& model, const Dataset& ds);

struct Snapshot {
    double loss = 0.0;
    double error = 0.0;
    double p_bar = 0.0;
};

/// Clean loss, error and average prediction in one pass.
Snapshot measure(const Model& model, const Dataset& ds);

}  // namespace nsfx
