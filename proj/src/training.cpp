#include "nsfx/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "nsfx/errors.hpp"
#include "nsfx/numerics.hpp"

namespace nsfx {

namespace {

constexpr std::size_t kEvalChunk = 500;

// Features for the whole dataset, in chunks to bound memory.
template <typename F>
void for_each_chunk(const Model& model, const Dataset& ds, F&& f) {
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
        const std::size_t end = std::min(ds.size(), start + kEvalChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Dataset chunk = ds.select(idx);
        f(model.net.forward(chunk.images), chunk.labels);
    }
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j) {
        if (v[j] > v[best]) best = j;
    }
    return best;
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
}

}  // namespace

double LrSchedule::at(std::size_t iteration) const {
    double lr = base_lr;
    for (std::size_t d : drops) {
        if (iteration >= d) lr /= factor;
    }
    return lr;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (classes < 2) fail("classes must be at least 2");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(schedule.base_lr > 0.0)) fail("base_lr must be positive");
    if (!(schedule.factor > 0.0)) fail("lr factor must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(noise.alpha >= 0.0) || !std::isfinite(noise.alpha)) fail("alpha must be non-negative");
    if (record_interval == 0) fail("record_interval must be positive");
    if (input_shape.empty()) fail("input_shape is empty");
}

Model init_model(const TrainConfig& config) {
    Rng rng = Rng::substream(config.seed, streams::init);
    Model m;
    m.net = Network(config.input_shape, config.layers, rng);
    const LayerSpec head_spec = LayerSpec::dense(m.net.feature_dim(), config.classes);
    auto init = he_init(head_spec, rng);
    m.head = HeadParams(std::move(init[0]), std::move(init[1]));
    return m;
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const SgdSettings& s, std::size_t iteration) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw DivergedError(iteration, "non-finite gradient");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = s.momentum * velocity[i] - s.lr * (grads[i] + s.weight_decay * params[i]);
        params[i] += velocity[i];
    }
}

std::vector<std::size_t> predict(const Model& model, const Dataset& ds) {
    std::vector<std::size_t> out;
    out.reserve(ds.size());
    for_each_chunk(model, ds, [&](const Tensor& features, const std::vector<std::size_t>&) {
        for (std::size_t i = 0; i < features.dim(0); ++i) out.push_back(argmax(compute_logits(model.head, features.row(i))));
    });
    return out;
}

double evaluate(const Model& model, const Dataset& ds) {
    if (ds.size() == 0) throw InvalidInput("evaluate on an empty dataset");
    const auto pred = predict(model, ds);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) wrong += pred[i] != ds.labels[i];
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.size());
}

Snapshot measure(const Model& model, const Dataset& ds) {
    if (ds.size() == 0) throw InvalidInput("measure on an empty dataset");
    double loss = 0.0, mean_p = 0.0;
    std::size_t wrong = 0, seen = 0;
    for_each_chunk(model, ds, [&](const Tensor& features, const std::vector<std::size_t>& labels) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto f = compute_logits(model.head, features.row(i));
            const auto p = stable_softmax(f);
            const double m = *std::max_element(f.begin(), f.end());
            double s = 0.0;
            for (double v : f) s += std::exp(v - m);
            loss += m + std::log(s) - f[labels[i]];
            wrong += argmax(f) != labels[i];
            ++seen;
            mean_p += (p[labels[i]] - mean_p) / static_cast<double>(seen);
        }
    });
    const double n = static_cast<double>(ds.size());
    return {loss / n, 100.0 * static_cast<double>(wrong) / n, mean_p};
}

double average_prediction(const Model& model, const Dataset& ds) { return measure(model, ds).p_bar; }

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set,
                  const MetricsCallback& on_record) {
    config.validate();
    train_set.validate();
    test_set.validate();
    if (train_set.size() == 0 || test_set.size() == 0) throw InvalidInput("training and test sets must be non-empty");
    if (train_set.class_count > config.classes || test_set.class_count > config.classes) {
        throw ConfigError("dataset has more classes than the configured head");
    }

    TrainResult result{{}, init_model(config)};
    Model& model = result.model;
    Rng shuffle_rng = Rng::substream(config.seed, streams::shuffle);
    Rng noise_rng = Rng::substream(config.seed, streams::noise);
    const auto start = std::chrono::steady_clock::now();

    auto record = [&](std::size_t iteration) {
        const Snapshot s = measure(model, train_set);
        MetricsRecord r;
        r.iteration = iteration;
        r.loss = s.loss;
        r.train_err = s.error;
        r.p_bar = s.p_bar;
        r.test_err = evaluate(model, test_set);
        r.lr = config.schedule.at(iteration);
        if (config.record_timing) {
            r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        if (!std::isfinite(r.loss)) throw DivergedError(iteration, "non-finite training loss");
        result.metrics.push_back(r);
        if (on_record) on_record(r);
    };

    std::vector<Parameter*> params = model.net.parameters();
    std::vector<std::vector<double>> velocity;
    for (const Parameter* p : params) velocity.emplace_back(p->value.size(), 0.0);
    std::vector<double> vel_w(model.head.W.size(), 0.0), vel_b(model.head.b.size(), 0.0);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, shuffle_rng);
    std::size_t cursor = 0;
    std::vector<std::size_t> batch_idx(config.batch_size);

    record(0);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        for (std::size_t& idx : batch_idx) {
            if (cursor == order.size()) {
                shuffle(order, shuffle_rng);
                cursor = 0;
            }
            idx = order[cursor++];
        }
        const Dataset batch = train_set.select(batch_idx);
        const SgdSettings decayed{config.schedule.at(it), config.momentum, config.weight_decay};
        const SgdSettings exempt{decayed.lr, decayed.momentum, 0.0};

        try {
            ForwardCache cache;
            const Tensor features = model.net.forward(batch.images, &cache);
            const ForwardResult fwd = noisy_forward(model.head, features, batch.labels, config.noise, noise_rng);
            if (!std::isfinite(fwd.loss)) throw DivergedError(it, "non-finite loss");
            const HeadGradients g = noisy_backward(fwd, model.head, features);
            model.net.zero_grad();
            model.net.backward(cache, g.dX, false);

            for (std::size_t k = 0; k < params.size(); ++k) {
                sgd_step(params[k]->value.values(), params[k]->grad.values(), velocity[k],
                         params[k]->decays ? decayed : exempt, it);
            }
            sgd_step(model.head.W.values(), g.dW.values(), vel_w, decayed, it);
            sgd_step(model.head.b.values(), g.db.values(), vel_b, exempt, it);
        } catch (const NumericError& e) {
            throw DivergedError(it, e.what());
        } catch (const InvalidInput& e) {
            throw DivergedError(it, e.what());
        }

        const std::size_t done = it + 1;
        if (done % config.record_interval == 0 || done == config.iterations) record(done);
    }
    return result;
}

}  // namespace nsfx
