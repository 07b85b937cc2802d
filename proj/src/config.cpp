#include "nsfx/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "nsfx/errors.hpp"
#include "nsfx/rng.hpp"

namespace nsfx {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = s.find(',', start);
        const std::string_view item = trim(s.substr(start, comma - start));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
    return out;
}

std::size_t to_positive(const std::string& key, const std::string& v) {
    const auto n = to_u64(key, v);
    if (n == 0) bad_value(key, v, "a positive integer");
    return static_cast<std::size_t>(n);
}

double to_double(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    double out = 0.0;
    in >> out;
    if (!in || !in.eof() || !std::isfinite(out)) bad_value(key, v, "a finite number");
    return out;
}

double to_non_negative(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d < 0.0) bad_value(key, v, "a non-negative number");
    return d;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, v, "true or false");
}

NoiseVariant to_variant(const std::string& key, const std::string& v) {
    try {
        return parse_variant(v);
    } catch (const InvalidInput&) {
        bad_value(key, v, "one of none, annealed, normal, negative, free, amplitude");
    }
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream) { return Rng::substream(seed, stream).next_u64(); }

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    auto path = [&](const std::string& v) {
        std::filesystem::path p(v);
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };

    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter, std::less<>> setters = {
        {"seed", [&](auto& k, auto& v) { c.seed = to_u64(k, v); }},
        {"dataset.kind",
         [&](auto& k, auto& v) {
             if (v == "mnist") c.dataset.kind = DatasetKind::mnist;
             else if (v == "synthetic") c.dataset.kind = DatasetKind::synthetic;
             else bad_value(k, v, "mnist or synthetic");
         }},
        {"dataset.train_images", [&](auto&, auto& v) { c.dataset.train_images = path(v); }},
        {"dataset.train_labels", [&](auto&, auto& v) { c.dataset.train_labels = path(v); }},
        {"dataset.test_images", [&](auto&, auto& v) { c.dataset.test_images = path(v); }},
        {"dataset.test_labels", [&](auto&, auto& v) { c.dataset.test_labels = path(v); }},
        {"dataset.per_class", [&](auto& k, auto& v) { c.dataset.per_class = to_u64(k, v); }},
        {"dataset.subset_seed", [&](auto& k, auto& v) { c.dataset.subset_seed = to_u64(k, v); }},
        {"dataset.mean_subtract", [&](auto& k, auto& v) { c.dataset.mean_subtract = to_bool(k, v); }},
        {"dataset.synthetic.n_per_class",
         [&](auto& k, auto& v) { c.dataset.synthetic_n_per_class = to_positive(k, v); }},
        {"dataset.synthetic.test_per_class",
         [&](auto& k, auto& v) { c.dataset.synthetic_test_per_class = to_positive(k, v); }},
        {"dataset.synthetic.dim", [&](auto& k, auto& v) { c.dataset.synthetic_dim = to_positive(k, v); }},
        {"dataset.synthetic.separation",
         [&](auto& k, auto& v) { c.dataset.synthetic_separation = to_non_negative(k, v); }},
        {"model.preset",
         [&](auto& k, auto& v) {
             if (v != "mlp" && v != "cnn" && v != "linear") bad_value(k, v, "mlp, cnn or linear");
             c.preset = v;
         }},
        {"model.layers",
         [&](auto& k, auto& v) {
             c.layers.clear();
             for (const auto& item : split_list(v)) {
                 try {
                     c.layers.push_back(LayerSpec::parse(item));
                 } catch (const InvalidInput& e) {
                     throw ConfigError("config key '" + k + "': " + e.what());
                 }
             }
             if (c.layers.empty()) bad_value(k, v, "a non-empty layer list");
         }},
        {"noise.variant", [&](auto& k, auto& v) { c.variant = to_variant(k, v); }},
        {"noise.alpha_squared", [&](auto& k, auto& v) { c.alpha_squared = to_non_negative(k, v); }},
        {"train.batch_size", [&](auto& k, auto& v) { c.batch_size = to_positive(k, v); }},
        {"train.iterations", [&](auto& k, auto& v) { c.iterations = static_cast<std::size_t>(to_u64(k, v)); }},
        {"train.base_lr",
         [&](auto& k, auto& v) {
             c.base_lr = to_double(k, v);
             if (!(c.base_lr > 0.0)) bad_value(k, v, "a positive number");
         }},
        {"train.lr_drops",
         [&](auto& k, auto& v) {
             std::vector<std::size_t> drops;
             for (const auto& item : split_list(v)) drops.push_back(static_cast<std::size_t>(to_u64(k, item)));
             c.lr_drops = drops;
         }},
        {"train.lr_factor",
         [&](auto& k, auto& v) {
             c.lr_factor = to_double(k, v);
             if (!(c.lr_factor > 0.0)) bad_value(k, v, "a positive number");
         }},
        {"train.weight_decay", [&](auto& k, auto& v) { c.weight_decay = to_non_negative(k, v); }},
        {"train.momentum",
         [&](auto& k, auto& v) {
             c.momentum = to_non_negative(k, v);
             if (c.momentum >= 1.0) bad_value(k, v, "a number in [0, 1)");
         }},
        {"train.record_interval", [&](auto& k, auto& v) { c.record_interval = to_positive(k, v); }},
        {"train.timing", [&](auto& k, auto& v) { c.timing = to_bool(k, v); }},
        {"sweep.variants",
         [&](auto& k, auto& v) {
             c.sweep.variants.clear();
             for (const auto& item : split_list(v)) c.sweep.variants.push_back(to_variant(k, item));
         }},
        {"sweep.alpha_squared",
         [&](auto& k, auto& v) {
             c.sweep.alpha_squared.clear();
             for (const auto& item : split_list(v)) c.sweep.alpha_squared.push_back(to_non_negative(k, item));
         }},
        {"sweep.seeds",
         [&](auto& k, auto& v) {
             c.sweep.seeds.clear();
             for (const auto& item : split_list(v)) c.sweep.seeds.push_back(to_u64(k, item));
         }},
        {"output.dir", [&](auto&, auto& v) { c.output_dir = v; }},
    };

    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
        if (c.entries.count(key)) throw ConfigError("duplicate config key '" + key + "'");
        if (value.empty()) throw ConfigError("config key '" + key + "' has no value");
        c.entries[key] = value;
        it->second(key, value);
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
    const DatasetConfig& d = config.dataset;
    const std::uint64_t data_seed = d.subset_seed.value_or(seed);
    PreparedData out;
    if (d.kind == DatasetKind::synthetic) {
        out.train = synthetic_two_gaussians(d.synthetic_n_per_class, d.synthetic_dim, d.synthetic_separation,
                                            derived_seed(data_seed, 1));
        out.test = synthetic_two_gaussians(d.synthetic_test_per_class, d.synthetic_dim, d.synthetic_separation,
                                           derived_seed(data_seed, 2));
    } else {
        for (const auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels}) {
            if (p->empty()) throw ConfigError("mnist datasets need dataset.train_images/train_labels/test_images/test_labels");
        }
        out.train = load_mnist_idx(d.train_images, d.train_labels);
        out.test = load_mnist_idx(d.test_images, d.test_labels);
        if (d.per_class > 0) out.train = subset_per_class(out.train, d.per_class, data_seed);
    }
    if (out.train.sample_shape() != out.test.sample_shape()) {
        throw ConfigError("train and test samples have different shapes");
    }
    const std::size_t classes = std::max(out.train.class_count, out.test.class_count);
    out.train.class_count = out.test.class_count = classes;
    if (d.mean_subtract) {
        auto ms = mean_subtract(out.train, {out.test});
        out.train = std::move(ms.train);
        out.test = std::move(ms.others[0]);
    }
    return out;
}

std::vector<LayerSpec> resolve_layers(const ExperimentConfig& config, const Shape& sample_shape) {
    if (!config.layers.empty()) return config.layers;
    const std::string preset =
        config.preset.empty() ? (config.dataset.kind == DatasetKind::synthetic ? "linear" : "mlp") : config.preset;
    if (preset == "linear") return shape_size(sample_shape) == sample_shape.back() && sample_shape.size() == 1
                                       ? std::vector<LayerSpec>{}
                                       : std::vector<LayerSpec>{LayerSpec::flatten()};
    if (preset == "cnn") return desk_cnn_layers();
    return desk_mlp_layers();
}

TrainConfig make_train_config(const ExperimentConfig& config, const PreparedData& data, NoiseSpec noise,
                              std::uint64_t seed) {
    TrainConfig t;
    t.input_shape = data.train.sample_shape();
    t.layers = resolve_layers(config, t.input_shape);
    // Flat MLPs take MNIST images as 784-vectors.
    if (!t.layers.empty() && t.layers.front().kind == LayerKind::dense) t.input_shape = {shape_size(t.input_shape)};
    t.classes = data.train.class_count;
    t.noise = noise;
    t.batch_size = config.batch_size;
    t.iterations = config.iterations;
    t.schedule.base_lr = config.base_lr;
    t.schedule.factor = config.lr_factor;
    t.schedule.drops = config.lr_drops.value_or(std::vector<std::size_t>{config.iterations * 3 / 4});
    t.weight_decay = config.weight_decay;
    t.momentum = config.momentum;
    t.seed = seed;
    t.record_interval = config.record_interval;
    t.record_timing = config.timing;
    t.validate();
    return t;
}

}  // namespace nsfx
