#include "nsfx/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "nsfx/errors.hpp"
#include "nsfx/gradcheck.hpp"

namespace nsfx {

namespace {

using json = nlohmann::json;

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::filesystem::path output_dir(const CommandOptions& options, const ExperimentConfig& config) {
    return options.out.value_or(config.output_dir);
}

void make_dirs(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<std::uint64_t> run_seeds(const CommandOptions& options, const ExperimentConfig& config) {
    if (options.seed) return {*options.seed};
    if (!config.sweep.seeds.empty()) return config.sweep.seeds;
    return {config.seed};
}

json summary_json(const std::string& command, const ExperimentConfig& config, const Cell& cell,
                  const TrainResult& result, std::optional<double> wall_ms) {
    const MetricsRecord& last = result.metrics.back();
    double best = last.test_err;
    for (const auto& m : result.metrics) best = std::min(best, m.test_err);
    json j;
    j["command"] = command;
    j["seed"] = cell.seed;
    j["variant"] = std::string(to_string(cell.noise.variant));
    j["alpha_squared"] = cell.alpha_squared;
    j["iterations"] = last.iteration;
    j["final_loss"] = last.loss;
    j["final_train_err"] = last.train_err;
    j["final_test_err"] = last.test_err;
    j["best_test_err"] = best;
    j["final_p_bar"] = last.p_bar;
    j["config"] = config.entries;
    j["wall_time_ms"] = wall_ms ? json(*wall_ms) : json(nullptr);
    return j;
}

void write_cell(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& config,
                const Cell& cell, const TrainResult& result, std::optional<double> wall_ms) {
    make_dirs(dir);
    write_file_atomic(dir / "metrics.csv", format_metrics_csv(result.metrics));
    write_file_atomic(dir / "summary.json", summary_json(command, config, cell, result, wall_ms).dump(2) + "\n");
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw FormatError("params: truncated at byte " + std::to_string(pos));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

}  // namespace

std::string Cell::name() const {
    return std::string(to_string(noise.variant)) + "_a2-" + fmt_g(alpha_squared) + "_seed-" + std::to_string(seed);
}

std::vector<std::pair<NoiseVariant, double>> sweep_settings(const std::vector<NoiseVariant>& variants,
                                                            const std::vector<double>& alpha_squared) {
    std::vector<std::pair<NoiseVariant, double>> out;
    for (NoiseVariant v : variants) {
        for (double a2 : alpha_squared) {
            std::pair<NoiseVariant, double> s{v, a2};
            if (v == NoiseVariant::none || a2 == 0.0) s = {NoiseVariant::none, 0.0};
            if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
        }
    }
    return out;
}

std::size_t thread_budget() {
    if (const char* env = std::getenv("NSFX_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<TrainResult> run_cells(const ExperimentConfig& config, const std::vector<Cell>& cells,
                                   std::size_t threads,
                                   const std::function<void(const Cell&, const TrainResult&)>& on_done) {
    if (threads == 0) threads = thread_budget();
    threads = std::min(threads, std::max<std::size_t>(cells.size(), 1));

    // Data depends only on the seed, so it is prepared once per seed.
    std::map<std::uint64_t, PreparedData> data;
    for (const Cell& c : cells) {
        if (!data.count(c.seed)) data.emplace(c.seed, prepare_data(config, c.seed));
    }

    std::vector<std::optional<TrainResult>> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            try {
                const Cell& c = cells[i];
                const PreparedData& d = data.at(c.seed);
                TrainResult r = train(make_train_config(config, d, c.noise, c.seed), d.train, d.test);
                std::lock_guard lock(mu);
                if (on_done) on_done(c, r);
                results[i] = std::move(r);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<TrainResult> out;
    out.reserve(cells.size());
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

std::string format_metrics_csv(const std::vector<MetricsRecord>& records) {
    std::string out = "iteration,loss,train_err,test_err,p_bar,lr,ms\n";
    for (const auto& m : records) {
        out += std::to_string(m.iteration) + ',' + fmt_g(m.loss) + ',' + fmt_g(m.train_err) + ',' +
               fmt_g(m.test_err) + ',' + fmt_g(m.p_bar) + ',' + fmt_g(m.lr) + ',' + fmt_g(m.ms) + '\n';
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::vector<NamedTensor> model_tensors(const Model& model) {
    std::vector<NamedTensor> out;
    for (const Parameter* p : model.net.parameters()) out.push_back({p->name, p->value});
    out.push_back({"head.W", model.head.W});
    out.push_back({"head.b", model.head.b});
    return out;
}

std::string encode_params(const std::vector<NamedTensor>& tensors) {
    std::string out = "NSFX";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
        for (std::size_t d : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.value.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

std::vector<NamedTensor> decode_params(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "NSFX") != 0) throw FormatError("params: bad magic");
    std::size_t pos = 4;
    if (const auto version = get_u32(bytes, pos); version != 1) {
        throw FormatError("params: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(bytes, pos);
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = get_u32(bytes, pos);
        if (pos + len > bytes.size()) throw FormatError("params: truncated name");
        std::string name = bytes.substr(pos, len);
        pos += len;
        Shape shape(get_u32(bytes, pos));
        for (auto& d : shape) d = get_u32(bytes, pos);
        std::vector<double> values(shape_size(shape));
        for (auto& v : values) v = std::bit_cast<float>(get_u32(bytes, pos));
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    if (pos != bytes.size()) throw FormatError("params: trailing bytes");
    return out;
}

std::vector<NamedTensor> read_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return decode_params(buf.str());
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DivergedError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const FormatError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

int cmd_train(const CommandOptions& options) {
    ExperimentConfig config = load_config(options.config);
    if (options.seed) config.seed = *options.seed;
    const std::filesystem::path dir = output_dir(options, config);
    make_dirs(dir);

    const Cell cell{NoiseSpec::from_alpha_squared(config.variant, config.alpha_squared), config.alpha_squared,
                    config.seed};
    const PreparedData data = prepare_data(config, cell.seed);
    const TrainConfig tc = make_train_config(config, data, cell.noise, cell.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult result = train(tc, data.train, data.test, [&](const MetricsRecord& m) {
        if (!options.quiet) {
            std::fprintf(stderr, "iter %zu loss %.5f train_err %.2f test_err %.2f p_bar %.4f lr %g\n", m.iteration,
                         m.loss, m.train_err, m.test_err, m.p_bar, m.lr);
        }
    });
    std::optional<double> wall;
    if (config.timing) wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    write_cell(dir, "train", config, cell, result, wall);
    write_file_atomic(dir / "params.bin", encode_params(model_tensors(result.model)));
    return kExitOk;
}

int cmd_noise_compare(const CommandOptions& options) {
    ExperimentConfig config = load_config(options.config);
    if (config.sweep.variants.empty()) throw ConfigError("noise-compare needs sweep.variants");
    const std::vector<double> a2 =
        config.sweep.alpha_squared.empty() ? std::vector<double>{config.alpha_squared} : config.sweep.alpha_squared;
    const auto settings = sweep_settings(config.sweep.variants, a2);
    const auto seeds = run_seeds(options, config);
    const std::filesystem::path dir = output_dir(options, config);
    make_dirs(dir / "cells");

    std::vector<Cell> cells;
    for (std::uint64_t s : seeds) {
        for (const auto& [v, x] : settings) cells.push_back({NoiseSpec::from_alpha_squared(v, x), x, s});
    }
    const auto results = run_cells(config, cells, 0, [&](const Cell& c, const TrainResult& r) {
        write_cell(dir / "cells" / c.name(), "noise-compare", config, c, r, std::nullopt);
        if (!options.quiet) {
            std::fprintf(stderr, "%s test_err %.2f p_bar %.4f\n", c.name().c_str(), r.metrics.back().test_err,
                         r.metrics.back().p_bar);
        }
    });

    std::string csv = "variant,alpha_squared,seed,final_test_err,final_p_bar\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& last = results[i].metrics.back();
        csv += std::string(to_string(cells[i].noise.variant)) + ',' + fmt_g(cells[i].alpha_squared) + ',' +
               std::to_string(cells[i].seed) + ',' + fmt_g(last.test_err) + ',' + fmt_g(last.p_bar) + '\n';
    }
    write_file_atomic(dir / "comparison.csv", csv);
    return kExitOk;
}

int cmd_saturation_study(const CommandOptions& options) {
    ExperimentConfig config = load_config(options.config);
    const std::vector<NoiseVariant> variants =
        config.sweep.variants.empty()
            ? std::vector<NoiseVariant>{NoiseVariant::annealed, NoiseVariant::negative, NoiseVariant::normal,
                                        NoiseVariant::none}
            : config.sweep.variants;
    const auto seeds = run_seeds(options, config);
    const std::filesystem::path dir = output_dir(options, config);
    make_dirs(dir / "cells");

    std::vector<Cell> cells;
    for (NoiseVariant v : variants) {
        for (std::uint64_t s : seeds) cells.push_back({NoiseSpec::from_alpha_squared(v, config.alpha_squared),
                                                       v == NoiseVariant::none ? 0.0 : config.alpha_squared, s});
    }
    const auto results = run_cells(config, cells, 0, [&](const Cell& c, const TrainResult& r) {
        write_cell(dir / "cells" / c.name(), "saturation-study", config, c, r, std::nullopt);
        if (!options.quiet) std::fprintf(stderr, "%s p_bar %.4f\n", c.name().c_str(), r.metrics.back().p_bar);
    });

    // Every run shares the schedule, so rows line up across seeds.
    std::string csv = "iteration,variant,p_bar,test_err\n";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const std::size_t first = v * seeds.size();
        for (std::size_t k = 0; k < results[first].metrics.size(); ++k) {
            double p = 0.0, e = 0.0;
            for (std::size_t s = 0; s < seeds.size(); ++s) {
                p += results[first + s].metrics[k].p_bar;
                e += results[first + s].metrics[k].test_err;
            }
            const double n = static_cast<double>(seeds.size());
            csv += std::to_string(results[first].metrics[k].iteration) + ',' + std::string(to_string(variants[v])) +
                   ',' + fmt_g(p / n) + ',' + fmt_g(e / n) + '\n';
        }
    }
    write_file_atomic(dir / "saturation.csv", csv);
    return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& options) {
    if (options.variants.empty() || options.alpha_squared.empty() || options.seeds == 0) {
        throw ConfigError("gradcheck needs at least one variant, alpha^2 value and seed");
    }
    if (!(options.tolerance > 0.0)) throw ConfigError("gradcheck tolerance must be positive");
    bool all_passed = true;
    std::printf("%-10s %10s %6s %14s %s\n", "variant", "alpha^2", "cases", "max_rel_err", "status");
    for (NoiseVariant v : options.variants) {
        for (double a2 : options.alpha_squared) {
            const NoiseSpec spec = NoiseSpec::from_alpha_squared(v, a2);
            double worst = 0.0;
            std::size_t failures = 0;
            for (std::size_t i = 1; i <= options.seeds; ++i) {
                const GradReport r = check_loss_gradients(random_case_shape(i), spec, i, options.tolerance);
                worst = std::max(worst, r.max_rel_err());
                if (!r.passed) ++failures;
            }
            all_passed = all_passed && failures == 0;
            std::printf("%-10s %10s %6zu %14.3e %s\n", std::string(to_string(v)).c_str(), fmt_g(a2).c_str(),
                        options.seeds, worst, failures == 0 ? "pass" : ("FAIL " + std::to_string(failures)).c_str());
        }
    }
    return all_passed ? kExitOk : kExitCheckFailed;
}

}  // namespace nsfx
