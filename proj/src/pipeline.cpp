#include "graphdps/pipeline.hpp"

#include "graphdps/parallel.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace graphdps {

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view text)
{
    T value{};
    const std::string t = trim(text);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw Error("config", "invalid number '" + t + "'");
    }
    return value;
}

void parse_value(std::string_view v, int& out) { out = parse_number<int>(v); }
void parse_value(std::string_view v, double& out) { out = parse_number<double>(v); }
void parse_value(std::string_view v, std::uint64_t& out) { out = parse_number<std::uint64_t>(v); }
void parse_value(std::string_view v, std::string& out) { out = trim(v); }
void parse_value(std::string_view v, bool& out)
{
    const std::string t = trim(v);
    if (t == "true" || t == "1") {
        out = true;
    } else if (t == "false" || t == "0") {
        out = false;
    } else {
        throw Error("config", "invalid boolean '" + t + "'");
    }
}
void parse_value(std::string_view v, ProtocolKind& out) { out = parse_protocol(trim(v)); }
void parse_value(std::string_view v, NoiseKind& out) { out = parse_noise_kind(trim(v)); }
void parse_value(std::string_view v, ShapeFamily& out) { out = parse_shape_family(trim(v)); }
void parse_value(std::string_view v, ScheduleKind& out) { out = parse_schedule_kind(trim(v)); }
void parse_value(std::string_view v, SamplerKind& out) { out = parse_sampler(trim(v)); }
void parse_value(std::string_view v, RegularizerKind& out) { out = parse_regularizer(trim(v)); }
void parse_value(std::string_view v, GradMode& out) { out = parse_grad_mode(trim(v)); }

template <class T>
void parse_value(std::string_view v, std::vector<T>& out)
{
    out.clear();
    std::string_view rest = v;
    while (true) {
        const auto comma = rest.find(',');
        T item{};
        parse_value(rest.substr(0, comma), item);
        out.push_back(item);
        if (comma == std::string_view::npos) {
            break;
        }
        rest.remove_prefix(comma + 1);
    }
}

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(double v) { return format_double(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(const std::string& v) { return v; }
std::string format_value(bool v) { return v ? "true" : "false"; }
template <class E>
    requires std::is_enum_v<E>
std::string format_value(E v)
{
    return std::string(to_string(v));
}
template <class T>
std::string format_value(const std::vector<T>& v)
{
    std::string out;
    for (const auto& item : v) {
        out += (out.empty() ? "" : ",") + format_value(item);
    }
    return out;
}

struct Entry {
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Entry entry(Access access)
{
    return {[access](RunConfig& c, std::string_view v) { parse_value(v, access(c)); },
            [access](const RunConfig& c) { return format_value(access(c)); }};
}

#define GRAPHDPS_KEY(name, expr) {name, entry([](auto& c) -> auto& { return c.expr; })}

const std::map<std::string, Entry, std::less<>>& registry()
{
    static const std::map<std::string, Entry, std::less<>> table = {
        GRAPHDPS_KEY("seed", seed),
        GRAPHDPS_KEY("coarse_vertices", coarse_vertices),
        GRAPHDPS_KEY("fine_vertices", fine_vertices),
        GRAPHDPS_KEY("electrodes", electrodes),
        GRAPHDPS_KEY("electrode_coverage", electrode_coverage),
        GRAPHDPS_KEY("contact_impedance", contact_impedance),
        GRAPHDPS_KEY("protocol", protocol),
        GRAPHDPS_KEY("current_amplitude", current_amplitude),
        GRAPHDPS_KEY("family", dataset.family),
        GRAPHDPS_KEY("train_count", dataset.count),
        GRAPHDPS_KEY("test_count", test_count),
        GRAPHDPS_KEY("conductivity_min", dataset.conductivity_min),
        GRAPHDPS_KEY("conductivity_max", dataset.conductivity_max),
        GRAPHDPS_KEY("min_inclusions", dataset.min_inclusions),
        GRAPHDPS_KEY("max_inclusions", dataset.max_inclusions),
        GRAPHDPS_KEY("margin", dataset.margin),
        GRAPHDPS_KEY("separation", dataset.separation),
        GRAPHDPS_KEY("circle_radius_min", dataset.circle_radius_min),
        GRAPHDPS_KEY("circle_radius_max", dataset.circle_radius_max),
        GRAPHDPS_KEY("triangle_radius_min", dataset.triangle_radius_min),
        GRAPHDPS_KEY("triangle_radius_max", dataset.triangle_radius_max),
        GRAPHDPS_KEY("blob_radius_min", dataset.blob_radius_min),
        GRAPHDPS_KEY("blob_radius_max", dataset.blob_radius_max),
        GRAPHDPS_KEY("blob_amplitude_max", dataset.blob_amplitude_max),
        GRAPHDPS_KEY("horseshoe_inner_min", dataset.horseshoe_inner_min),
        GRAPHDPS_KEY("horseshoe_inner_max", dataset.horseshoe_inner_max),
        GRAPHDPS_KEY("horseshoe_width_min", dataset.horseshoe_width_min),
        GRAPHDPS_KEY("horseshoe_width_max", dataset.horseshoe_width_max),
        GRAPHDPS_KEY("horseshoe_opening_min", dataset.horseshoe_opening_min),
        GRAPHDPS_KEY("horseshoe_opening_max", dataset.horseshoe_opening_max),
        GRAPHDPS_KEY("max_attempts", dataset.max_attempts),
        GRAPHDPS_KEY("steps", schedule.steps),
        GRAPHDPS_KEY("schedule", schedule.kind),
        GRAPHDPS_KEY("beta_start", schedule.beta_start),
        GRAPHDPS_KEY("beta_end", schedule.beta_end),
        GRAPHDPS_KEY("hidden_dim", net.hidden_dim),
        GRAPHDPS_KEY("depth", net.depth),
        GRAPHDPS_KEY("convs_per_block", net.convs_per_block),
        GRAPHDPS_KEY("time_embed_dim", net.time_embed_dim),
        GRAPHDPS_KEY("knn_k", net.knn_k),
        GRAPHDPS_KEY("layer_norm_eps", net.layer_norm_eps),
        GRAPHDPS_KEY("learning_rate", train.learning_rate),
        GRAPHDPS_KEY("epochs", train.epochs),
        GRAPHDPS_KEY("batch_size", train.batch_size),
        GRAPHDPS_KEY("adam_beta1", train.beta1),
        GRAPHDPS_KEY("adam_beta2", train.beta2),
        GRAPHDPS_KEY("adam_eps", train.adam_eps),
        GRAPHDPS_KEY("checkpoint_interval", train.checkpoint_interval),
        GRAPHDPS_KEY("probe_size", train.probe_size),
        GRAPHDPS_KEY("resume", resume),
        GRAPHDPS_KEY("sampler", sampler),
        GRAPHDPS_KEY("regularizer", regularizer.kind),
        GRAPHDPS_KEY("tv_delta", regularizer.delta),
        GRAPHDPS_KEY("eta", guidance.eta),
        GRAPHDPS_KEY("eps_floor", guidance.eps_floor),
        GRAPHDPS_KEY("estimate_floor", guidance.estimate_floor),
        GRAPHDPS_KEY("lambda", guidance.lambda),
        GRAPHDPS_KEY("adaptive_lambda", guidance.adaptive_lambda),
        GRAPHDPS_KEY("lambda_min", guidance.lambda_min),
        GRAPHDPS_KEY("lambda_max", guidance.lambda_max),
        GRAPHDPS_KEY("lambda_scale", guidance.lambda_scale),
        GRAPHDPS_KEY("grad_mode", guidance.grad_mode),
        GRAPHDPS_KEY("noise", noise),
        GRAPHDPS_KEY("noise_level", noise_level),
        GRAPHDPS_KEY("sample_count", sample_count),
        GRAPHDPS_KEY("bench_count", bench_count),
        GRAPHDPS_KEY("bench_samplers", bench_samplers),
        GRAPHDPS_KEY("bench_regularizers", bench_regularizers),
        GRAPHDPS_KEY("threads", threads),
        GRAPHDPS_KEY("output", output),
        GRAPHDPS_KEY("checkpoint", checkpoint),
        GRAPHDPS_KEY("measurement", measurement),
        GRAPHDPS_KEY("truth", truth),
    };
    return table;
}

#undef GRAPHDPS_KEY

std::uint64_t mesh_seed(const RunConfig& c, int which) { return derive_seed(substream(c.seed, "mesh"), which); }

}  // namespace

RunConfig::RunConfig()
{
    train.epochs = 300;
    train.probe_size = 20;
    regularizer.delta = 1e-2;
    guidance.eta = 1e-2;
    guidance.lambda = 0.15;
    guidance.estimate_floor = dataset.conductivity_min;
}

void RunConfig::set(std::string_view key, std::string_view value)
{
    const auto it = registry().find(key);
    if (it == registry().end()) {
        throw Error("config", "unknown key '" + std::string(key) + "'");
    }
    try {
        it->second.set(*this, value);
    } catch (const Error& e) {
        throw Error("config", "key '" + std::string(key) + "': " + e.what());
    }
}

KeyValues RunConfig::to_key_values() const
{
    KeyValues kv;
    for (const auto& [key, e] : registry()) {
        kv.emplace(key, e.get(*this));
    }
    return kv;
}

void RunConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) {
            throw Error("config", what);
        }
    };
    require(coarse_vertices >= 10 && fine_vertices >= 10, "mesh vertex targets must be at least 10");
    require(electrodes >= 2, "electrodes must be at least 2");
    require(electrode_coverage > 0.0 && electrode_coverage < 1.0, "electrode_coverage must lie in (0, 1)");
    require(contact_impedance > 0.0, "contact_impedance must be positive");
    require(current_amplitude > 0.0, "current_amplitude must be positive");
    require(test_count >= 1, "test_count must be at least 1");
    require(noise_level >= 0.0, "noise_level must be nonnegative");
    require(noise == NoiseKind::none || noise_level > 0.0, "noise needs a positive noise_level");
    require(sample_count >= 1 && bench_count >= 1, "sample_count and bench_count must be at least 1");
    require(!bench_samplers.empty() && !bench_regularizers.empty(), "bench lists must not be empty");
    require(threads >= 0, "threads must be nonnegative");
    require(!output.empty(), "output must not be empty");
    require(regularizer.delta > 0.0, "tv_delta must be positive");
    dataset.validate();
    net.validate();
    train.validate();
    guidance.validate();
    make_schedule(schedule);
}

namespace {

std::string hash_document(const KeyValues& kv)
{
    std::ostringstream doc;
    write_key_values(doc, kv);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(doc.str())));
    return buf;
}

}  // namespace

std::string RunConfig::hash() const { return hash_document(to_key_values()); }

std::string training_fingerprint(const RunConfig& config)
{
    static const std::set<std::string> sampling_only = {
        "resume", "sampler", "regularizer", "tv_delta", "eta", "eps_floor", "estimate_floor", "lambda",
        "adaptive_lambda", "lambda_min", "lambda_max", "lambda_scale", "grad_mode", "noise", "noise_level",
        "sample_count", "bench_count", "bench_samplers", "bench_regularizers", "threads", "output", "checkpoint",
        "measurement", "truth"};
    KeyValues kv = config.to_key_values();
    for (const std::string& key : sampling_only) {
        kv.erase(key);
    }
    return hash_document(kv);
}

std::string RunConfig::header() const { return "config_hash=" + hash(); }

std::filesystem::path RunConfig::checkpoint_dir() const
{
    return checkpoint.empty() ? output_dir() / "checkpoint" : std::filesystem::path(checkpoint);
}

int RunConfig::thread_count() const { return threads > 0 ? threads : default_thread_count(); }

const std::vector<std::string>& run_config_keys()
{
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, e] : registry()) {
            k.push_back(name);
        }
        return k;
    }();
    return keys;
}

RunConfig parse_run_config(std::istream& in, std::string_view source)
{
    RunConfig c;
    std::map<std::string, int, std::less<>> seen;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string body = trim(std::string_view(line).substr(0, line.find('#')));
        if (body.empty()) {
            continue;
        }
        const std::string where = std::string(source) + ":" + std::to_string(number) + ": ";
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw Error("config", where + "expected key = value");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        if (const auto it = seen.find(key); it != seen.end()) {
            throw Error("config", where + "duplicate key '" + key + "' (first on line " + std::to_string(it->second) + ")");
        }
        seen.emplace(key, number);
        try {
            c.set(key, std::string_view(body).substr(eq + 1));
        } catch (const Error& e) {
            throw Error("config", where + e.what());
        }
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("io", "cannot read config " + path.string());
    }
    return parse_run_config(in, path.string());
}

void save_resolved_config(const RunConfig& config, const std::filesystem::path& path)
{
    save_key_values(path, config.to_key_values(), config.header());
}

RunSetup build_setup(const RunConfig& config)
{
    config.validate();
    RunSetup s;
    auto mesh = [&](int target, int which) {
        DiskMeshOptions o;
        o.target_vertex_count = target;
        o.seed = mesh_seed(config, which);
        o.boundary_count = electrode_boundary_count(target, config.electrodes, config.electrode_coverage);
        return build_disk_mesh(o);
    };
    s.coarse_mesh = mesh(config.coarse_vertices, 0);
    s.fine_mesh = mesh(config.fine_vertices, 1);
    s.fine_solver = std::make_unique<CemSolver>(
        s.fine_mesh, place_electrodes(s.fine_mesh, config.electrodes, config.electrode_coverage, config.contact_impedance));
    s.coarse_solver = std::make_unique<CemSolver>(
        s.coarse_mesh,
        place_electrodes(s.coarse_mesh, config.electrodes, config.electrode_coverage, config.contact_impedance));
    s.protocol = make_protocol(config.protocol, config.electrodes, config.current_amplitude);
    if (s.protocol.measurement_count() == 0) {
        throw Error("config", "protocol " + std::string(to_string(config.protocol)) + " with " +
                                  std::to_string(config.electrodes) + " electrodes has no measurements");
    }
    s.hierarchy = build_hierarchy(s.coarse_mesh, config.net.depth, config.net.knn_k);
    s.regularizer_graph = make_regularizer_graph(s.hierarchy.levels.front());
    return s;
}

DatasetSpec training_spec(const RunConfig& config)
{
    DatasetSpec s = config.dataset;
    s.seed = substream(config.seed, "phantom");
    s.coarse_mesh_id = std::to_string(config.coarse_vertices) + "@" + std::to_string(mesh_seed(config, 0));
    s.fine_mesh_id = std::to_string(config.fine_vertices) + "@" + std::to_string(mesh_seed(config, 1));
    return s;
}

DatasetSpec test_spec(const RunConfig& config)
{
    DatasetSpec s = training_spec(config);
    s.count = config.test_count;
    s.seed = substream(config.seed, "phantom_test");
    return s;
}

std::filesystem::path training_dir(const RunConfig& config) { return config.output_dir() / "train"; }
std::filesystem::path test_dir(const RunConfig& config) { return config.output_dir() / "test"; }

void write_meshes(const RunConfig& config, const RunSetup& setup)
{
    save_mesh(config.output_dir() / "mesh" / "coarse.mesh", setup.coarse_mesh, config.header());
    save_mesh(config.output_dir() / "mesh" / "fine.mesh", setup.fine_mesh, config.header());
}

void generate_datasets(const RunConfig& config, const RunSetup& setup)
{
    build_dataset(training_spec(config), setup.coarse_mesh, *setup.fine_solver, setup.protocol, training_dir(config),
                  config.header());
    build_dataset(test_spec(config), setup.coarse_mesh, *setup.fine_solver, setup.protocol, test_dir(config),
                  config.header());
}

NoiseSchedule run_schedule(const RunConfig& config) { return make_schedule(config.schedule); }

namespace {

TrainConfig effective_train_config(const RunConfig& config)
{
    TrainConfig t = config.train;
    t.seed = config.seed;
    t.threads = 1;
    return t;
}

void check_compatible(const RunConfig& config, const KeyValues& stored)
{
    KeyValues expected = config.net.to_key_values();
    for (const auto& [k, v] : schedule_key_values(config.schedule)) {
        expected.insert_or_assign(k, v);
    }
    for (const auto& [k, v] : expected) {
        const auto it = stored.find(k);
        if (it == stored.end()) {
            throw Error("checkpoint", "checkpoint config lacks '" + k + "'");
        }
        if (it->second != v) {
            throw Error("checkpoint", "checkpoint has " + k + " = " + it->second + ", config has " + v);
        }
    }
}

}  // namespace

TrainState run_training(const RunConfig& config, const RunSetup& setup, std::function<void(const EpochLog&)> on_epoch)
{
    const Dataset data = load_dataset(training_dir(config));
    const TrainConfig tc = effective_train_config(config);
    TrainState state = initial_train_state(config.net, tc);
    if (config.resume && std::filesystem::exists(config.checkpoint_dir() / "config")) {
        check_compatible(config, load_key_values(config.checkpoint_dir() / "config"));
        state = load_train_state(config.checkpoint_dir());
    }
    TrainOptions o;
    o.output = config.checkpoint_dir();
    o.header_comment = config.header();
    o.extra_config = config.to_key_values();
    for (const auto& [k, v] : schedule_key_values(config.schedule)) {
        o.extra_config.insert_or_assign(k, v);
    }
    o.on_epoch = std::move(on_epoch);
    return train(data.fields, setup.hierarchy, run_schedule(config), config.net, tc, std::move(state), o);
}

ScoreNetParams load_trained_params(const RunConfig& config)
{
    const auto dir = config.checkpoint_dir();
    const KeyValues stored = load_key_values(dir / "config");
    check_compatible(config, stored);
    ScoreNetParams params = stored.contains("best_epoch") ? load_named_arrays(dir, "best") : load_checkpoint_params(dir);
    const auto shapes = parameter_shapes(config.net);
    for (const auto& [name, shape] : shapes) {
        const auto it = params.find(name);
        if (it == params.end() || it->second.rows() != shape.first || it->second.cols() != shape.second) {
            throw Error("checkpoint", "parameter '" + name + "' missing or misshaped in " + dir.string());
        }
    }
    if (params.size() != shapes.size()) {
        throw Error("checkpoint", "unexpected parameters in " + dir.string());
    }
    return params;
}

std::uint64_t sampling_seed(const RunConfig& config, int index)
{
    return derive_seed(substream(config.seed, "sampling"), static_cast<std::uint64_t>(index));
}

std::uint64_t noise_seed(const RunConfig& config, int index)
{
    return derive_seed(substream(config.seed, "noise"), static_cast<std::uint64_t>(index));
}

MeasurementSet noisy_measurements(const RunConfig& config, const MeasurementSet& clean, int index)
{
    if (config.noise == NoiseKind::none) {
        return clean;
    }
    return add_noise(clean, config.noise, config.noise_level, noise_seed(config, index));
}

RdpsOptions rdps_options(const RunConfig& config, SamplerKind sampler, RegularizerKind regularizer, int index)
{
    RdpsOptions o;
    o.sampler = sampler;
    o.regularizer = {regularizer, config.regularizer.delta};
    o.guidance = config.guidance;
    o.seed = sampling_seed(config, index);
    return o;
}

std::string noise_label(const RunConfig& config)
{
    if (config.noise == NoiseKind::none) {
        return "none";
    }
    return std::string(to_string(config.noise)) + ":" + format_double(config.noise_level);
}

std::vector<BenchTask> bench_tasks(const RunConfig& config, int available_samples)
{
    std::vector<BenchTask> tasks;
    const int count = std::min(config.bench_count, available_samples);
    for (int i = 0; i < count; ++i) {
        for (const SamplerKind s : config.bench_samplers) {
            for (const RegularizerKind r : config.bench_regularizers) {
                tasks.push_back({i, s, r});
            }
        }
    }
    return tasks;
}

std::vector<EvaluationRow> run_bench(const RunConfig& config, const RunSetup& setup, const ScoreNetParams& params,
                                     const Dataset& test, std::span<const BenchTask> tasks,
                                     std::vector<NodeField>* reconstructions)
{
    const NoiseSchedule schedule = run_schedule(config);
    // Tasks sharing a sample run on the same worker.
    std::vector<std::vector<std::size_t>> groups;
    std::map<int, std::size_t> group_of;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const int i = tasks[k].sample;
        if (i < 0 || i >= static_cast<int>(test.fields.size())) {
            throw Error("bench", "sample " + std::to_string(i) + " is not in the test set");
        }
        auto [it, fresh] = group_of.try_emplace(i, groups.size());
        if (fresh) {
            groups.emplace_back();
        }
        groups[it->second].push_back(k);
    }
    std::vector<EvaluationRow> rows(tasks.size());
    std::vector<NodeField> recon(tasks.size());
    const std::string noise = noise_label(config);
    const GraphLevel& graph = setup.hierarchy.levels.front();
    parallel_for(static_cast<int>(groups.size()), config.thread_count(), [&](int g) {
        const ScoreModel model = network_score_model(setup.hierarchy, params, config.net);
        for (const std::size_t k : groups[g]) {
            const BenchTask& task = tasks[k];
            const MeasurementSet y = noisy_measurements(config, test.measurements[task.sample], task.sample);
            const RdpsOptions o = rdps_options(config, task.sampler, task.regularizer, task.sample);
            ReconResult r;
            try {
                r = rdps_reconstruct(y, model, schedule, setup.context(), o);
            } catch (const Error& e) {
                throw Error(e.category(), "sample " + std::to_string(task.sample) + ": " + e.what());
            }
            EvaluationRow row = evaluate(test.fields[task.sample], r.x0_star, graph);
            row.sample_id = std::to_string(task.sample);
            row.sampler = std::string(to_string(task.sampler));
            row.regularizer = std::string(to_string(task.regularizer));
            row.noise = noise;
            rows[k] = std::move(row);
            recon[k] = std::move(r.x0_star);
        }
    });
    if (reconstructions) {
        *reconstructions = std::move(recon);
    }
    return rows;
}

}  // namespace graphdps
