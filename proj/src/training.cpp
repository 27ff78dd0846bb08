#include "graphdps/training.hpp"

#include "graphdps/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace graphdps {

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0)) {
        throw Error("config", "learning_rate must be positive");
    }
    if (epochs < 0) {
        throw Error("config", "epochs must be nonnegative");
    }
    if (batch_size < 1) {
        throw Error("config", "batch_size must be at least 1");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw Error("config", "adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        throw Error("config", "adam_eps must be positive");
    }
    if (checkpoint_interval < 0) {
        throw Error("config", "checkpoint_interval must be nonnegative");
    }
    if (threads < 1) {
        throw Error("config", "threads must be positive");
    }
    if (probe_size < 0) {
        throw Error("config", "probe_size must be nonnegative");
    }
}

KeyValues TrainConfig::to_key_values() const
{
    return {{"learning_rate", format_double(learning_rate)},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"adam_beta1", format_double(beta1)},
            {"adam_beta2", format_double(beta2)},
            {"adam_eps", format_double(adam_eps)},
            {"train_seed", std::to_string(seed)},
            {"checkpoint_interval", std::to_string(checkpoint_interval)},
            {"probe_size", std::to_string(probe_size)}};
}

void adam_step(ScoreNetParams& params, const ScoreNetParams& grads, AdamState& state, const TrainConfig& config)
{
    if (grads.size() != params.size()) {
        throw Error("training", "gradient set does not match the parameters");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (auto& [name, w] : params) {
        const auto it = grads.find(name);
        if (it == grads.end() || it->second.rows() != w.rows() || it->second.cols() != w.cols()) {
            throw Error("training", "gradient shape mismatch for '" + name + "'");
        }
        const ad::Matrix& g = it->second;
        auto [mi, m_new] = state.m.try_emplace(name, ad::Matrix::Zero(w.rows(), w.cols()));
        auto [vi, v_new] = state.v.try_emplace(name, ad::Matrix::Zero(w.rows(), w.cols()));
        (void)m_new;
        (void)v_new;
        ad::Matrix& m = mi->second;
        ad::Matrix& v = vi->second;
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
        w.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.adam_eps);
    }
}

const BatchedGraph& BatchGraphCache::get(int batch)
{
    auto it = graphs_.find(batch);
    if (it == graphs_.end()) {
        it = graphs_.emplace(batch, batch_hierarchy(*hierarchy_, batch)).first;
    }
    return it->second;
}

LossAndGrad batch_loss_and_grad(const ScoreNetParams& params, const NoisedBatch& batch, BatchGraphCache& graphs,
                                const ScoreNetConfig& net, int threads)
{
    const int b = static_cast<int>(batch.steps.size());
    if (b == 0) {
        throw Error("training", "empty batch");
    }
    const int n = graphs.hierarchy().levels.front().node_count;
    const int chunks = std::clamp(threads, 1, b);
    std::vector<std::pair<int, int>> ranges;
    for (int c = 0; c < chunks; ++c) {
        ranges.emplace_back(c * b / chunks, (c + 1) * b / chunks);
    }
    for (const auto& [lo, hi] : ranges) {
        graphs.get(hi - lo);
    }
    std::vector<LossAndGrad> parts(chunks);
    parallel_for(chunks, chunks, [&](int c) {
        const auto [lo, hi] = ranges[c];
        const int size = hi - lo;
        ad::Matrix x(static_cast<Eigen::Index>(size) * n, 1);
        ad::Matrix eps(static_cast<Eigen::Index>(size) * n, 1);
        for (int k = 0; k < size; ++k) {
            if (batch.x_t[lo + k].size() != n) {
                throw Error("training", "sample has " + std::to_string(batch.x_t[lo + k].size()) +
                                            " nodes, hierarchy has " + std::to_string(n));
            }
            x.middleRows(static_cast<Eigen::Index>(k) * n, n) = batch.x_t[lo + k];
            eps.middleRows(static_cast<Eigen::Index>(k) * n, n) = batch.eps[lo + k];
        }
        ad::Tape tape;
        const BoundParams p = bind_params(tape, params, true);
        const std::span<const int> steps(batch.steps.data() + lo, static_cast<std::size_t>(size));
        const ad::Var out = dgn_apply(tape, p, graphs.get(size), tape.constant(std::move(x)), steps, net);
        const ad::Var loss =
            ad::scale(ad::sum(ad::square(ad::sub(ad::column(out, 0), tape.constant(std::move(eps))))), 1.0 / b);
        tape.backward(loss);
        parts[c].loss = loss.scalar();
        for (const auto& [name, var] : p) {
            parts[c].grads.emplace(name, tape.grad(var));
        }
    });
    LossAndGrad total = std::move(parts[0]);
    for (int c = 1; c < chunks; ++c) {
        total.loss += parts[c].loss;
        for (auto& [name, g] : total.grads) {
            g += parts[c].grads.at(name);
        }
    }
    return total;
}

std::uint64_t batch_seed(std::uint64_t seed, long step)
{
    return derive_seed(substream(seed, "batch"), static_cast<std::uint64_t>(step));
}

NoisedBatch make_probe_batch(std::span<const NodeField> dataset, int size, const NoiseSchedule& schedule,
                             std::uint64_t seed)
{
    if (dataset.empty() || size < 1) {
        throw Error("training", "probe needs a nonempty dataset and a positive size");
    }
    NoisedBatch b;
    for (int k = 0; k < size; ++k) {
        const int t = size == 1 ? (schedule.T + 1) / 2 : 1 + k * (schedule.T - 1) / (size - 1);
        Corrupted c = forward_corrupt(dataset[k % dataset.size()], t, schedule,
                                      derive_seed(seed, static_cast<std::uint64_t>(k)));
        b.steps.push_back(t);
        b.x_t.push_back(std::move(c.x_t));
        b.eps.push_back(std::move(c.eps));
    }
    return b;
}

double probe_loss(const ScoreNetParams& params, const NoisedBatch& batch, const GraphHierarchy& hierarchy,
                  const ScoreNetConfig& net)
{
    const EpsModel model = network_model(hierarchy, params, net);
    double sum = 0.0;
    for (std::size_t k = 0; k < batch.steps.size(); ++k) {
        sum += (batch.eps[k] - model(batch.x_t[k], batch.steps[k])).squaredNorm();
    }
    return sum / static_cast<double>(batch.steps.size());
}

TrainState initial_train_state(const ScoreNetConfig& net, const TrainConfig& config)
{
    TrainState s;
    s.params = init_params(net, substream(config.seed, "init"));
    return s;
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep)
{
    std::vector<std::string_view> out;
    while (true) {
        const auto pos = line.find(sep);
        out.push_back(line.substr(0, pos));
        if (pos == std::string_view::npos) {
            return out;
        }
        line.remove_prefix(pos + 1);
    }
}

KeyValues checkpoint_config(const TrainState& state, KeyValues config)
{
    config.insert_or_assign("epochs_done", std::to_string(state.epochs_done));
    config.insert_or_assign("adam_step", std::to_string(state.adam.step));
    if (!state.best_params.empty()) {
        config.insert_or_assign("best_epoch", std::to_string(state.best_epoch));
        config.insert_or_assign("best_probe_loss", format_double(state.best_probe_loss));
    }
    return config;
}

}  // namespace

TrainState train(std::span<const NodeField> dataset, const GraphHierarchy& hierarchy, const NoiseSchedule& schedule,
                 const ScoreNetConfig& net, const TrainConfig& config, TrainState state, const TrainOptions& options)
{
    config.validate();
    net.validate();
    if (dataset.empty()) {
        throw Error("training", "empty dataset");
    }
    KeyValues ckpt = options.extra_config;
    for (auto& [k, v] : net.to_key_values()) {
        ckpt.insert_or_assign(k, v);
    }
    BatchGraphCache graphs(hierarchy);
    std::optional<NoisedBatch> probe;
    if (config.probe_size > 0) {
        probe = make_probe_batch(dataset, config.probe_size, schedule, substream(config.seed, "probe"));
    }
    const int count = static_cast<int>(dataset.size());
    const double wall_offset = state.log.empty() ? 0.0 : state.log.back().wall_seconds;
    const auto start = std::chrono::steady_clock::now();
    for (int epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
        std::vector<int> order(count);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(derive_seed(substream(config.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        int batches = 0;
        for (int lo = 0; lo < count; lo += config.batch_size) {
            const int hi = std::min(count, lo + config.batch_size);
            std::vector<NodeField> x0;
            for (int k = lo; k < hi; ++k) {
                x0.push_back(dataset[order[k]]);
            }
            const NoisedBatch nb = make_noised_batch(x0, schedule, batch_seed(config.seed, state.adam.step));
            const LossAndGrad lg = batch_loss_and_grad(state.params, nb, graphs, net, config.threads);
            if (!std::isfinite(lg.loss)) {
                throw Error("training", "non-finite loss at epoch " + std::to_string(epoch + 1) + ", optimizer step " +
                                            std::to_string(state.adam.step + 1));
            }
            adam_step(state.params, lg.grads, state.adam, config);
            loss_sum += lg.loss;
            ++batches;
        }
        state.epochs_done = epoch + 1;
        const double wall =
            wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        state.log.push_back({epoch + 1, loss_sum / batches, wall});
        if (probe) {
            const double p = probe_loss(state.params, *probe, hierarchy, net);
            state.log.back().probe_loss = p;
            if (p < state.best_probe_loss) {
                state.best_probe_loss = p;
                state.best_epoch = epoch + 1;
                state.best_params = state.params;
            }
        }
        if (options.on_epoch) {
            options.on_epoch(state.log.back());
        }
        if (options.output && config.checkpoint_interval > 0 && state.epochs_done % config.checkpoint_interval == 0 &&
            state.epochs_done < config.epochs) {
            save_train_state(*options.output, state, ckpt, options.header_comment);
        }
    }
    if (options.output) {
        save_train_state(*options.output, state, ckpt, options.header_comment);
    }
    return state;
}

void save_train_state(const std::filesystem::path& directory, const TrainState& state, KeyValues config,
                      std::string_view header_comment)
{
    save_checkpoint(directory, state.params, checkpoint_config(state, std::move(config)), header_comment);
    save_named_arrays(directory, "adam_m", state.adam.m, header_comment);
    save_named_arrays(directory, "adam_v", state.adam.v, header_comment);
    if (!state.best_params.empty()) {
        save_named_arrays(directory, "best", state.best_params, header_comment);
    }
    std::ofstream log = open_output(directory / "train_log.csv");
    write_train_log(log, state.log, header_comment);
    if (!log) {
        throw Error("io", "failed writing train_log.csv");
    }
}

TrainState load_train_state(const std::filesystem::path& directory)
{
    TrainState s;
    s.params = load_checkpoint_params(directory);
    const KeyValues config = load_key_values(directory / "config");
    auto read_int = [&](const char* key) -> long {
        const auto it = config.find(key);
        if (it == config.end()) {
            throw Error("io", std::string("checkpoint config lacks '") + key + "'");
        }
        return std::stol(it->second);
    };
    s.epochs_done = static_cast<int>(read_int("epochs_done"));
    s.adam.step = read_int("adam_step");
    if (s.adam.step > 0) {
        s.adam.m = load_named_arrays(directory, "adam_m");
        s.adam.v = load_named_arrays(directory, "adam_v");
    }
    if (config.contains("best_epoch")) {
        s.best_epoch = static_cast<int>(read_int("best_epoch"));
        s.best_probe_loss = std::stod(config.at("best_probe_loss"));
        s.best_params = load_named_arrays(directory, "best");
    }
    std::ifstream log(directory / "train_log.csv");
    if (log) {
        s.log = read_train_log(log);
    }
    return s;
}

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log, std::string_view header_comment)
{
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    out << "epoch,mean_loss,wall_seconds,probe_loss\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << format_double(e.mean_loss) << ',' << format_double(e.wall_seconds) << ','
            << format_double(e.probe_loss) << '\n';
    }
}

std::vector<EpochLog> read_train_log(std::istream& in)
{
    std::vector<EpochLog> log;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        if (header) {
            header = false;
            continue;
        }
        const std::vector<std::string_view> fields = split(line, ',');
        EpochLog e;
        auto parse = [&](std::size_t i, auto& out) {
            const auto res = std::from_chars(fields[i].data(), fields[i].data() + fields[i].size(), out);
            if (res.ec != std::errc{} || res.ptr != fields[i].data() + fields[i].size()) {
                throw Error("io", "malformed training log line '" + line + "'");
            }
        };
        if (fields.size() != 4) {
            throw Error("io", "malformed training log line '" + line + "'");
        }
        parse(0, e.epoch);
        parse(1, e.mean_loss);
        parse(2, e.wall_seconds);
        parse(3, e.probe_loss);
        log.push_back(e);
    }
    return log;
}

}  // namespace graphdps
