#pragma once

#include "graphdps/diffusion.hpp"
#include "graphdps/io.hpp"
#include "graphdps/score_net.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>

namespace graphdps {

struct TrainConfig {
    double learning_rate = 2.5e-3;
    int epochs = 1000;
    int batch_size = 10;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int checkpoint_interval = 0;  ///< epochs between checkpoints; 0 writes only the final one
    int threads = 1;              ///< workers splitting each mini-batch
    /// Samples in the fixed probe batch scored after every epoch. When positive the parameters with the
    /// lowest probe loss are kept next to the last ones; 0 disables the probe.
    int probe_size = 0;

    void validate() const;
    KeyValues to_key_values() const;
};

struct AdamState {
    long step = 0;
    ScoreNetParams m;
    ScoreNetParams v;
};

/// One bias-corrected Adam update in place.
void adam_step(ScoreNetParams& params, const ScoreNetParams& grads, AdamState& state, const TrainConfig& config);

struct LossAndGrad {
    double loss = 0.0;
    ScoreNetParams grads;
};

/// Batched graphs by batch size, built on first use.
class BatchGraphCache {
public:
    explicit BatchGraphCache(const GraphHierarchy& hierarchy) : hierarchy_(&hierarchy) {}
    const BatchedGraph& get(int batch);
    const GraphHierarchy& hierarchy() const { return *hierarchy_; }

private:
    const GraphHierarchy* hierarchy_;
    std::map<int, BatchedGraph> graphs_;
};

/// Mean over the batch of ||eps - eps_theta(x_t, t)||^2 and its parameter gradient. The batch is split
/// into at most `threads` chunks, each on its own tape; chunk gradients are summed.
LossAndGrad batch_loss_and_grad(const ScoreNetParams& params, const NoisedBatch& batch, BatchGraphCache& graphs,
                                const ScoreNetConfig& net, int threads = 1);

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
    double probe_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
    ScoreNetParams params;
    AdamState adam;
    int epochs_done = 0;
    std::vector<EpochLog> log;
    ScoreNetParams best_params;  ///< empty without a probe
    int best_epoch = 0;
    double best_probe_loss = std::numeric_limits<double>::infinity();
};

/// First `size` samples of the dataset at evenly spaced steps 1..T with noise from `seed`.
NoisedBatch make_probe_batch(std::span<const NodeField> dataset, int size, const NoiseSchedule& schedule,
                             std::uint64_t seed);

/// Mean over the batch of ||eps - eps_theta(x_t, t)||^2, forward passes only.
double probe_loss(const ScoreNetParams& params, const NoisedBatch& batch, const GraphHierarchy& hierarchy,
                  const ScoreNetConfig& net);

struct TrainOptions {
    /// Checkpoints, the training log and the final parameters go here when set.
    std::optional<std::filesystem::path> output;
    std::string header_comment;
    /// Extra entries stored in the checkpoint config next to the network and schedule settings.
    KeyValues extra_config;
    std::function<void(const EpochLog&)> on_epoch;
};

TrainState initial_train_state(const ScoreNetConfig& net, const TrainConfig& config);

/// Continues `state` until config.epochs. Per-epoch shuffles and per-step noise derive from config.seed,
/// the epoch and the global step, so interrupted and resumed runs match uninterrupted ones.
TrainState train(std::span<const NodeField> dataset, const GraphHierarchy& hierarchy, const NoiseSchedule& schedule,
                 const ScoreNetConfig& net, const TrainConfig& config, TrainState state,
                 const TrainOptions& options = {});

/// Writes params, Adam moments, the best parameters when present, the training log and `config` (+ progress
/// keys) to `directory`.
void save_train_state(const std::filesystem::path& directory, const TrainState& state, KeyValues config,
                      std::string_view header_comment = {});
TrainState load_train_state(const std::filesystem::path& directory);

void write_train_log(std::ostream& out, const std::vector<EpochLog>& log, std::string_view header_comment = {});
std::vector<EpochLog> read_train_log(std::istream& in);

/// Noise seed of global optimizer step `step`.
std::uint64_t batch_seed(std::uint64_t seed, long step);

}  // namespace graphdps
