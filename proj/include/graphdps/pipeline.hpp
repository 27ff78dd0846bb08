#pragma once

#include "graphdps/metrics.hpp"
#include "graphdps/phantom.hpp"
#include "graphdps/rdps.hpp"
#include "graphdps/training.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace graphdps {

/// Every tunable of a run as one flat key = value document.
struct RunConfig {
    std::uint64_t seed = 0;

    int coarse_vertices = 300;
    int fine_vertices = 1200;
    int electrodes = 16;
    double electrode_coverage = 0.5;
    double contact_impedance = 1e-2;
    ProtocolKind protocol = ProtocolKind::opposite_adjacent;
    double current_amplitude = 50.0;  ///< A; sets the residual scale seen by the adaptive step

    DatasetSpec dataset;  ///< count = training set size; seed and mesh ids are filled in by the pipeline
    int test_count = 10;

    ScheduleConfig schedule{200, ScheduleKind::linear, 5e-4, 0.1};
    ScoreNetConfig net;
    TrainConfig train;
    bool resume = false;

    SamplerKind sampler = SamplerKind::ddim;
    Regularizer regularizer{RegularizerKind::tv, 1e-6};
    GuidanceConfig guidance;
    NoiseKind noise = NoiseKind::none;
    double noise_level = 0.0;

    int sample_count = 1;
    int bench_count = 10;
    std::vector<SamplerKind> bench_samplers{SamplerKind::ddim};
    std::vector<RegularizerKind> bench_regularizers{RegularizerKind::none, RegularizerKind::tik,
                                                    RegularizerKind::gtik, RegularizerKind::tv};
    int threads = 0;  ///< 0 uses GRAPHDPS_THREADS or the hardware concurrency

    std::string output = "run";
    std::string checkpoint;   ///< empty: <output>/checkpoint
    std::string measurement;  ///< reconstruct input
    std::string truth;        ///< optional ground truth field for reconstruct metrics

    RunConfig();

    /// Sets one key from text. Unknown keys and unparsable values throw Error("config", ...).
    void set(std::string_view key, std::string_view value);
    /// All keys in sorted order with their resolved values.
    KeyValues to_key_values() const;
    void validate() const;

    /// FNV-1a of the resolved document, 16 hex digits.
    std::string hash() const;
    /// "config_hash=<hash>", the first line of every artifact.
    std::string header() const;

    std::filesystem::path output_dir() const { return output; }
    std::filesystem::path checkpoint_dir() const;
    int thread_count() const;
};

/// Hash over the keys that shape the datasets and the trained network; sampling, output and
/// evaluation keys are left out.
std::string training_fingerprint(const RunConfig& config);

/// Every key RunConfig accepts.
const std::vector<std::string>& run_config_keys();

/// Parses a config file. Errors name the file, line and key.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(std::istream& in, std::string_view source = "<input>");

/// Writes the resolved config under the output directory.
void save_resolved_config(const RunConfig& config, const std::filesystem::path& path);

/// Fine (simulation) and coarse (inversion) meshes with electrodes and the shared protocol.
struct RunSetup {
    TriMesh fine_mesh;
    TriMesh coarse_mesh;
    std::unique_ptr<CemSolver> fine_solver;
    std::unique_ptr<CemSolver> coarse_solver;
    CurrentProtocol protocol;
    GraphHierarchy hierarchy;  ///< on the coarse mesh, net.depth levels
    RegularizerGraph regularizer_graph;

    FidelityContext context() const { return {coarse_solver.get(), &protocol, &regularizer_graph}; }
};

/// Deterministic in config: meshes from the "mesh" sub-stream of the base seed.
RunSetup build_setup(const RunConfig& config);

/// Dataset specs of the training and held-out sets ("phantom" and "phantom_test" sub-streams).
DatasetSpec training_spec(const RunConfig& config);
DatasetSpec test_spec(const RunConfig& config);

std::filesystem::path training_dir(const RunConfig& config);
std::filesystem::path test_dir(const RunConfig& config);

/// Writes meshes to <output>/mesh.
void write_meshes(const RunConfig& config, const RunSetup& setup);
/// Writes the training and test datasets to <output>/train and <output>/test.
void generate_datasets(const RunConfig& config, const RunSetup& setup);

NoiseSchedule run_schedule(const RunConfig& config);

/// Trains on <output>/train, writing to the checkpoint directory. Resumes from it when config.resume is set.
TrainState run_training(const RunConfig& config, const RunSetup& setup,
                        std::function<void(const EpochLog&)> on_epoch = {});

/// Network parameters from the checkpoint, checked against the configured architecture. The best probe
/// parameters are preferred over the last ones when the checkpoint has them.
ScoreNetParams load_trained_params(const RunConfig& config);

/// Seed of the sampling chain used for item `index` (samples, reconstructions, bench rows).
std::uint64_t sampling_seed(const RunConfig& config, int index);
/// Seed of the measurement noise added to item `index`.
std::uint64_t noise_seed(const RunConfig& config, int index);

/// Applies config.noise / config.noise_level to clean data.
MeasurementSet noisy_measurements(const RunConfig& config, const MeasurementSet& clean, int index);

RdpsOptions rdps_options(const RunConfig& config, SamplerKind sampler, RegularizerKind regularizer, int index);

struct BenchTask {
    int sample = 0;
    SamplerKind sampler = SamplerKind::ddim;
    RegularizerKind regularizer = RegularizerKind::none;
};

/// One reconstruction per (sample, sampler, regularizer), evaluated against the stored fields.
/// Samples run in parallel on config.thread_count() workers; rows come back in task order.
std::vector<EvaluationRow> run_bench(const RunConfig& config, const RunSetup& setup, const ScoreNetParams& params,
                                     const Dataset& test, std::span<const BenchTask> tasks,
                                     std::vector<NodeField>* reconstructions = nullptr);

/// Tasks for the first config.bench_count samples over the configured samplers and regularizers.
std::vector<BenchTask> bench_tasks(const RunConfig& config, int available_samples);

/// Label written to the noise column: "none" or "<kind>:<level>".
std::string noise_label(const RunConfig& config);

}  // namespace graphdps
