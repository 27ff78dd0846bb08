#pragma once

#include "graphdps/autodiff.hpp"
#include "graphdps/io.hpp"
#include "graphdps/mesh.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>

namespace graphdps {

struct ScoreNetConfig {
    int hidden_dim = 16;      ///< F_h
    int depth = 3;            ///< number of hierarchy levels L
    int convs_per_block = 2;
    int time_embed_dim = 16;  ///< sin/cos encoding width (even)
    int knn_k = 6;
    double layer_norm_eps = 1e-8;

    void validate() const;
    KeyValues to_key_values() const;
    /// Reads the keys written by to_key_values; missing keys keep their defaults.
    static ScoreNetConfig from_key_values(const KeyValues& kv);
};

/// Named weights. Matrices act on row features as x * W^T, so W has shape (out x in).
using ScoreNetParams = std::map<std::string, ad::Matrix>;

/// Names and shapes of every parameter for a configuration.
std::map<std::string, std::pair<int, int>> parameter_shapes(const ScoreNetConfig& config);

/// Glorot-uniform weights, zero biases.
ScoreNetParams init_params(const ScoreNetConfig& config, std::uint64_t seed);

std::size_t parameter_count(const ScoreNetParams& params);

/// Sines then cosines: PE_k = sin(t w_k), PE_{k+D/2} = cos(t w_k), w_k = 10000^(-k / (D/2)).
Eigen::VectorXd positional_encoding(double t, int dim);

/// Hierarchy replicated for a batch of independent samples, with index lists ready for the tape.
struct BatchedGraph {
    struct Level {
        int node_count = 0;  ///< total over the batch
        ad::IndexList source;
        ad::IndexList target;
        ad::Matrix edge_lengths;               ///< edges x 1
        ad::IndexList parent;                  ///< into the next level; empty at the coarsest
        std::shared_ptr<const Eigen::VectorXd> inverse_child_count;  ///< per next-level node
    };

    int batch = 0;
    int nodes_per_sample = 0;
    std::vector<Level> levels;
    ad::IndexList sample_of_node;  ///< finest level row -> sample index
};

BatchedGraph batch_hierarchy(const GraphHierarchy& hierarchy, int batch);

/// Parameters placed on a tape, either as differentiable leaves or as constants.
using BoundParams = std::map<std::string, ad::Var, std::less<>>;
BoundParams bind_params(ad::Tape& tape, const ScoreNetParams& params, bool trainable);

/// t_emb rows for each step (steps.size() x F_h).
ad::Var time_embedding(ad::Tape& tape, const BoundParams& p, std::span<const int> steps, const ScoreNetConfig& config);

struct LevelFeatures {
    ad::Var nodes;
    ad::Var edges;
};

/// Node and edge features at the finest level.
LevelFeatures embed_inputs(ad::Tape& tape, const BoundParams& p, const BatchedGraph& graph, const ad::Var& x,
                           const ad::Var& t_emb, const ScoreNetConfig& config);
ad::Var embed_edges(ad::Tape& tape, const BoundParams& p, const BatchedGraph::Level& level);

/// One message-passing layer; `prefix` selects the layer's weights ("enc0.conv1." etc.).
LevelFeatures graph_conv(const LevelFeatures& in, const BatchedGraph::Level& level, const BoundParams& p,
                         const std::string& prefix, const ScoreNetConfig& config);

/// Mean of child rows per parent.
ad::Var pool(const ad::Var& fine, const BatchedGraph::Level& fine_level, int coarse_count);
/// Parent rows copied to children, concatenated with the skip features, projected back to F_h.
ad::Var unpool(const ad::Var& coarse, const ad::Var& skip, const BatchedGraph::Level& fine_level,
               const BoundParams& p, const std::string& prefix);

/// Full network; returns (batch * N) x 2 with columns (eps, s).
ad::Var dgn_apply(ad::Tape& tape, const BoundParams& p, const BatchedGraph& graph, const ad::Var& x,
                  std::span<const int> steps, const ScoreNetConfig& config);

struct ScoreNetOutput {
    NodeField eps;
    NodeField s;  ///< variance interpolation head, unused by the samplers
};

ScoreNetOutput dgn_forward(const NodeField& x_t, int t, const GraphHierarchy& hierarchy, const ScoreNetParams& params,
                           const ScoreNetConfig& config);

/// Checkpoint directory: params.index ("name rows cols" per line), <name>.bin (little-endian
/// float64, row-major) and `config` (key = value).
void save_checkpoint(const std::filesystem::path& directory, const ScoreNetParams& params, const KeyValues& config,
                     std::string_view header_comment = {});
ScoreNetParams load_checkpoint_params(const std::filesystem::path& directory);

/// Same binary layout for an arbitrary named set under `index_name`.
void save_named_arrays(const std::filesystem::path& directory, const std::string& index_name,
                       const ScoreNetParams& arrays, std::string_view header_comment = {});
ScoreNetParams load_named_arrays(const std::filesystem::path& directory, const std::string& index_name);

}  // namespace graphdps
