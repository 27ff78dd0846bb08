#include "graphdps/score_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace graphdps {

namespace {

using ad::Matrix;
using ad::Var;

const Var& param(const BoundParams& p, const std::string& name)
{
    const auto it = p.find(name);
    if (it == p.end()) {
        throw Error("network", "missing parameter '" + name + "'");
    }
    return it->second;
}

Var linear(const Var& x, const BoundParams& p, const std::string& w) { return ad::matmul_t(x, param(p, w)); }

Var affine(const Var& x, const BoundParams& p, const std::string& w, const std::string& b)
{
    return ad::add_row(ad::matmul_t(x, param(p, w)), param(p, b));
}

// LN -> linear -> SELU -> linear -> SELU
Var kernel(const Var& in, const BoundParams& p, const std::string& prefix, double eps)
{
    const Var h = ad::selu(affine(ad::layer_norm_rows(in, eps), p, prefix + "W1", prefix + "b1"));
    return ad::selu(affine(h, p, prefix + "W2", prefix + "b2"));
}

std::vector<std::string> conv_prefixes(const ScoreNetConfig& c)
{
    std::vector<std::string> out;
    auto add_block = [&](const std::string& block) {
        for (int k = 0; k < c.convs_per_block; ++k) {
            out.push_back(block + ".conv" + std::to_string(k) + ".");
        }
    };
    for (int l = 0; l + 1 < c.depth; ++l) {
        add_block("enc" + std::to_string(l));
        add_block("dec" + std::to_string(l));
    }
    add_block("mid");
    return out;
}

std::string read_text_line(std::istream& in)
{
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            return line;
        }
    }
    return {};
}

}  // namespace

void ScoreNetConfig::validate() const
{
    if (hidden_dim < 4) {
        throw Error("config", "hidden_dim must be at least 4");
    }
    if (depth < 1) {
        throw Error("config", "depth must be at least 1");
    }
    if (convs_per_block < 1) {
        throw Error("config", "convs_per_block must be at least 1");
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw Error("config", "time_embed_dim must be a positive even number");
    }
    if (knn_k < 1) {
        throw Error("config", "knn_k must be positive");
    }
    if (!(layer_norm_eps > 0.0)) {
        throw Error("config", "layer_norm_eps must be positive");
    }
}

KeyValues ScoreNetConfig::to_key_values() const
{
    return {{"hidden_dim", std::to_string(hidden_dim)},
            {"depth", std::to_string(depth)},
            {"convs_per_block", std::to_string(convs_per_block)},
            {"time_embed_dim", std::to_string(time_embed_dim)},
            {"knn_k", std::to_string(knn_k)},
            {"layer_norm_eps", format_double(layer_norm_eps)}};
}

ScoreNetConfig ScoreNetConfig::from_key_values(const KeyValues& kv)
{
    ScoreNetConfig c;
    auto get_int = [&](const char* key, int& field) {
        if (const auto it = kv.find(key); it != kv.end()) {
            field = std::stoi(it->second);
        }
    };
    get_int("hidden_dim", c.hidden_dim);
    get_int("depth", c.depth);
    get_int("convs_per_block", c.convs_per_block);
    get_int("time_embed_dim", c.time_embed_dim);
    get_int("knn_k", c.knn_k);
    if (const auto it = kv.find("layer_norm_eps"); it != kv.end()) {
        c.layer_norm_eps = std::stod(it->second);
    }
    c.validate();
    return c;
}

std::map<std::string, std::pair<int, int>> parameter_shapes(const ScoreNetConfig& c)
{
    c.validate();
    const int F = c.hidden_dim;
    std::map<std::string, std::pair<int, int>> s;
    s["time.W_t"] = {F, c.time_embed_dim};
    s["time.W_proj"] = {F, F};
    s["embed.W_n"] = {F, 1};
    s["embed.W_proj_n"] = {F, 2 * F};
    s["embed.W_proj_e"] = {F, 1};
    for (const auto& pre : conv_prefixes(c)) {
        s[pre + "W_e"] = {F, F};
        s[pre + "W_v"] = {F, F};
        s[pre + "edge.W1"] = {F, 3 * F};
        s[pre + "edge.b1"] = {1, F};
        s[pre + "edge.W2"] = {F, F};
        s[pre + "edge.b2"] = {1, F};
        s[pre + "node.W1"] = {F, 2 * F};
        s[pre + "node.b1"] = {1, F};
        s[pre + "node.W2"] = {F, F};
        s[pre + "node.b2"] = {1, F};
    }
    for (int l = 0; l + 1 < c.depth; ++l) {
        s["dec" + std::to_string(l) + ".unpool.W"] = {F, 2 * F};
    }
    s["out.W"] = {2, F};
    return s;
}

ScoreNetParams init_params(const ScoreNetConfig& config, std::uint64_t seed)
{
    ScoreNetParams params;
    std::mt19937_64 rng(seed);
    for (const auto& [name, shape] : parameter_shapes(config)) {
        const auto [rows, cols] = shape;
        const bool bias = name.ends_with(".b1") || name.ends_with(".b2");
        Matrix m = Matrix::Zero(rows, cols);
        if (!bias) {
            const double limit = std::sqrt(6.0 / (rows + cols));
            std::uniform_real_distribution<double> u(-limit, limit);
            for (Eigen::Index k = 0; k < m.size(); ++k) {
                m.data()[k] = u(rng);
            }
        }
        params.emplace(name, std::move(m));
    }
    return params;
}

std::size_t parameter_count(const ScoreNetParams& params)
{
    std::size_t n = 0;
    for (const auto& [name, m] : params) {
        n += static_cast<std::size_t>(m.size());
    }
    return n;
}

Eigen::VectorXd positional_encoding(double t, int dim)
{
    if (dim < 2 || dim % 2 != 0) {
        throw Error("network", "positional encoding width must be even");
    }
    const int half = dim / 2;
    Eigen::VectorXd pe(dim);
    for (int k = 0; k < half; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / half);
        pe[k] = std::sin(t * w);
        pe[k + half] = std::cos(t * w);
    }
    return pe;
}

BatchedGraph batch_hierarchy(const GraphHierarchy& hierarchy, int batch)
{
    if (batch < 1) {
        throw Error("network", "batch must be positive");
    }
    BatchedGraph g;
    g.batch = batch;
    g.nodes_per_sample = hierarchy.levels.front().node_count;
    for (int l = 0; l < hierarchy.depth(); ++l) {
        const GraphLevel& lv = hierarchy.levels[l];
        BatchedGraph::Level out;
        out.node_count = lv.node_count * batch;
        auto src = std::make_shared<std::vector<int>>();
        auto dst = std::make_shared<std::vector<int>>();
        out.edge_lengths.resize(static_cast<Eigen::Index>(lv.edges.size()) * batch, 1);
        for (int b = 0; b < batch; ++b) {
            const int offset = b * lv.node_count;
            for (std::size_t e = 0; e < lv.edges.size(); ++e) {
                src->push_back(lv.edges[e].first + offset);
                dst->push_back(lv.edges[e].second + offset);
                out.edge_lengths(static_cast<Eigen::Index>(b * lv.edges.size() + e), 0) = lv.edge_lengths[e];
            }
        }
        out.source = std::move(src);
        out.target = std::move(dst);
        if (l + 1 < hierarchy.depth()) {
            const int coarse = hierarchy.levels[l + 1].node_count;
            auto parent = std::make_shared<std::vector<int>>();
            Eigen::VectorXd children = Eigen::VectorXd::Zero(coarse * batch);
            for (int b = 0; b < batch; ++b) {
                for (const int p : hierarchy.parent_of[l]) {
                    parent->push_back(p + b * coarse);
                    children[p + b * coarse] += 1.0;
                }
            }
            out.parent = std::move(parent);
            out.inverse_child_count = std::make_shared<const Eigen::VectorXd>(children.cwiseInverse());
        }
        g.levels.push_back(std::move(out));
    }
    auto sample = std::make_shared<std::vector<int>>();
    for (int b = 0; b < batch; ++b) {
        sample->insert(sample->end(), static_cast<std::size_t>(g.nodes_per_sample), b);
    }
    g.sample_of_node = std::move(sample);
    return g;
}

BoundParams bind_params(ad::Tape& tape, const ScoreNetParams& params, bool trainable)
{
    BoundParams out;
    for (const auto& [name, m] : params) {
        out.emplace(name, trainable ? tape.leaf(m) : tape.constant(m));
    }
    return out;
}

Var time_embedding(ad::Tape& tape, const BoundParams& p, std::span<const int> steps, const ScoreNetConfig& config)
{
    Matrix pe(static_cast<Eigen::Index>(steps.size()), config.time_embed_dim);
    for (std::size_t b = 0; b < steps.size(); ++b) {
        pe.row(static_cast<Eigen::Index>(b)) = positional_encoding(steps[b], config.time_embed_dim).transpose();
    }
    const Var h = ad::selu(linear(tape.constant(std::move(pe)), p, "time.W_t"));
    return linear(h, p, "time.W_proj");
}

Var embed_edges(ad::Tape& tape, const BoundParams& p, const BatchedGraph::Level& level)
{
    return linear(tape.constant(level.edge_lengths), p, "embed.W_proj_e");
}

LevelFeatures embed_inputs(ad::Tape& tape, const BoundParams& p, const BatchedGraph& graph, const Var& x,
                           const Var& t_emb, const ScoreNetConfig& config)
{
    (void)config;
    if (x.rows() != graph.levels.front().node_count || x.cols() != 1) {
        throw Error("network", "input field has " + std::to_string(x.rows()) + " rows, graph expects " +
                                   std::to_string(graph.levels.front().node_count));
    }
    const Var t_rows = ad::gather_rows(t_emb, graph.sample_of_node);
    const Var v = linear(ad::selu(ad::concat_cols({linear(x, p, "embed.W_n"), t_rows})), p, "embed.W_proj_n");
    return {v, embed_edges(tape, p, graph.levels.front())};
}

LevelFeatures graph_conv(const LevelFeatures& in, const BatchedGraph::Level& level, const BoundParams& p,
                         const std::string& prefix, const ScoreNetConfig& config)
{
    const Var vi = ad::gather_rows(in.nodes, level.source);
    const Var vj = ad::gather_rows(in.nodes, level.target);
    const Var edge_in = ad::concat_cols({in.edges, vi, vj});
    const Var e = ad::add(linear(in.edges, p, prefix + "W_e"), kernel(edge_in, p, prefix + "edge.", config.layer_norm_eps));
    const Var incoming = ad::scatter_add_rows(e, level.target, level.node_count);
    const Var node_in = ad::concat_cols({incoming, in.nodes});
    const Var v = ad::add(linear(in.nodes, p, prefix + "W_v"), kernel(node_in, p, prefix + "node.", config.layer_norm_eps));
    return {v, e};
}

Var pool(const Var& fine, const BatchedGraph::Level& fine_level, int coarse_count)
{
    return ad::scale_rows(ad::scatter_add_rows(fine, fine_level.parent, coarse_count), fine_level.inverse_child_count);
}

Var unpool(const Var& coarse, const Var& skip, const BatchedGraph::Level& fine_level, const BoundParams& p,
           const std::string& prefix)
{
    const Var up = ad::gather_rows(coarse, fine_level.parent);
    return linear(ad::concat_cols({up, skip}), p, prefix + "unpool.W");
}

Var dgn_apply(ad::Tape& tape, const BoundParams& p, const BatchedGraph& graph, const Var& x, std::span<const int> steps,
              const ScoreNetConfig& config)
{
    if (static_cast<int>(steps.size()) != graph.batch) {
        throw Error("network", "one diffusion step per batch element required");
    }
    if (static_cast<int>(graph.levels.size()) != config.depth) {
        throw Error("network", "hierarchy depth " + std::to_string(graph.levels.size()) +
                                   " does not match network depth " + std::to_string(config.depth));
    }
    const Var t_emb = time_embedding(tape, p, steps, config);
    LevelFeatures f = embed_inputs(tape, p, graph, x, t_emb, config);

    std::vector<Var> skips;
    const int L = config.depth;
    for (int l = 0; l < L; ++l) {
        const BatchedGraph::Level& lv = graph.levels[l];
        if (l > 0) {
            f.edges = embed_edges(tape, p, lv);
        }
        const std::string name = l + 1 < L ? "enc" + std::to_string(l) : std::string("mid");
        for (int k = 0; k < config.convs_per_block; ++k) {
            f = graph_conv(f, lv, p, name + ".conv" + std::to_string(k) + ".", config);
        }
        if (l + 1 < L) {
            skips.push_back(f.nodes);
            f.nodes = pool(f.nodes, lv, graph.levels[l + 1].node_count);
        }
    }
    for (int l = L - 2; l >= 0; --l) {
        const BatchedGraph::Level& lv = graph.levels[l];
        const std::string name = "dec" + std::to_string(l);
        f.nodes = unpool(f.nodes, skips[l], lv, p, name + ".");
        f.edges = embed_edges(tape, p, lv);
        for (int k = 0; k < config.convs_per_block; ++k) {
            f = graph_conv(f, lv, p, name + ".conv" + std::to_string(k) + ".", config);
        }
    }
    return linear(f.nodes, p, "out.W");
}

ScoreNetOutput dgn_forward(const NodeField& x_t, int t, const GraphHierarchy& hierarchy, const ScoreNetParams& params,
                           const ScoreNetConfig& config)
{
    ad::Tape tape;
    const BatchedGraph graph = batch_hierarchy(hierarchy, 1);
    const BoundParams p = bind_params(tape, params, false);
    const int steps[] = {t};
    const Var out = dgn_apply(tape, p, graph, tape.constant(ad::as_column(x_t)), steps, config);
    return {out.value().col(0), out.value().col(1)};
}

void save_named_arrays(const std::filesystem::path& directory, const std::string& index_name,
                       const ScoreNetParams& arrays, std::string_view header_comment)
{
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
    std::ofstream index = open_output(directory / (index_name + ".index"));
    if (!header_comment.empty()) {
        index << "# " << header_comment << '\n';
    }
    for (const auto& [name, m] : arrays) {
        index << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        std::ofstream bin = open_output(directory / (index_name + "." + name + ".bin"));
        bin.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!bin) {
            throw Error("io", "failed writing array " + name);
        }
    }
    if (!index) {
        throw Error("io", "failed writing " + index_name + ".index");
    }
}

ScoreNetParams load_named_arrays(const std::filesystem::path& directory, const std::string& index_name)
{
    std::ifstream index(directory / (index_name + ".index"));
    if (!index) {
        throw Error("io", "cannot read " + (directory / (index_name + ".index")).string());
    }
    ScoreNetParams out;
    std::string line;
    while (!(line = read_text_line(index)).empty()) {
        std::istringstream row(line);
        std::string name;
        Eigen::Index rows = -1;
        Eigen::Index cols = -1;
        if (!(row >> name >> rows >> cols) || rows < 0 || cols < 0) {
            throw Error("io", "malformed index line '" + line + "'");
        }
        const auto path = directory / (index_name + "." + name + ".bin");
        std::ifstream bin(path, std::ios::binary);
        if (!bin) {
            throw Error("io", "cannot read " + path.string());
        }
        Matrix m(rows, cols);
        bin.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (bin.gcount() != static_cast<std::streamsize>(m.size() * sizeof(double))) {
            throw Error("io", "array file truncated: " + path.string());
        }
        out.emplace(name, std::move(m));
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& directory, const ScoreNetParams& params, const KeyValues& config,
                     std::string_view header_comment)
{
    save_named_arrays(directory, "params", params, header_comment);
    save_key_values(directory / "config", config, header_comment);
}

ScoreNetParams load_checkpoint_params(const std::filesystem::path& directory)
{
    return load_named_arrays(directory, "params");
}

}  // namespace graphdps
