#include "graphdps/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

using namespace graphdps;
using ad::Matrix;

namespace {

ScoreNetConfig tiny_net()
{
    ScoreNetConfig c;
    c.hidden_dim = 8;
    c.depth = 2;
    c.time_embed_dim = 8;
    c.knn_k = 4;
    return c;
}

GraphHierarchy tiny_hierarchy() { return build_hierarchy(build_disk_mesh(30, 5), 2, 4); }

std::vector<NodeField> toy_dataset(int count, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<NodeField> out;
    for (int k = 0; k < count; ++k) {
        NodeField x = NodeField::Ones(n);
        const int lo = static_cast<int>(u(rng) * n / 3);
        x.segment(lo, n / 4).setConstant(u(rng));
        out.push_back(x);
    }
    return out;
}

std::filesystem::path scratch(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("graphdps_train_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged)
{
    ScoreNetParams p{{"w", Matrix::Constant(2, 3, 0.4)}};
    const ScoreNetParams before = p;
    AdamState s;
    adam_step(p, {{"w", Matrix::Zero(2, 3)}}, s, TrainConfig{});
    EXPECT_EQ(p, before);
    EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    ScoreNetParams p{{"w", Matrix::Zero(1, 4)}};
    Matrix g(1, 4);
    g << 3.0, -0.2, 1e-3, -50.0;
    AdamState s;
    TrainConfig c;
    c.learning_rate = 0.01;
    adam_step(p, {{"w", g}}, s, c);
    for (int k = 0; k < 4; ++k) {
        EXPECT_NEAR(p.at("w")(0, k), -0.01 * (g(0, k) > 0 ? 1.0 : -1.0), 1e-7);
    }
}

TEST(Adam, QuadraticBowlConverges)
{
    Matrix target(1, 3);
    target << 1.5, -2.0, 0.25;
    ScoreNetParams p{{"w", Matrix::Zero(1, 3)}};
    AdamState s;
    TrainConfig c;
    c.learning_rate = 0.05;
    int steps = 0;
    while (steps < 5000 && (p.at("w") - target).cwiseAbs().maxCoeff() > 1e-6) {
        adam_step(p, {{"w", Matrix(2.0 * (p.at("w") - target))}}, s, c);
        ++steps;
    }
    EXPECT_LE((p.at("w") - target).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE(steps, 5000);
}

TEST(Adam, MismatchedGradientsRejected)
{
    ScoreNetParams p{{"w", Matrix::Zero(2, 2)}};
    AdamState s;
    EXPECT_THROW(adam_step(p, {{"w", Matrix::Zero(2, 3)}}, s, TrainConfig{}), Error);
    EXPECT_THROW(adam_step(p, {{"v", Matrix::Zero(2, 2)}}, s, TrainConfig{}), Error);
}

TEST(BatchGradient, EqualsMeanOfPerSampleGradients)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const ScoreNetParams params = init_params(net, 3);
    const NoiseSchedule s = make_schedule(100);
    const auto data = toy_dataset(3, h.levels[0].node_count, 4);
    const NoisedBatch nb = make_noised_batch(data, s, 9);
    BatchGraphCache graphs(h);
    const LossAndGrad whole = batch_loss_and_grad(params, nb, graphs, net);
    double loss = 0.0;
    ScoreNetParams mean;
    for (int k = 0; k < 3; ++k) {
        const NoisedBatch one{{nb.steps[k]}, {nb.x_t[k]}, {nb.eps[k]}};
        const LossAndGrad single = batch_loss_and_grad(params, one, graphs, net);
        loss += single.loss / 3.0;
        for (const auto& [name, g] : single.grads) {
            auto [it, fresh] = mean.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
            (void)fresh;
            it->second += g / 3.0;
        }
    }
    EXPECT_NEAR(whole.loss, loss, 1e-12 * loss);
    for (const auto& [name, g] : whole.grads) {
        EXPECT_LE((g - mean.at(name)).norm(), 1e-10 * std::max(1.0, g.norm())) << name;
    }
    // Splitting across workers only changes the summation order.
    const LossAndGrad split = batch_loss_and_grad(params, nb, graphs, net, 3);
    EXPECT_NEAR(split.loss, whole.loss, 1e-12 * loss);
    for (const auto& [name, g] : whole.grads) {
        EXPECT_LE((g - split.grads.at(name)).norm(), 1e-10 * std::max(1.0, g.norm())) << name;
    }
}

TEST(Training, LossDecreasesOnToySet)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(100, ScheduleKind::linear, 1e-3, 0.1);
    const auto data = toy_dataset(20, h.levels[0].node_count, 5);
    TrainConfig c;
    c.epochs = 100;  // 2 steps per epoch, 200 steps
    c.seed = 6;
    const TrainState out = train(data, h, s, net, c, initial_train_state(net, c));
    ASSERT_EQ(out.log.size(), 100u);
    EXPECT_EQ(out.adam.step, 200);
    double first = 0.0;
    double last = 0.0;
    for (int k = 0; k < 10; ++k) {
        first += out.log[k].mean_loss;
        last += out.log[90 + k].mean_loss;
    }
    EXPECT_LT(last, 0.8 * first);
}

TEST(Training, OverfitsSingleSample)
{
    const GraphHierarchy h = tiny_hierarchy();
    const int n = h.levels[0].node_count;
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(100, ScheduleKind::linear, 1e-3, 0.1);
    const auto data = toy_dataset(1, n, 7);
    TrainConfig c;
    c.epochs = 2000;
    c.seed = 8;
    const TrainState out = train(data, h, s, net, c, initial_train_state(net, c));
    double tail = 0.0;
    for (int k = 1900; k < 2000; ++k) {
        tail += out.log[k].mean_loss / 100.0;
    }
    EXPECT_LT(tail, 0.05 * n);
}

TEST(Training, DeterministicAndResumable)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(50);
    const auto data = toy_dataset(7, h.levels[0].node_count, 9);
    TrainConfig c;
    c.batch_size = 3;
    c.epochs = 4;
    c.seed = 10;
    const TrainState full = train(data, h, s, net, c, initial_train_state(net, c));
    EXPECT_EQ(full.params, train(data, h, s, net, c, initial_train_state(net, c)).params);

    const auto dir = scratch("resume");
    TrainConfig half = c;
    half.epochs = 2;
    TrainOptions o;
    o.output = dir;
    o.header_comment = "config_hash=test";
    train(data, h, s, net, half, initial_train_state(net, c), o);
    const TrainState loaded = load_train_state(dir);
    EXPECT_EQ(loaded.epochs_done, 2);
    EXPECT_EQ(loaded.adam.step, 6);
    ASSERT_EQ(loaded.log.size(), 2u);
    EXPECT_EQ(loaded.log[1].mean_loss, full.log[1].mean_loss);
    const TrainState resumed = train(data, h, s, net, c, loaded);
    EXPECT_EQ(resumed.params, full.params);
    EXPECT_EQ(resumed.adam.m, full.adam.m);
    EXPECT_EQ(resumed.log.back().mean_loss, full.log.back().mean_loss);
    std::filesystem::remove_all(dir);
}

TEST(Training, ProbeBatchSpansTheSchedule)
{
    const auto data = toy_dataset(3, 30, 20);
    const NoiseSchedule s = make_schedule(50);
    const NoisedBatch b = make_probe_batch(data, 5, s, 21);
    EXPECT_EQ(b.steps, (std::vector<int>{1, 13, 25, 37, 50}));
    for (int k = 0; k < 5; ++k) {
        EXPECT_LE((b.x_t[k] - corrupt(data[k % 3], b.eps[k], b.steps[k], s)).norm(), 1e-14);
    }
    const NoisedBatch again = make_probe_batch(data, 5, s, 21);
    EXPECT_EQ(again.eps[4], b.eps[4]);
    EXPECT_NE(make_probe_batch(data, 5, s, 22).eps[4], b.eps[4]);
    EXPECT_THROW(make_probe_batch(data, 0, s, 21), Error);
}

TEST(Training, ProbeLossMatchesBatchedTapeLoss)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(40);
    const auto data = toy_dataset(4, h.levels[0].node_count, 22);
    const ScoreNetParams params = init_params(net, 23);
    const NoisedBatch b = make_probe_batch(data, 6, s, 24);
    BatchGraphCache graphs(h);
    const double tape = batch_loss_and_grad(params, b, graphs, net).loss;
    EXPECT_NEAR(probe_loss(params, b, h, net), tape, 1e-10 * tape);
}

TEST(Training, KeepsParametersWithLowestProbeLoss)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(30);
    const auto data = toy_dataset(6, h.levels[0].node_count, 25);
    TrainConfig c;
    c.batch_size = 3;
    c.epochs = 12;
    c.seed = 26;
    c.probe_size = 4;
    const TrainState out = train(data, h, s, net, c, initial_train_state(net, c));
    int argmin = 0;
    for (int k = 0; k < c.epochs; ++k) {
        ASSERT_TRUE(std::isfinite(out.log[k].probe_loss));
        argmin = out.log[k].probe_loss < out.log[argmin].probe_loss ? k : argmin;
    }
    EXPECT_EQ(out.best_epoch, argmin + 1);
    EXPECT_EQ(out.best_probe_loss, out.log[argmin].probe_loss);

    // The kept parameters are those of a run stopped at the best epoch.
    TrainConfig stop = c;
    stop.epochs = out.best_epoch;
    const TrainState shorter = train(data, h, s, net, stop, initial_train_state(net, c));
    EXPECT_EQ(out.best_params, shorter.params);
    const NoisedBatch probe = make_probe_batch(data, 4, s, substream(c.seed, "probe"));
    EXPECT_EQ(probe_loss(out.best_params, probe, h, net), out.best_probe_loss);

    TrainConfig off = c;
    off.probe_size = 0;
    const TrainState plain = train(data, h, s, net, off, initial_train_state(net, c));
    EXPECT_EQ(plain.params, out.params);
    EXPECT_TRUE(plain.best_params.empty());
    EXPECT_TRUE(std::isnan(plain.log.back().probe_loss));
}

TEST(Training, ProbeStateSurvivesResume)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(30);
    const auto data = toy_dataset(6, h.levels[0].node_count, 27);
    TrainConfig c;
    c.batch_size = 3;
    c.epochs = 6;
    c.seed = 28;
    c.probe_size = 3;
    const TrainState full = train(data, h, s, net, c, initial_train_state(net, c));
    const auto dir = scratch("probe_resume");
    TrainConfig half = c;
    half.epochs = 3;
    TrainOptions o;
    o.output = dir;
    train(data, h, s, net, half, initial_train_state(net, c), o);
    const TrainState loaded = load_train_state(dir);
    EXPECT_EQ(loaded.log.back().probe_loss, full.log[2].probe_loss);
    EXPECT_GT(loaded.best_epoch, 0);
    const TrainState resumed = train(data, h, s, net, c, loaded);
    EXPECT_EQ(resumed.best_epoch, full.best_epoch);
    EXPECT_EQ(resumed.best_probe_loss, full.best_probe_loss);
    EXPECT_EQ(resumed.best_params, full.best_params);
    EXPECT_EQ(resumed.params, full.params);
    std::filesystem::remove_all(dir);
}

TEST(Training, CheckpointIntervalWritesIntermediateState)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    const NoiseSchedule s = make_schedule(20);
    const auto data = toy_dataset(4, h.levels[0].node_count, 11);
    TrainConfig c;
    c.batch_size = 2;
    c.epochs = 3;
    c.checkpoint_interval = 2;
    const auto dir = scratch("interval");
    int seen = 0;
    TrainOptions o;
    o.output = dir;
    o.on_epoch = [&](const EpochLog& e) {
        ++seen;
        if (e.epoch == 3) {
            EXPECT_EQ(load_train_state(dir).epochs_done, 2);
        }
    };
    train(data, h, s, net, c, initial_train_state(net, c), o);
    EXPECT_EQ(seen, 3);
    EXPECT_EQ(load_train_state(dir).epochs_done, 3);
    std::filesystem::remove_all(dir);
}

TEST(Training, NonFiniteLossAborts)
{
    const GraphHierarchy h = tiny_hierarchy();
    const ScoreNetConfig net = tiny_net();
    auto data = toy_dataset(2, h.levels[0].node_count, 12);
    data[1][0] = std::nan("");
    TrainConfig c;
    c.epochs = 1;
    EXPECT_THROW(train(data, h, make_schedule(10), net, c, initial_train_state(net, c)), Error);
    EXPECT_THROW(train({}, h, make_schedule(10), net, c, initial_train_state(net, c)), Error);
}

TEST(Training, LogRoundTrip)
{
    const std::vector<EpochLog> log{{1, 12.5, 0.25}, {2, 3.0625, 0.5}};
    std::stringstream io;
    write_train_log(io, log, "config_hash=x");
    const auto back = read_train_log(io);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].epoch, 2);
    EXPECT_EQ(back[1].mean_loss, 3.0625);
    EXPECT_EQ(back[0].wall_seconds, 0.25);
}
