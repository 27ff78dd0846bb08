#include "graphdps/pipeline.hpp"
#include "graphdps/validation.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>

using namespace graphdps;

namespace {

struct Invocation {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

RunConfig resolve(const Invocation& inv, const std::map<std::string, CLI::Option*>& options)
{
    RunConfig c = inv.config_path.empty() ? RunConfig{} : load_run_config(inv.config_path);
    for (const auto& [key, opt] : options) {
        if (opt->count() > 0) {
            c.set(key, inv.overrides.at(key));
        }
    }
    c.validate();
    return c;
}

void begin(const RunConfig& c, const std::string& command)
{
    std::filesystem::create_directories(c.output_dir());
    save_resolved_config(c, c.output_dir() / (command + ".config"));
    std::cout << command << ": " << c.header() << ", output " << c.output << '\n';
}

void cmd_mesh(const RunConfig& c)
{
    const RunSetup s = build_setup(c);
    write_meshes(c, s);
    std::cout << "coarse mesh " << s.coarse_mesh.vertex_count() << " vertices, fine mesh " << s.fine_mesh.vertex_count()
              << " vertices, " << c.electrodes << " electrodes, " << s.protocol.measurement_count() << " measurements\n";
}

void cmd_gen(const RunConfig& c)
{
    const RunSetup s = build_setup(c);
    write_meshes(c, s);
    generate_datasets(c, s);
    std::cout << "wrote " << c.dataset.count << " training and " << c.test_count << " test samples\n";
}

void cmd_train(const RunConfig& c)
{
    const RunSetup s = build_setup(c);
    const int every = std::max(1, c.train.epochs / 20);
    const TrainState state = run_training(c, s, [&](const EpochLog& e) {
        if (e.epoch % every == 0 || e.epoch == c.train.epochs) {
            std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " wall " << std::fixed
                      << std::setprecision(1) << e.wall_seconds << std::defaultfloat << std::setprecision(6) << " s\n"
                      << std::flush;
        }
    });
    std::cout << "checkpoint " << c.checkpoint_dir().string() << " after " << state.epochs_done << " epochs";
    if (state.best_epoch > 0) {
        std::cout << ", best probe loss " << state.best_probe_loss << " at epoch " << state.best_epoch;
    }
    std::cout << '\n';
}

void cmd_sample(const RunConfig& c)
{
    const RunSetup s = build_setup(c);
    const ScoreNetParams params = load_trained_params(c);
    const EpsModel model = network_model(s.hierarchy, params, c.net);
    const NoiseSchedule schedule = run_schedule(c);
    for (int k = 0; k < c.sample_count; ++k) {
        const NodeField x = sample_unconditional(model, s.coarse_mesh.vertex_count(), schedule,
                                                 {c.sampler, sampling_seed(c, k), c.guidance.eps_floor});
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d.field", k);
        save_field(c.output_dir() / "samples" / name, x, c.header());
    }
    std::cout << "wrote " << c.sample_count << " samples to " << (c.output_dir() / "samples").string() << '\n';
}

void cmd_reconstruct(const RunConfig& c)
{
    if (c.measurement.empty()) {
        throw Error("config", "reconstruct needs 'measurement'");
    }
    const RunSetup s = build_setup(c);
    const ScoreNetParams params = load_trained_params(c);
    const ScoreModel model = network_score_model(s.hierarchy, params, c.net);
    const MeasurementSet y = noisy_measurements(c, load_measurements(c.measurement), 0);
    const ReconResult r =
        rdps_reconstruct(y, model, run_schedule(c), s.context(), rdps_options(c, c.sampler, c.regularizer.kind, 0));
    const auto dir = c.output_dir() / "recon";
    save_field(dir / "x0.field", r.x0_star, c.header());
    save_run_log(dir / "run_log.csv", r.history, c.header());
    std::cout << "wrote " << (dir / "x0.field").string() << '\n';
    if (!c.truth.empty()) {
        EvaluationRow row = evaluate(load_field(c.truth), r.x0_star, s.hierarchy.levels.front());
        row.sample_id = std::filesystem::path(c.measurement).stem().string();
        row.sampler = std::string(to_string(c.sampler));
        row.regularizer = std::string(to_string(c.regularizer.kind));
        row.noise = noise_label(c);
        save_evaluation_csv(dir / "metrics.csv", {row}, c.header());
        std::cout << "rmse " << row.rmse << " rel_err " << row.rel_err << " ssim " << row.ssim << '\n';
    }
}

void cmd_bench(const RunConfig& c)
{
    const RunSetup s = build_setup(c);
    const ScoreNetParams params = load_trained_params(c);
    const Dataset test = load_dataset(test_dir(c));
    const std::vector<BenchTask> tasks = bench_tasks(c, static_cast<int>(test.fields.size()));
    const std::vector<EvaluationRow> rows = run_bench(c, s, params, test, tasks);
    save_evaluation_csv(c.output_dir() / "bench.csv", rows, c.header());
    struct Mean {
        double rmse = 0.0, rel_err = 0.0, ssim = 0.0;
        int n = 0;
    };
    std::map<std::pair<std::string, std::string>, Mean> means;
    for (const auto& r : rows) {
        Mean& m = means[{r.sampler, r.regularizer}];
        m.rmse += r.rmse;
        m.rel_err += r.rel_err;
        m.ssim += r.ssim;
        ++m.n;
    }
    std::cout << "sampler,regularizer,samples,mean_rmse,mean_rel_err,mean_ssim\n";
    for (const auto& [key, m] : means) {
        std::cout << key.first << ',' << key.second << ',' << m.n << ',' << m.rmse / m.n << ',' << m.rel_err / m.n
                  << ',' << m.ssim / m.n << '\n';
    }
}

int cmd_validate()
{
    int failed = 0;
    for (const CheckResult& r : run_oracle_suite()) {
        std::cout << format_check(r) << '\n' << std::flush;
        failed += r.passed ? 0 : 1;
    }
    if (failed > 0) {
        throw Error("validation", std::to_string(failed) + " oracle checks failed");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Regularized diffusion posterior sampling for EIT on graph meshes"};
    app.require_subcommand(1);
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"mesh", "build and save the simulation and inversion meshes"},
        {"gen", "generate the training and held-out datasets"},
        {"train", "train the score network"},
        {"sample", "unconditional samples from the trained prior"},
        {"reconstruct", "reconstruct a conductivity from a measurement file"},
        {"bench", "batch reconstruction of the held-out set with metrics"},
        {"validate", "run the oracle checks"},
    };
    std::map<std::string, Invocation> invocations;
    std::map<std::string, std::map<std::string, CLI::Option*>> options;
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        if (name == "validate") {
            continue;
        }
        Invocation& inv = invocations[name];
        sub->add_option("-c,--config", inv.config_path, "key = value config file")->check(CLI::ExistingFile);
        for (const std::string& key : run_config_keys()) {
            options[name][key] = sub->add_option("--" + key, inv.overrides[key], "override '" + key + "'");
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cout << std::flush;
        std::cerr << "ERROR usage " << e.what() << '\n';
        return 2;
    }
    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "validate") {
            return cmd_validate();
        }
        const RunConfig c = resolve(invocations.at(name), options.at(name));
        begin(c, name);
        if (name == "mesh") {
            cmd_mesh(c);
        } else if (name == "gen") {
            cmd_gen(c);
        } else if (name == "train") {
            cmd_train(c);
        } else if (name == "sample") {
            cmd_sample(c);
        } else if (name == "reconstruct") {
            cmd_reconstruct(c);
        } else {
            cmd_bench(c);
        }
        return 0;
    } catch (const Error& e) {
        std::cout << std::flush;
        std::cerr << "ERROR " << e.category() << ' ' << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cout << std::flush;
        std::cerr << "ERROR internal " << e.what() << '\n';
        return 1;
    }
}
