// Command-line front end: dataset simulation, sequential training, fit
// evaluation, street-level scoring, zone aggregation and reporting.

#include <filesystem>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "cvdcm/cvdcm.hpp"

namespace fs = std::filesystem;
using namespace cvdcm;

namespace {

struct CommonOpts {
    std::string manifest_path;
    std::string out_dir = "out";
    std::string model_path;
    std::uint64_t seed = 0;
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    bool no_residual = false;
    std::size_t min_zone_count = 5;
};

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--kappa1", cfg.kappa[0], "loss balance in phase 1")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--kappa2", cfg.kappa[1], "loss balance in phase 2")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--kappa3", cfg.kappa[2], "loss balance in phase 3")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--lr", cfg.learning_rate, "SGD learning rate");
    cmd->add_option("--batch", cfg.batch_size, "SGD batch size");
    cmd->add_option("--l2", cfg.l2_lambda, "L2 regularisation strength");
    cmd->add_option("--epochs", cfg.max_epochs[0], "max epochs per phase")
        ->each([&cfg](const std::string& v) {
            cfg.max_epochs = {std::stoi(v), std::stoi(v), std::stoi(v)};
        });
    cmd->add_option("--patience", cfg.patience, "early-stop patience (epochs)");
}

nlohmann::json config_json(const TrainConfig& cfg) {
    return {{"batch_size", cfg.batch_size},
            {"learning_rate", cfg.learning_rate},
            {"l2_lambda", cfg.l2_lambda},
            {"kappa", cfg.kappa},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"seed", cfg.rng_seed}};
}

Dataset load_dataset(const CommonOpts& opts) {
    require(!opts.manifest_path.empty(), "--manifest is required");
    Dataset d = Dataset::load(Manifest::load(opts.manifest_path));
    auto report = validate_dataset(d);
    for (const auto& issue : report.issues)
        std::cerr << "warning: " << issue.kind << ": " << issue.id << "\n";
    require(report.trainable_phase23, "dataset has images without embeddings");
    d.bind();
    return d;
}

ModelParams load_model_opt(const CommonOpts& opts) {
    require(!opts.model_path.empty(), "--model is required");
    return load_model(opts.model_path);
}

void emit(const nlohmann::json& summary) { std::cout << summary.dump() << "\n"; }

int cmd_simulate(const CommonOpts& opts, const SyntheticSpec& spec) {
    auto data = simulate_dataset(spec);
    write_synthetic_dataset(opts.out_dir, data, spec);
    emit({{"subcommand", "simulate"},
          {"out", opts.out_dir},
          {"n_observations", data.dataset.observations.size()},
          {"n_images", data.image_ids.size()},
          {"k", spec.k},
          {"seed", spec.rng_seed}});
    return 0;
}

int cmd_train(const CommonOpts& opts, TrainConfig cfg) {
    cfg.rng_seed = opts.seed;
    Dataset d = load_dataset(opts);
    require(d.has_labels(), "training requires semantic labels");
    auto report = validate_dataset(d);
    require(report.trainable_phase1, "phase 1 requires labels for every referenced image");

    auto outcome = train_sequential(d, cfg);
    fs::create_directories(opts.out_dir);
    save_model((fs::path(opts.out_dir) / "model.json").string(), outcome.params);
    csv::write_file((fs::path(opts.out_dir) / "fit_report.json").string(), fit_report_json(outcome.fit));
    csv::write_file((fs::path(opts.out_dir) / "fit_report.txt").string(), fit_report_text(outcome.fit));
    std::cerr << fit_report_text(outcome.fit);
    emit({{"subcommand", "train"},
          {"out", opts.out_dir},
          {"train_ll", outcome.fit.train.log_likelihood},
          {"train_rho2", outcome.fit.train.rho_squared},
          {"test_ll", outcome.fit.test.log_likelihood},
          {"test_rho2", outcome.fit.test.rho_squared},
          {"epochs", {outcome.phases[0].epochs_run, outcome.phases[1].epochs_run, outcome.phases[2].epochs_run}},
          {"config", config_json(cfg)}});
    return 0;
}

int cmd_eval(const CommonOpts& opts) {
    Dataset d = load_dataset(opts);
    ModelParams p = load_model_opt(opts);
    FitReport fit = compute_fit_report(p, d);
    std::cerr << fit_report_text(fit);
    nlohmann::json j = {{"subcommand", "eval"},
                        {"train", {{"n", fit.train.n},
                                   {"log_likelihood", fit.train.log_likelihood},
                                   {"rho_squared", fit.train.rho_squared},
                                   {"cross_entropy", fit.train.cross_entropy}}}};
    if (fit.has_test)
        j["test"] = {{"n", fit.test.n},
                     {"log_likelihood", fit.test.log_likelihood},
                     {"rho_squared", fit.test.rho_squared},
                     {"cross_entropy", fit.test.cross_entropy}};
    emit(j);
    return 0;
}

std::string image_scores_csv(const std::vector<ImageScore>& scores) {
    std::string s = "image_id,utility,v_semantic,v_residual";
    for (const auto& name : attribute_names()) s += ',' + name;
    s += '\n';
    for (const auto& sc : scores) {
        s += sc.image_id + ',' + fmt_double(sc.utility.v_total) + ',' + fmt_double(sc.utility.v_semantic) +
             ',' + fmt_double(sc.utility.v_residual);
        for (double a : sc.semantics.as_array()) s += ',' + fmt_double(a);
        s += '\n';
    }
    return s;
}

int cmd_score(const CommonOpts& opts) {
    Dataset d = load_dataset(opts);
    ModelParams p = load_model_opt(opts);
    auto scores = score_images(p, d.embeddings, !opts.no_residual, opts.threads);
    fs::create_directories(opts.out_dir);
    csv::write_file((fs::path(opts.out_dir) / "image_scores.csv").string(), image_scores_csv(scores));
    emit({{"subcommand", "score"}, {"out", opts.out_dir}, {"n_images", scores.size()}});
    return 0;
}

int cmd_aggregate(const CommonOpts& opts, const std::string& geojson_path, bool decompose_table) {
    Dataset d = load_dataset(opts);
    require(!d.zones.empty(), "aggregation requires a zone map in the manifest");
    ModelParams p = load_model_opt(opts);
    auto scores = score_images(p, d.embeddings, !opts.no_residual, opts.threads);
    auto agg = aggregate_zones(scores, d.zones, p, opts.min_zone_count);
    auto join = export_results(opts.out_dir, agg, geojson_path);

    if (decompose_table) {
        std::string table;
        for (const auto& z : agg.zones) {
            table += z.zone_id + " (n=" + std::to_string(z.image_count) +
                     ", deviation=" + fmt_double(z.total_deviation, 6) + ")\n";
            for (int t : deviation_order(z))
                table += "  " + attribute_names()[static_cast<std::size_t>(t)] + "  " +
                         fmt_double(z.delta[static_cast<std::size_t>(t)], 6) + "\n";
            table += "  residual  " + fmt_double(z.delta_residual, 6) + "\n";
        }
        csv::write_file((fs::path(opts.out_dir) / "decomposition.txt").string(), table);
    }
    std::size_t low_conf = 0;
    for (const auto& z : agg.zones)
        if (z.low_confidence) ++low_conf;
    emit({{"subcommand", decompose_table ? "decompose" : "aggregate"},
          {"out", opts.out_dir},
          {"n_zones", agg.zones.size()},
          {"n_unmapped", agg.unmapped_images.size()},
          {"n_low_confidence", low_conf},
          {"citywide_mean_utility", agg.citywide.mean_utility},
          {"zones_without_geometry", join.zones_without_geometry.size()}});
    return 0;
}

int cmd_report(const CommonOpts& opts) {
    Dataset d = load_dataset(opts);
    require(!d.zones.empty(), "report requires a zone map in the manifest");
    ModelParams p = load_model_opt(opts);
    auto scores = score_images(p, d.embeddings, !opts.no_residual, opts.threads);
    auto agg = aggregate_zones(scores, d.zones, p, opts.min_zone_count);
    auto stats = joint_distribution_stats(agg.zones);
    fs::create_directories(opts.out_dir);
    csv::write_file((fs::path(opts.out_dir) / "joint_distribution.csv").string(), joint_stats_to_csv(stats));
    std::size_t utility_var = stats.variables.size() - 1;
    emit({{"subcommand", "report"},
          {"out", opts.out_dir},
          {"n_zones", agg.zones.size()},
          {"utility_min", stats.min[utility_var]},
          {"utility_max", stats.max[utility_var]},
          {"utility_mean", stats.mean[utility_var]}});
    return 0;
}

// Finite-difference audit of the analytic gradient on random fixtures.
struct AuditResult {
    double max_rel_error = 0.0;
    int checks = 0;
};

double fd_rel_error(const ModelParams& p0, const Dataset& d, std::span<const std::size_t> batch,
                    double kappa, unsigned trainable, double* theta, double analytic, double h = 1e-6) {
    ModelParams p = p0;  // theta points into p0's storage; recompute offset in the copy
    std::ptrdiff_t off = -1;
    const double* base = nullptr;
    double* target = nullptr;
    auto locate = [&](const double* lo, const double* hi, double* copy_lo) {
        if (theta >= lo && theta < hi) {
            off = theta - lo;
            base = lo;
            target = copy_lo + off;
        }
    };
    locate(p0.beta_num.data(), p0.beta_num.data() + p0.beta_num.size(), p.beta_num.data());
    locate(p0.beta_sem.data(), p0.beta_sem.data() + p0.beta_sem.size(), p.beta_sem.data());
    locate(p0.head_weights.data(), p0.head_weights.data() + p0.head_weights.size(), p.head_weights.data());
    locate(p0.head_bias.data(), p0.head_bias.data() + p0.head_bias.size(), p.head_bias.data());
    locate(p0.beta_res.data(), p0.beta_res.data() + p0.beta_res.size(), p.beta_res.data());
    require(target != nullptr, "parameter not found");
    (void)base;
    (void)trainable;
    const double saved = *target;
    *target = saved + h;
    double up = combined_loss(p, d, batch, kappa);
    *target = saved - h;
    double down = combined_loss(p, d, batch, kappa);
    *target = saved;
    double fd = (up - down) / (2.0 * h);
    return std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-4});
}

AuditResult audit_gradients(int n_trials, std::uint64_t seed) {
    AuditResult res;
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 77);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);

    for (int trial = 0; trial < n_trials; ++trial) {
        SyntheticSpec spec;
        spec.k = 4 + static_cast<int>(rng() % 5);
        spec.n_observations = 3 + rng() % 6;
        spec.n_images = 6;
        spec.coverage_min = 0.6;
        spec.coverage_max = 1.0;
        spec.sigma_z = 0.3;
        spec.test_fraction = 0.0;
        spec.rng_seed = seed + static_cast<std::uint64_t>(trial) * 131;
        auto data = simulate_dataset(spec);

        ModelParams p = ModelParams::zeros(spec.k);
        for (double& w : p.beta_num) w = n01(rng);
        for (int t = 0; t < kNumAttributes; ++t)
            if (!p.fixed_sem[static_cast<std::size_t>(t)]) p.beta_sem[static_cast<std::size_t>(t)] = n01(rng);
        for (double& w : p.head_weights) w = 0.3 * n01(rng);
        for (double& w : p.head_bias) w = 0.3 * n01(rng);
        for (double& w : p.beta_res) w = 0.3 * n01(rng);

        double kappa = u01(rng);
        unsigned trainable = 1u + static_cast<unsigned>(rng() % 15);
        auto batch = all_indices(data.dataset);
        Gradient g = gradient(p, data.dataset, batch, kappa, trainable);

        auto check = [&](double* theta, double analytic) {
            double rel = fd_rel_error(p, data.dataset, batch, kappa, trainable, theta, analytic);
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.checks;
        };
        if (trainable & kGroupBetaNum)
            for (std::size_t i = 0; i < p.beta_num.size(); ++i) check(&p.beta_num[i], g.beta_num[i]);
        if (trainable & kGroupBetaSem)
            for (int t = 0; t < kNumAttributes; ++t) {
                const auto zt = static_cast<std::size_t>(t);
                if (!p.fixed_sem[zt]) check(&p.beta_sem[zt], g.beta_sem[zt]);
            }
        if (trainable & kGroupHead) {
            for (std::size_t i = 0; i < p.head_weights.size(); ++i) check(&p.head_weights[i], g.head_weights[i]);
            for (int t = 0; t < kNumTargets; ++t) {
                const auto zt = static_cast<std::size_t>(t);
                check(&p.head_bias[zt], g.head_bias[zt]);
            }
        }
        if (trainable & kGroupBetaRes)
            for (std::size_t i = 0; i < p.beta_res.size(); ++i) check(&p.beta_res[i], g.beta_res[i]);
    }
    return res;
}

int cmd_check_gradients(std::uint64_t seed, int trials) {
    auto res = audit_gradients(trials, seed);
    bool pass = res.max_rel_error < 1e-5;
    emit({{"subcommand", "check-gradients"},
          {"trials", trials},
          {"checks", res.checks},
          {"max_rel_error", res.max_rel_error},
          {"pass", pass}});
    return pass ? 0 : 2;
}

int cmd_recover(const CommonOpts& opts, SyntheticSpec spec, TrainConfig cfg) {
    spec.rng_seed = opts.seed;
    cfg.rng_seed = opts.seed;
    auto report = parameter_recovery_experiment(spec, cfg);

    nlohmann::json coeffs = nlohmann::json::array();
    for (const auto& c : report.coefficients)
        coeffs.push_back({{"name", c.name}, {"true", c.truth}, {"estimate", c.estimate}, {"abs_error", c.abs_error}});
    nlohmann::json j = {{"subcommand", "recover"},
                        {"n", spec.n_observations},
                        {"seed", spec.rng_seed},
                        {"max_abs_error", report.max_abs_error},
                        {"mean_abs_error", report.mean_abs_error},
                        {"bayes_ce_test", report.bayes_ce_test},
                        {"test_ce", report.fit.test.cross_entropy},
                        {"coefficients", coeffs},
                        {"config", config_json(cfg)}};
    fs::create_directories(opts.out_dir);
    std::ofstream out(fs::path(opts.out_dir) / "recovery.json");
    out << j.dump(2) << "\n";
    for (const auto& c : report.coefficients)
        std::cerr << c.name << ": true " << fmt_double(c.truth, 6) << " est " << fmt_double(c.estimate, 6)
                  << " |err| " << fmt_double(c.abs_error, 6) << "\n";
    emit(j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic choice-model estimation and street-level scoring"};
    app.require_subcommand(1);

    CommonOpts opts;
    TrainConfig cfg;
    SyntheticSpec spec;
    std::string geojson_path;
    int audit_trials = 100;
    std::string recover_default_note;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--manifest", opts.manifest_path, "dataset manifest path");
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--seed", opts.seed, "RNG seed");
        cmd->add_option("--threads", opts.threads, "scoring threads");
        cmd->add_option("--model", opts.model_path, "trained model.json");
        cmd->add_option("--min-zone-count", opts.min_zone_count, "flag zones below this image count");
        cmd->add_flag("--no-residual", opts.no_residual, "exclude the residual utility term from scoring");
    };

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset with known parameters");
    add_common(sim);
    sim->add_option("--n", spec.n_observations, "number of choice observations");
    sim->add_option("--images", spec.n_images, "number of images (default: n)");
    sim->add_option("--k", spec.k, "embedding dimension");
    sim->add_option("--zones", spec.n_zones, "number of zones (0 = no zone map)");
    sim->add_option("--sigma-z", spec.sigma_z, "embedding noise scale");
    sim->add_option("--alpha", spec.dirichlet_alpha, "Dirichlet concentration");
    sim->add_option("--coverage-min", spec.coverage_min, "min segmented share");
    sim->add_option("--coverage-max", spec.coverage_max, "max segmented share");
    sim->add_option("--test-fraction", spec.test_fraction, "test split fraction");
    bool gumbel = false;
    sim->add_flag("--gumbel", gumbel, "sample choices via Gumbel-argmax instead of logit probabilities");

    auto* train = app.add_subcommand("train", "three-phase sequential training");
    add_common(train);
    add_train_flags(train, cfg);

    auto* eval = app.add_subcommand("eval", "fit table for a trained model");
    add_common(eval);

    auto* score = app.add_subcommand("score", "street-level utility per image");
    add_common(score);

    auto* aggregate = app.add_subcommand("aggregate", "zone-level aggregation of image scores");
    add_common(aggregate);
    aggregate->add_option("--geojson", geojson_path, "zone geometry to join (feature property zone_id)");

    auto* decompose = app.add_subcommand("decompose", "per-attribute deviation decomposition by zone");
    add_common(decompose);
    decompose->add_option("--geojson", geojson_path, "zone geometry to join");

    auto* report = app.add_subcommand("report", "joint-distribution statistics over zones");
    add_common(report);

    auto* check = app.add_subcommand("check-gradients", "finite-difference gradient audit");
    check->add_option("--seed", opts.seed, "RNG seed");
    check->add_option("--trials", audit_trials, "number of random fixtures");

    auto* recover = app.add_subcommand("recover", "end-to-end parameter recovery experiment");
    add_common(recover);
    recover->add_option("--n", spec.n_observations, "number of observations");
    recover->add_option("--k", spec.k, "embedding dimension");
    recover->add_option("--sigma-z", spec.sigma_z, "embedding noise scale");
    recover->add_option("--alpha", spec.dirichlet_alpha, "Dirichlet concentration");
    // Recovery defaults favour estimator accuracy over the survey-scale
    // hyperparameters: no shrinkage, a small learning rate (SGD's stationary
    // noise scales with it), and a long phase 2 so the weakly identified
    // common shift against the reference class fully converges. The sparse
    // mixture (low alpha) and high coverage maximise the Fisher information
    // of the share coefficients.
    TrainConfig recover_cfg;
    recover_cfg.l2_lambda = 0.0;
    recover_cfg.batch_size = 10;
    recover_cfg.learning_rate = 1e-3;
    recover_cfg.max_epochs = {60, 500, 20};
    recover_cfg.patience = 100000;
    SyntheticSpec recover_spec;
    recover_spec.n_observations = 50000;
    recover_spec.dirichlet_alpha = 0.012;
    recover_spec.coverage_min = 0.54;
    recover_spec.coverage_max = 1.0;
    recover_spec.poisson_mean = 0.8;
    recover_spec.sigma_z = 0.0;
    recover_spec.test_fraction = 0.1;
    add_train_flags(recover, recover_cfg);

    try {
        app.parse(argc, argv);
        if (gumbel) spec.choice_mode = SyntheticSpec::ChoiceMode::gumbel_argmax;
        spec.rng_seed = opts.seed;
        cfg.rng_seed = opts.seed;
        if (sim->parsed()) return cmd_simulate(opts, spec);
        if (train->parsed()) return cmd_train(opts, cfg);
        if (eval->parsed()) return cmd_eval(opts);
        if (score->parsed()) return cmd_score(opts);
        if (aggregate->parsed()) return cmd_aggregate(opts, geojson_path, false);
        if (decompose->parsed()) return cmd_aggregate(opts, geojson_path, true);
        if (report->parsed()) return cmd_report(opts);
        if (check->parsed()) return cmd_check_gradients(opts.seed, audit_trials);
        if (recover->parsed()) {
            recover_spec.n_observations = spec.n_observations != 1000 ? spec.n_observations : recover_spec.n_observations;
            recover_spec.k = spec.k;
            recover_spec.sigma_z = spec.sigma_z;
            if (spec.dirichlet_alpha != 2.0) recover_spec.dirichlet_alpha = spec.dirichlet_alpha;
            return cmd_recover(opts, recover_spec, recover_cfg);
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
