// rhomix: rho-estimation for finite mixture models.
// Subcommands: fit, select-k, select-family, study.
// Exit codes: 0 success, 2 search failure, 3 configuration error,
// 4 study acceptance bands failed.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rhomix/fit.hpp"
#include "rhomix/selection.hpp"
#include "rhomix/studies.hpp"

using json = nlohmann::json;
using namespace rhomix;

namespace {

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<double> read_data_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw CliError("cannot open data file: " + path);
    std::vector<double> out;
    std::string line;
    while (std::getline(f, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream is(line);
        double v;
        if (is >> v) out.push_back(v);
    }
    if (out.empty()) throw CliError("data file contains no observations: " + path);
    return out;
}

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("RHOMIX_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 0;  // library default: hardware concurrency
}

std::vector<std::size_t> parse_n_grid(const std::string& csv) {
    std::vector<std::size_t> out;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(static_cast<std::size_t>(std::stoull(tok)));
    return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream is(csv);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

void write_file(const std::filesystem::path& p, const std::string& s) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw CliError("cannot write " + p.string());
    f << s;
}

json candidate_json(const MixtureCandidate& c) {
    json j;
    j["line"] = candidate_to_line(c);
    j["weights"] = c.weights.w;
    json comps = json::array();
    for (const auto& comp : c.components) {
        comps.push_back({{"family", spec_token(comp.spec)},
                         {"location", comp.params.location},
                         {"scale", comp.params.scale}});
    }
    j["components"] = comps;
    return j;
}

struct CommonArgs {
    std::string config_path;
    std::string data_path;
    std::string generate_truth;  // candidate line
    std::size_t generate_n = 0;
    std::uint64_t seed = 1;
    int threads = 0;
    std::string out_dir = ".";
};

std::vector<double> load_observations(const CommonArgs& a) {
    bool has_data = !a.data_path.empty();
    bool has_gen = !a.generate_truth.empty();
    if (has_data == has_gen)
        throw CliError("exactly one of --data and a generator spec must be given");
    if (has_data) return read_data_file(a.data_path);
    if (a.generate_n == 0) throw CliError("generator spec requires n >= 1");
    std::size_t k = 1 + static_cast<std::size_t>(
                            std::count(a.generate_truth.begin(), a.generate_truth.end(), ' ')) / 4;
    auto truth = candidate_from_line(a.generate_truth, k);
    RngStream rng(a.seed ^ 0x9e3779b9ULL);
    return sample_mixture(truth, a.generate_n, rng);
}

void apply_config_file(const std::string& path, CommonArgs& args, json& extra) {
    if (path.empty()) return;
    std::ifstream f(path);
    if (!f) throw CliError("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw CliError(std::string("config parse error: ") + e.what());
    }
    if (j.contains("data")) args.data_path = j["data"].get<std::string>();
    if (j.contains("generate")) {
        args.generate_truth = j["generate"].value("truth_line", "");
        args.generate_n = j["generate"].value("n", std::size_t{0});
    }
    if (j.contains("seed")) args.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("threads")) args.threads = j["threads"].get<int>();
    if (j.contains("out")) args.out_dir = j["out"].get<std::string>();
    extra = j;
}

void fill_estimator(const json& j, EstimatorSettings& est) {
    if (j.contains("locations")) est.locations = j["locations"].get<std::size_t>();
    if (j.contains("scales")) est.scales = j["scales"].get<std::size_t>();
    if (j.contains("weight_denominator"))
        est.weight_denominator = j["weight_denominator"].get<std::int64_t>();
    if (j.contains("delta")) est.delta_override = j["delta"].get<double>();
    if (j.contains("rounds")) est.rounds_override = j["rounds"].get<int>();
    if (j.contains("sweeps")) est.fit.sweeps = j["sweeps"].get<int>();
    if (j.contains("budget")) est.fit.explicit_budget = j["budget"].get<std::size_t>();
}

int cmd_fit(const CommonArgs& args, std::size_t K, const std::string& family_token, double delta,
            std::size_t locations, std::size_t scales, std::int64_t weight_den,
            const std::string& mode, std::size_t budget) {
    auto x = load_observations(args);
    auto family = spec_from_token(family_token);
    if (delta > 0.0 && delta > 1.0 / static_cast<double>(K) + 1e-12)
        throw CliError("delta must lie in (0, 1/K]: got delta=" + std::to_string(delta) +
                       " with K=" + std::to_string(K));
    double v_bar = static_cast<double>(K * vc_index_bound(family));
    double d = delta > 0.0 ? delta : delta_default(K, v_bar, x.size());

    FactoredModel model;
    model.descriptor = ModelDescriptor::make(std::vector<EmissionSpec>(K, family), d);
    auto net = build_net_robust(family, x, locations, scales);
    model.nets.assign(K, net);
    std::int64_t N = weight_den > 0 ? weight_den : auto_weight_denominator(K, d, x.size());
    model.weight_grid = enumerate_weight_grid(K, N, d);
    model.weight_denominator = N;
    if (model.weight_grid.empty()) throw CliError("delta floor leaves the weight grid empty");

    auto t0 = std::chrono::steady_clock::now();
    json rep;
    if (mode == "exhaustive") {
        std::vector<CandidateSet> sets{assemble_candidates(model.descriptor, model.nets,
                                                           model.weight_grid, budget * 8, true)};
        SearchConfig cfg;
        cfg.mode = SearchMode::Exhaustive;
        auto fit = rho_estimate(x, sets, {}, cfg);
        rep["chosen"] = candidate_json(canonicalize(fit.chosen));
        rep["upsilon"] = fit.upsilon;
        rep["search_mode"] = "exhaustive";
        rep["candidates"] = fit.n_candidates;
        rep["rows_evaluated"] = fit.rows_evaluated;
    } else {
        FitOptions opt;
        opt.explicit_budget = budget;
        opt.seed = args.seed;
        RngStream rng(args.seed);
        auto fit = fit_factored(x, std::move(model), 0.0, opt, rng);
        rep["chosen"] = candidate_json(fit.chosen);
        rep["upsilon"] = fit.upsilon;
        rep["search_mode"] = "heuristic";
        rep["trials"] = fit.trials;
    }
    rep["n"] = x.size();
    rep["delta"] = d;
    rep["descriptor"] = model.descriptor.label();
    rep["runtime_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_file(std::filesystem::path(args.out_dir) / "fit_report.json", rep.dump(2) + "\n");
    std::cout << rep["chosen"]["line"].get<std::string>() << "\n";
    return 0;
}

int cmd_select_k(const CommonArgs& args, std::size_t k_lo, std::size_t k_hi,
                 const std::string& family_token, double kappa, const std::string& penalty_mode,
                 std::size_t locations, std::size_t scales) {
    auto x = load_observations(args);
    SelectionOptions opt;
    opt.locations = locations;
    opt.scales = scales;
    opt.kappa = kappa;
    opt.penalty = penalty_mode == "null" ? PenaltyMode::Null : PenaltyMode::Formula;
    RngStream rng(args.seed);
    auto rep = select_order(x, k_lo, k_hi, spec_from_token(family_token), opt, rng);

    json j;
    j["K_hat"] = rep.K_hat;
    j["chosen"] = candidate_json(rep.chosen);
    j["upsilon"] = rep.upsilon;
    json table = json::array();
    for (std::size_t m = 0; m < rep.model_labels.size(); ++m)
        table.push_back({{"model", rep.model_labels[m]},
                         {"best_upsilon", rep.model_upsilon[m]},
                         {"penalty", rep.model_penalty[m]}});
    j["models"] = table;
    write_file(std::filesystem::path(args.out_dir) / "selection_report.json", j.dump(2) + "\n");
    std::cout << "K_hat=" << rep.K_hat << "\n";
    return 0;
}

int cmd_select_family(const CommonArgs& args, std::size_t K, std::size_t locations,
                      std::size_t scales) {
    auto x = load_observations(args);
    SelectionOptions opt;
    opt.locations = locations;
    opt.scales = scales;
    opt.penalty = PenaltyMode::Null;
    RngStream rng(args.seed);
    auto rep = select_emission_families(x, K, opt, rng);

    json j;
    j["j_hat"] = rep.j_hat;
    j["chosen"] = candidate_json(rep.chosen);
    j["upsilon"] = rep.upsilon;
    json table = json::array();
    for (std::size_t m = 0; m < rep.model_labels.size(); ++m)
        table.push_back({{"model", rep.model_labels[m]}, {"best_upsilon", rep.model_upsilon[m]}});
    j["models"] = table;
    write_file(std::filesystem::path(args.out_dir) / "family_report.json", j.dump(2) + "\n");
    std::cout << "j_hat=" << rep.j_hat << "\n";
    return 0;
}

StudyConfig study_preset(const std::string& kind, const std::string& preset) {
    StudyConfig cfg;
    cfg.kind = kind;
    bool smoke = preset != "full";
    if (kind == "rate-gmm") {
        cfg.n_grid = smoke ? std::vector<std::size_t>{250, 500, 1000, 2000}
                           : std::vector<std::size_t>{250, 500, 1000, 2000, 4000, 8000, 16000};
        cfg.replications = smoke ? 5 : 50;
    } else if (kind == "contamination") {
        cfg.n_grid = {smoke ? std::size_t{800} : std::size_t{4000}};
        cfg.replications = smoke ? 5 : 40;
    } else if (kind == "param-gmm" || kind == "param-known") {
        cfg.n_grid = smoke ? std::vector<std::size_t>{250, 500, 1000, 2000}
                           : std::vector<std::size_t>{250, 500, 1000, 2000, 4000, 8000, 16000};
        cfg.replications = smoke ? 5 : 50;
        cfg.slope_lo = -1.2;
        cfg.slope_hi = -0.75;
    } else if (kind == "spike") {
        cfg.n_grid = smoke ? std::vector<std::size_t>{2000, 4000}
                           : std::vector<std::size_t>{2000, 4000, 8000, 16000};
        cfg.replications = smoke ? 9 : 41;
        cfg.slope_lo = -2.5;
        cfg.slope_hi = -1.5;
    } else if (kind == "continuous") {
        cfg.n_grid = smoke ? std::vector<std::size_t>{400, 1600}
                           : std::vector<std::size_t>{1000, 4000, 16000};
        cfg.replications = smoke ? 3 : 10;
        cfg.cont_A = 1.0;
        cfg.cont_R = smoke ? 1.2 : 1.5;
    } else if (kind == "order-gmm") {
        cfg.n_grid = {smoke ? std::size_t{500} : std::size_t{2000}};
        cfg.replications = smoke ? 10 : 100;
        cfg.target_K = 1;
    } else if (kind == "family-gc") {
        cfg.n_grid = {smoke ? std::size_t{600} : std::size_t{5000}};
        cfg.replications = smoke ? 10 : 100;
        cfg.target_j = 1;
        cfg.freq_min = 0.8;
    } else {
        throw CliError("unknown study kind: " + kind);
    }
    return cfg;
}

int cmd_study(const CommonArgs& args, const json& cfg_json, const std::string& kind,
              const std::string& preset, const std::string& n_grid_csv, int reps, double alpha,
              const std::string& eps_csv) {
    StudyConfig cfg = study_preset(kind, preset);
    cfg.master_seed = args.seed;
    cfg.threads = resolve_threads(args.threads);
    if (!n_grid_csv.empty()) cfg.n_grid = parse_n_grid(n_grid_csv);
    if (reps > 0) cfg.replications = reps;
    if (alpha > 0.0) {
        if (!(alpha < 1.0)) throw CliError("spike alpha must lie in (0,1)");
        cfg.spike_alpha = alpha;
        if (std::abs(alpha - 0.25) < 1e-9) {
            cfg.slope_lo = -1.73;
            cfg.slope_hi = -0.93;
        }
    }
    if (!eps_csv.empty()) cfg.eps_grid = parse_double_list(eps_csv);
    if (cfg_json.contains("study")) {
        const auto& js = cfg_json["study"];
        if (js.contains("truth_line")) {
            std::string line = js["truth_line"].get<std::string>();
            std::size_t k = js.value("truth_K", std::size_t{2});
            cfg.truth = candidate_from_line(line, k);
        }
        if (js.contains("replications")) cfg.replications = js["replications"].get<int>();
        if (js.contains("kappa")) cfg.select_kappa = js["kappa"].get<double>();
        if (js.contains("estimator")) fill_estimator(js["estimator"], cfg.est);
    }

    auto result = run_study(cfg);
    write_study_outputs(result, std::filesystem::path(args.out_dir));
    for (const auto& chk : result.checks)
        std::cout << (chk.pass ? "PASS " : "FAIL ") << chk.name << " (" << chk.detail << ")\n";
    return result.pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rho-estimation for finite mixture models"};
    app.require_subcommand(1);

    CommonArgs args;
    app.add_option("--config", args.config_path, "JSON config file");
    app.add_option("--seed", args.seed, "master seed");
    app.add_option("--threads", args.threads, "worker threads (env RHOMIX_THREADS as fallback)");
    app.add_option("--out", args.out_dir, "output directory");

    // fit
    auto* fit = app.add_subcommand("fit", "fit a mixture by rho-estimation");
    std::size_t K = 1;
    std::string family = "gaussian";
    double delta = -1.0;
    std::size_t locations = 15, scales = 5, budget = 20000;
    std::int64_t weight_den = 0;
    std::string mode = "auto";
    fit->add_option("--data", args.data_path, "data file, one observation per line");
    fit->add_option("--generate", args.generate_truth, "generator: candidate line");
    fit->add_option("--generate-n", args.generate_n, "generator sample size");
    fit->add_option("--K", K, "number of mixture components");
    fit->add_option("--family", family, "emission family token");
    fit->add_option("--delta", delta, "weight floor override in (0, 1/K]");
    fit->add_option("--locations", locations, "net locations per component");
    fit->add_option("--scales", scales, "net scales per component");
    fit->add_option("--weight-denominator", weight_den, "weight grid denominator");
    fit->add_option("--mode", mode, "auto | exhaustive | heuristic");
    fit->add_option("--budget", budget, "explicit search budget (candidates)");

    // select-k
    auto* selk = app.add_subcommand("select-k", "select the number of components");
    std::size_t k_lo = 1, k_hi = 3;
    double kappa = 0.01;
    std::string penalty_mode = "formula";
    selk->add_option("--data", args.data_path, "data file");
    selk->add_option("--generate", args.generate_truth, "generator: candidate line");
    selk->add_option("--generate-n", args.generate_n, "generator sample size");
    selk->add_option("--kmin", k_lo, "smallest K");
    selk->add_option("--kmax", k_hi, "largest K");
    selk->add_option("--family", family, "emission family token");
    selk->add_option("--kappa", kappa, "penalty multiplier");
    selk->add_option("--penalty", penalty_mode, "formula | null");
    selk->add_option("--locations", locations, "net locations per component");
    selk->add_option("--scales", scales, "net scales per component");

    // select-family
    auto*self = app.add_subcommand("select-family", "choose gaussian vs cauchy emissions");
    std::size_t fam_K = 2;
    self->add_option("--data", args.data_path, "data file");
    self->add_option("--generate", args.generate_truth, "generator: candidate line");
    self->add_option("--generate-n", args.generate_n, "generator sample size");
    self->add_option("--K", fam_K, "number of components");
    self->add_option("--locations", locations, "net locations per component");
    self->add_option("--scales", scales, "net scales per component");

    // study
    auto* study = app.add_subcommand("study", "run a simulation study");
    std::string kind = "rate-gmm", preset = "smoke", n_grid_csv, eps_csv;
    int reps = 0;
    double alpha = -1.0;
    study->add_option("--kind", kind,
                      "rate-gmm | contamination | param-gmm | param-known | spike | continuous | "
                      "order-gmm | family-gc");
    study->add_option("--preset", preset, "smoke | full");
    study->add_option("--n-grid", n_grid_csv, "comma-separated n grid");
    study->add_option("--reps", reps, "replications per cell");
    study->add_option("--alpha", alpha, "spike exponent in (0,1)");
    study->add_option("--eps-grid", eps_csv, "contamination eps grid");

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg_json;
        apply_config_file(args.config_path, args, cfg_json);
        if (fit->parsed())
            return cmd_fit(args, K, family, delta, locations, scales, weight_den, mode, budget);
        if (selk->parsed())
            return cmd_select_k(args, k_lo, k_hi, family, kappa, penalty_mode, locations, scales);
        if (self->parsed()) return cmd_select_family(args, fam_K, locations, scales);
        if (study->parsed())
            return cmd_study(args, cfg_json, kind, preset, n_grid_csv, reps, alpha, eps_csv);
    } catch (const SearchError& e) {
        std::cerr << "search error: " << e.what() << "\n";
        return 2;
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const StudyError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
