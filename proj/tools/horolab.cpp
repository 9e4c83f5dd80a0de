#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "horolab/io.hpp"
#include "horolab/pipeline.hpp"

int main(int argc, char** argv) {
    using namespace horolab;
    CLI::App app{"horolab: orbit balls, boundary measures, horocycle averages and cone counts"};
    app.require_subcommand(1, 1);
    std::string config_path, out_dir = "horolab-out";
    int workers = 0;
    bool no_cache = false, quiet = false;
    app.add_option("--config", config_path, "experiment config (JSON)")->required();
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--workers", workers, "OpenMP threads (0 keeps the config value)")->check(CLI::NonNegativeNumber);
    app.add_flag("--no-cache", no_cache, "ignore and do not write the artifact cache");
    app.add_flag("--quiet", quiet, "no progress on stderr");
    for (const auto& s : Pipeline::subcommands()) app.add_subcommand(s, "run the " + s + " stage");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    const std::string sub = app.get_subcommands().front()->get_name();

    try {
        RunConfig cfg = RunConfig::load(config_path);
        if (workers > 0) cfg.workers = workers;
        if (no_cache) cfg.cache = false;
        PipelineOptions opt;
        opt.out_dir = out_dir;
        opt.cache_dir = default_cache_dir();
        opt.quiet = quiet;
        Pipeline pipe(std::move(cfg), opt);
        pipe.run(sub);
    } catch (const ConfigError& e) {
        std::cerr << "horolab: " << e.what() << '\n';
        return 2;
    } catch (const BudgetExceeded& e) {
        std::cerr << "horolab: " << e.what() << " (partial artifacts kept)\n";
        return 4;
    } catch (const OrbitBudgetExceeded& e) {
        std::cerr << "horolab: " << e.what() << " (partial artifacts kept)\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "horolab: precondition failed: " << e.what() << '\n';
        return 3;
    } catch (const std::domain_error& e) {
        std::cerr << "horolab: precondition failed: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "horolab: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
