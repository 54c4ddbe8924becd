// skillnet command line: run, sweep, compare, export-hierarchy, emit-plots.
// Exit codes: 0 success, 1 configuration or usage error, 2 run failure.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skillnet/skillnet.hpp"

namespace {

using namespace skillnet;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRunFailure = 2;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// "S=2,4,8" or "2,4,8"
std::vector<std::size_t> parse_grid(const std::string& spec) {
    std::string values = spec;
    if (auto eq = spec.find('='); eq != std::string::npos) {
        const std::string axis = spec.substr(0, eq);
        if (axis != "S" && axis != "num_skills") throw ConfigError("sweep_grid", "only the S axis can be swept");
        values = spec.substr(eq + 1);
    }
    std::vector<std::size_t> grid;
    for (const auto& v : split(values, ',')) {
        try {
            std::size_t used = 0;
            const long long n = std::stoll(v, &used);
            if (used != v.size() || n < 1) throw std::invalid_argument(v);
            grid.push_back(static_cast<std::size_t>(n));
        } catch (const std::exception&) {
            throw ConfigError("sweep_grid", "'" + v + "' is not a positive integer");
        }
    }
    if (grid.empty()) throw ConfigError("sweep_grid", "empty grid");
    return grid;
}

void report(const RunRecord& r) {
    if (r.ok) {
        std::cout << (r.reused ? "reused " : "ok ") << r.dir.string() << "\n";
    } else {
        std::cerr << "failed " << r.dir.string() << ": " << r.error << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-skill multitask experiments on planted synthetic worlds"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> output_root;
    bool reuse = false;

    auto* run = app.add_subcommand("run", "Train, adapt and score one configuration");
    run->add_option("config", config_path, "Configuration JSON")->required();
    run->add_option("--output-root", output_root, "Directory that receives run-<hash>/ (overrides " +
                                                      std::string(kOutputRootEnv) + ")");
    run->add_flag("--reuse", reuse, "Keep an existing successful run with the same configuration");

    std::string grid_spec;
    auto* sweep = app.add_subcommand("sweep", "One run per inventory size");
    sweep->add_option("config", config_path, "Configuration JSON")->required();
    sweep->add_option("--grid", grid_spec, "Grid, e.g. S=2,4,8,16,32 (default: sweep_grid of the config)");
    sweep->add_option("--output-root", output_root, "Output root");
    sweep->add_flag("--reuse", reuse, "Reuse finished runs");

    std::string kinds_spec = "skilled,shared,private,expert,hypernet";
    auto* compare = app.add_subcommand("compare", "One run per model kind on the same world");
    compare->add_option("config", config_path, "Configuration JSON")->required();
    compare->add_option("--kinds", kinds_spec, "Comma-separated model kinds")->capture_default_str();
    compare->add_option("--output-root", output_root, "Output root");
    compare->add_flag("--reuse", reuse, "Reuse finished runs");

    std::string allocation_path;
    std::optional<std::string> hierarchy_out;
    auto* hierarchy = app.add_subcommand("export-hierarchy", "Group tasks by identical skill subsets");
    hierarchy->add_option("allocation", allocation_path, "allocation_layer_<l>.json")->required();
    hierarchy->add_option("--out", hierarchy_out, "Write <out>.json and <out>.txt instead of printing");

    std::vector<std::string> run_dirs;
    std::string plots_out = "plots";
    auto* plots = app.add_subcommand("emit-plots", "Tidy CSV for learning curves and sweep statistics");
    plots->add_option("run_dirs", run_dirs, "Run directories")->required();
    plots->add_option("--out", plots_out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*run || *sweep || *compare) {
            const ExperimentConfig config = parse_config(config_path);
            RunOptions options{resolve_output_root(config, output_root), reuse};
            if (*run) {
                const RunRecord r = run_experiment(config, options);
                report(r);
                return r.ok ? kOk : kRunFailure;
            }
            BatchResult result;
            if (*sweep) {
                result = run_sweep(config, grid_spec.empty() ? config.sweep_grid : parse_grid(grid_spec), options);
            } else {
                std::vector<ModelKind> kinds;
                for (const auto& k : split(kinds_spec, ',')) {
                    try {
                        kinds.push_back(model_kind_from_string(k));
                    } catch (const LookupError& e) {
                        throw ConfigError("model_kind", e.what());
                    }
                }
                result = run_compare(config, kinds, options);
            }
            for (const auto& r : result.records) report(r);
            std::cout << "table " << result.table_path.string() << "\n";
            return result.all_ok ? kOk : kRunFailure;
        }
        if (*hierarchy) {
            const Json doc = Json::parse(csv::read_file(allocation_path));
            const AllocationDoc alloc = allocation_from_json(doc);
            const auto groups = group_tasks(alloc.hardened, alloc.tasks);
            if (hierarchy_out) {
                csv::write_file(*hierarchy_out + ".json", hierarchy_json(groups).dump(2) + "\n");
                csv::write_file(*hierarchy_out + ".txt", render_hierarchy(groups));
            } else {
                std::cout << hierarchy_json(groups).dump(2) << "\n" << render_hierarchy(groups);
            }
            return kOk;
        }
        if (*plots) {
            std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
            const PlotData data = emit_plot_data(dirs, plots_out);
            std::cout << "curves " << data.curves.rows.size() << " rows, sweep " << data.sweep.rows.size()
                      << " rows -> " << plots_out << "\n";
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kConfigError;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "malformed document: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRunFailure;
    }
    return kOk;
}
