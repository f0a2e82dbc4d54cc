#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "explora/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Content-based recommendation experiments with adaptive online clustering"};
    // long-only help; the short -h would collide with the --h window flag
    app.set_help_flag("--help", "Print this help message and exit");

    std::string config_path;
    std::string seed, items, users, k, h, source, judge, out, dataset, movies, ratings, threads;
    app.add_option("--config", config_path, "Config file (key = value lines, '#' comments)");
    app.add_option("--seed", seed, "Experiment seed (unsigned integer)");
    app.add_option("--items", items, "Catalog subset size");
    app.add_option("--users", users, "Number of simulated users");
    app.add_option("--k", k, "Recommendation list sizes, comma separated (e.g. 5,10)");
    app.add_option("--h", h, "Engagement window sizes, comma separated (e.g. 10,50)");
    app.add_option("--embedding-source", source,
                   "'test', 'file:<path>', or an http:// embedding endpoint");
    app.add_option("--judge", judge, "'stub' or an http:// chat-completion endpoint");
    app.add_option("--out", out, "Output directory for the report files");
    app.add_option("--dataset", dataset, "'synthetic' or 'movielens'");
    app.add_option("--movies", movies, "MovieLens movies.csv path");
    app.add_option("--ratings", ratings, "MovieLens ratings.csv path");
    app.add_option("--threads", threads, "Worker threads for the per-user stage (0 = auto)");

    CLI11_PARSE(app, argc, argv);

    std::vector<std::pair<std::string, std::string>> overrides;
    const auto push = [&](const char* flag, const char* key, const std::string& value) {
        if (app.count(flag)) overrides.emplace_back(key, value);
    };
    push("--seed", "seed", seed);
    push("--items", "n_items", items);
    push("--users", "n_users", users);
    push("--k", "k", k);
    push("--h", "h", h);
    push("--embedding-source", "embedding_source", source);
    push("--judge", "judge", judge);
    push("--out", "out_dir", out);
    push("--dataset", "dataset", dataset);
    push("--movies", "movies", movies);
    push("--ratings", "ratings", ratings);
    push("--threads", "threads", threads);

    try {
        const auto cfg = explora::parse_config(
            config_path.empty() ? std::nullopt : std::optional<std::string>(config_path),
            overrides);
        const auto result = explora::run_experiment(cfg, &std::cerr);
        explora::write_report_table(result.rows, std::cout);
        std::cout << "\nFinal clustering: " << result.n_clusters << " clusters, threshold "
                  << result.final_threshold << "\n\nOutputs:\n";
        for (const auto& path : result.written) std::cout << "  " << path << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
