#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "roivqa/corpus.hpp"
#include "roivqa/error.hpp"
#include "roivqa/fusion.hpp"
#include "roivqa/harness.hpp"
#include "roivqa/log.hpp"
#include "roivqa/metrics.hpp"
#include "roivqa/roiqa.hpp"

namespace roivqa {

namespace detail {

inline std::optional<AlphaPolicy> parse_alpha_flag(const std::string& s) {
    if (s == "dynamic") return AlphaPolicy::dynamic();
    try {
        std::size_t pos = 0;
        const int v = std::stoi(s, &pos);
        if (pos != s.size() || v < 0 || v > 255) return std::nullopt;
        return AlphaPolicy::fixed(v);
    } catch (...) {
        return std::nullopt;
    }
}

inline std::optional<Fraction> parse_fraction_flag(const std::string& s) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) return std::nullopt;
    try {
        std::size_t p1 = 0, p2 = 0;
        const std::string a = s.substr(0, slash), b = s.substr(slash + 1);
        const long long num = std::stoll(a, &p1);
        const long long den = std::stoll(b, &p2);
        if (p1 != a.size() || p2 != b.size() || num <= 0 || den <= 0 ||
            num >= den)
            return std::nullopt;
        return Fraction{num, den};
    } catch (...) {
        return std::nullopt;
    }
}

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

inline int default_workers() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace detail

/// Runs the toolkit CLI on an argument list (without the program name).
/// Exit codes: 0 success, 1 validation error, 2 aborted run, 3 usage error.
inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"Region-of-interest VQA dataset toolkit"};
    app.name("roivqa");
    app.require_subcommand(1);

    std::string manifest;
    std::vector<std::string> manifests;
    std::uint64_t seed = 0;
    std::string out_dir = "./roivqa-out";
    bool strict = false;
    std::string log_level = "warn";

    auto add_common = [&](CLI::App* sub, bool needs_seed) {
        sub->add_option("--out-dir", out_dir, "directory for outputs")
            ->envname("ROIVQA_OUT_DIR")
            ->capture_default_str();
        sub->add_flag("--strict", strict,
                      "reject unknown manifest fields instead of keeping them")
            ->envname("ROIVQA_STRICT");
        sub->add_option("--log-level", log_level, "debug|info|warn|error")
            ->envname("ROIVQA_LOG_LEVEL")
            ->capture_default_str();
        if (needs_seed)
            sub->add_option("--seed", seed, "64-bit PRNG seed")
                ->envname("ROIVQA_SEED")
                ->required();
    };

    CLI::App* validate_cmd =
        app.add_subcommand("validate", "check a manifest against the schema");
    validate_cmd->add_option("manifest", manifest, "manifest JSONL path")
        ->required();
    add_common(validate_cmd, false);

    std::string types_csv;
    std::string alpha_str = "dynamic";
    bool bbox_in_prompt = true;
    int quota = 0;
    int workers = detail::default_workers();
    CLI::App* reconstruct_cmd = app.add_subcommand(
        "reconstruct", "generate region QA items and composites");
    reconstruct_cmd->add_option("manifest", manifest, "manifest JSONL path")
        ->required();
    add_common(reconstruct_cmd, true);
    reconstruct_cmd
        ->add_option("--types", types_csv,
                     "comma-separated subset of localization,selection,"
                     "desc_coords,desc_highlight (default: all)")
        ->envname("ROIVQA_TYPES");
    reconstruct_cmd
        ->add_option("--alpha", alpha_str,
                     "blend weight: integer 0-255 or \"dynamic\"")
        ->envname("ROIVQA_ALPHA")
        ->capture_default_str();
    reconstruct_cmd
        ->add_flag("--bbox-in-prompt,!--no-bbox-in-prompt", bbox_in_prompt,
                   "put coordinates into description prompts (default on)")
        ->envname("ROIVQA_BBOX_IN_PROMPT");
    reconstruct_cmd
        ->add_option("--quota", quota,
                     "max generated items per type per image (0 = all)")
        ->envname("ROIVQA_QUOTA")
        ->capture_default_str();
    reconstruct_cmd
        ->add_option("--workers", workers, "worker threads for generation")
        ->envname("ROIVQA_WORKERS")
        ->capture_default_str();

    std::string fraction_str = "4/5";
    CLI::App* split_cmd = app.add_subcommand(
        "split", "deterministic train/test split grouped by image");
    split_cmd->add_option("manifest", manifest, "manifest JSONL path")
        ->required();
    add_common(split_cmd, true);
    split_cmd
        ->add_option("--fraction", fraction_str,
                     "train fraction as num/den, e.g. 4/5")
        ->envname("ROIVQA_FRACTION")
        ->capture_default_str();

    std::string adapter_kind;
    std::string fixture, command, endpoint;
    int max_in_flight = detail::default_workers();
    double timeout = 30.0;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "run a model over a split and score it");
    eval_cmd->add_option("manifest", manifest, "split manifest JSONL path")
        ->required();
    add_common(eval_cmd, true);
    eval_cmd
        ->add_option("--adapter", adapter_kind, "mock | subprocess | http")
        ->required()
        ->check(CLI::IsMember({"mock", "subprocess", "http"}));
    eval_cmd->add_option("--fixture", fixture,
                         "mock adapter: JSONL of {qa_id, answer}");
    eval_cmd->add_option("--command", command,
                         "subprocess adapter: command to execute (split on "
                         "whitespace, no shell)");
    eval_cmd->add_option("--endpoint", endpoint, "http adapter: endpoint URL")
        ->envname("ROIVQA_ENDPOINT");
    eval_cmd
        ->add_option("--max-in-flight", max_in_flight,
                     "concurrent inference requests")
        ->envname("ROIVQA_MAX_IN_FLIGHT")
        ->capture_default_str();
    eval_cmd->add_option("--timeout", timeout, "per-item timeout in seconds")
        ->envname("ROIVQA_TIMEOUT")
        ->capture_default_str();

    int dim_d = 4, dim_h = 8, dim_o = 4;
    double step = 1e-4, tol = 1e-4;
    CLI::App* fuse_cmd = app.add_subcommand(
        "fuse-check", "verify projector gradients against finite differences");
    add_common(fuse_cmd, true);
    fuse_cmd->add_option("--dim", dim_d, "per-branch feature dimension d")
        ->capture_default_str();
    fuse_cmd->add_option("--hidden", dim_h, "hidden width h")
        ->capture_default_str();
    fuse_cmd->add_option("--outdim", dim_o, "output dimension o")
        ->capture_default_str();
    fuse_cmd->add_option("--step", step, "finite difference step")
        ->capture_default_str();
    fuse_cmd->add_option("--tol", tol, "max relative error tolerance")
        ->capture_default_str();

    CLI::App* merge_cmd = app.add_subcommand(
        "merge", "merge datasets under namespaced ids");
    merge_cmd
        ->add_option("manifests", manifests, "two or more manifest paths")
        ->required()
        ->expected(-1);
    add_common(merge_cmd, false);

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }

    if (log_level == "debug")
        set_log_level(LogLevel::debug);
    else if (log_level == "info")
        set_log_level(LogLevel::info);
    else if (log_level == "warn")
        set_log_level(LogLevel::warn);
    else if (log_level == "error")
        set_log_level(LogLevel::error);
    else {
        std::cerr << "error: unknown log level \"" << log_level << "\"\n";
        return 3;
    }

    const LoadOptions load_opts{strict};
    auto echo_config = [&](const char* subcommand, ojson extra) {
        ojson j;
        j["subcommand"] = subcommand;
        for (auto it = extra.begin(); it != extra.end(); ++it)
            j[it.key()] = it.value();
        j["strict"] = strict;
        j["log_level"] = log_level;
        std::cout << "config: " << j.dump() << "\n";
    };

    try {
        if (app.got_subcommand(validate_cmd)) {
            echo_config("validate", {{"manifest", manifest}});
            Dataset d = load_dataset(manifest, load_opts);
            long long n_regions = 0;
            for (const auto& [id, regs] : d.regions)
                n_regions += static_cast<long long>(regs.size());
            std::cout << "ok: " << d.images.size() << " images, " << n_regions
                      << " regions, " << d.qa.size() << " qa pairs\n";
            return 0;
        }

        if (app.got_subcommand(reconstruct_cmd)) {
            GenerationConfig cfg;
            cfg.seed = seed;
            auto policy = detail::parse_alpha_flag(alpha_str);
            if (!policy) {
                std::cerr << "error: --alpha must be an integer in 0..255 or "
                             "\"dynamic\"\n";
                return 3;
            }
            cfg.alpha_policy = *policy;
            cfg.bbox_in_prompt = bbox_in_prompt;
            if (!types_csv.empty()) {
                std::set<std::string> chosen;
                for (const auto& t : detail::split_csv(types_csv)) {
                    if (!all_generated_types().count(t)) {
                        std::cerr << "error: unknown QA type \"" << t
                                  << "\"\n";
                        return 3;
                    }
                    chosen.insert(t);
                }
                cfg.enabled_types = chosen;
            }
            if (quota < 0) {
                std::cerr << "error: --quota must be >= 0\n";
                return 3;
            }
            if (quota > 0)
                for (const auto& t : cfg.enabled_types)
                    cfg.per_type_quota[t] = quota;

            echo_config("reconstruct",
                        {{"manifest", manifest},
                         {"seed", seed},
                         {"out_dir", out_dir},
                         {"types", cfg.enabled_types},
                         {"alpha", cfg.alpha_policy.describe()},
                         {"bbox_in_prompt", bbox_in_prompt},
                         {"quota", quota},
                         {"workers", workers}});

            Dataset d = load_dataset(manifest, load_opts);
            GenerationReport report =
                write_reconstruction(d, cfg, out_dir, workers);
            long long generated = 0;
            for (const auto& [type, n] : report.per_type_counts) {
                generated += n;
                std::cout << type << ": " << n << "\n";
            }
            std::cout << "generated " << generated << " items ("
                      << report.skipped << " skipped) -> " << out_dir
                      << "/manifest.jsonl\n";
            return 0;
        }

        if (app.got_subcommand(split_cmd)) {
            auto fraction = detail::parse_fraction_flag(fraction_str);
            if (!fraction) {
                std::cerr << "error: --fraction must be num/den with "
                             "0 < num < den\n";
                return 3;
            }
            echo_config("split", {{"manifest", manifest},
                                  {"seed", seed},
                                  {"out_dir", out_dir},
                                  {"fraction", fraction_str}});
            Dataset d = load_dataset(manifest, load_opts);
            SplitSpec spec{seed, *fraction};
            auto [train, test] = split_dataset(d, spec);
            std::filesystem::create_directories(out_dir);
            save_manifest(train,
                          std::filesystem::path(out_dir) / "train.jsonl");
            save_manifest(test, std::filesystem::path(out_dir) / "test.jsonl");
            std::cout << "train: " << train.images.size() << " images, "
                      << train.qa.size() << " qa\n";
            std::cout << "test: " << test.images.size() << " images, "
                      << test.qa.size() << " qa\n";
            return 0;
        }

        if (app.got_subcommand(eval_cmd)) {
            echo_config("eval", {{"manifest", manifest},
                                 {"seed", seed},
                                 {"out_dir", out_dir},
                                 {"adapter", adapter_kind},
                                 {"max_in_flight", max_in_flight},
                                 {"timeout", timeout}});
            if (max_in_flight < 1) {
                std::cerr << "error: --max-in-flight must be >= 1\n";
                return 3;
            }
            std::unique_ptr<ModelAdapter> adapter;
            if (adapter_kind == "mock") {
                if (fixture.empty()) {
                    std::cerr << "error: --adapter mock needs --fixture\n";
                    return 3;
                }
                adapter = std::make_unique<MockAdapter>(fixture);
            } else if (adapter_kind == "subprocess") {
                if (command.empty()) {
                    std::cerr
                        << "error: --adapter subprocess needs --command\n";
                    return 3;
                }
                adapter = std::make_unique<SubprocessAdapter>(command, timeout);
            } else {
                if (endpoint.empty()) {
                    std::cerr << "error: --adapter http needs --endpoint\n";
                    return 3;
                }
                adapter = std::make_unique<HttpAdapter>(endpoint, timeout);
            }

            Dataset d = load_dataset(manifest, load_opts);
            RunOptions opts;
            opts.max_in_flight = max_in_flight;
            opts.seed = seed;
            opts.out_dir = out_dir;
            RunResult result = run_eval(d, *adapter, opts);
            std::cout << report_markdown(result.report);
            std::cout << "report: " << out_dir << "/report.json\n";
            if (result.aborted) {
                std::cerr << "error: run aborted, more than half of the items "
                             "failed; partial report saved\n";
                return 2;
            }
            return 0;
        }

        if (app.got_subcommand(fuse_cmd)) {
            echo_config("fuse-check", {{"seed", seed},
                                       {"d", dim_d},
                                       {"h", dim_h},
                                       {"o", dim_o},
                                       {"step", step},
                                       {"tol", tol}});
            if (dim_d < 1 || dim_h < 1 || dim_o < 1) {
                std::cerr << "error: dimensions must be positive\n";
                return 3;
            }
            GradCheckReport report =
                grad_check({dim_d, dim_h, dim_o}, seed, step, tol);
            std::cout << grad_check_json(report).dump() << "\n";
            return report.pass ? 0 : 1;
        }

        if (app.got_subcommand(merge_cmd)) {
            echo_config("merge", {{"manifests", manifests},
                                  {"out_dir", out_dir}});
            std::vector<Dataset> parts;
            for (const auto& m : manifests)
                parts.push_back(load_dataset(m, load_opts));
            Dataset merged = merge_datasets(parts);
            std::filesystem::create_directories(out_dir);
            save_manifest(merged,
                          std::filesystem::path(out_dir) / "merged.jsonl");
            std::cout << "merged: " << merged.images.size() << " images, "
                      << merged.qa.size() << " qa -> " << out_dir
                      << "/merged.jsonl\n";
            return 0;
        }
    } catch (const ValidationError& e) {
        for (const auto& diag : e.diagnostics())
            std::cerr << "error: " << diag << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 3;
}

}  // namespace roivqa
