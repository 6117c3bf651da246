#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "relens/error.hpp"
#include "relens/harness.hpp"
#include "relens/log.hpp"
#include "relens/toy.hpp"
#include "relens/wire.hpp"
#include "run_config.hpp"

using namespace relens;
using namespace relens::cli;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2, kNumeric = 3 };

struct Options {
  std::string config;
  Overrides overrides;
  bool dry_run = false;
  std::string prompt;
  std::string sweep_kind;
  std::vector<std::string> grid;
  std::string inspect_kind;
  std::string model;
  std::optional<std::uint16_t> listen;
  std::optional<std::size_t> sessions;
  std::optional<std::size_t> sparse_top;
  // make-toy
  std::uint64_t toy_seed = 7;
  std::size_t toy_entities = 100;
  std::size_t toy_outliers = 0;
  std::size_t toy_dim = 24;
};

std::filesystem::path output_dir(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

std::vector<EvalItem> dev_items(const RunConfig& cfg) {
  if (!cfg.dev) throw ConfigError("datasets.dev (or --dataset) is required for this command");
  return read_dataset(*cfg.dev);
}

EnsembleSetup make_setup(const RunConfig& cfg) {
  return build_setup(load_models(cfg), AnchorStrategy::parse(cfg.anchors, *cfg.seed), cfg.fusion, cfg.stop,
                     *cfg.seed);
}

std::size_t resolve_main(const RunConfig& cfg, const EnsembleSetup& setup) {
  if (!cfg.fusion.main.automatic) return cfg.fusion.main.index;
  if (setup.models.size() == 1) return 0;
  const auto dev = dev_items(cfg);
  const auto sel = select_main_model(setup, dev);
  for (std::size_t m = 0; m < setup.models.size(); ++m) {
    logger().info("dev accuracy {}: {:.4f}", setup.models[m].name, sel.accuracies[m]);
  }
  logger().info("main model: {}", setup.models[sel.index].name);
  return sel.index;
}

void emit_csv(const RunReport& report, const std::filesystem::path& path) {
  report.write_csv(path);
  report.write_csv(std::cout);
  logger().info("wrote {}", path.string());
}

template <class T>
std::vector<T> parse_list(const std::vector<std::string>& items, const char* what) {
  std::vector<T> out;
  for (const auto& s : items) {
    try {
      std::size_t used = 0;
      T v{};
      if constexpr (std::is_floating_point_v<T>) {
        v = static_cast<T>(std::stod(s, &used));
      } else {
        const long long n = std::stoll(s, &used);
        if (n < 0) throw std::invalid_argument(s);
        v = static_cast<T>(n);
      }
      if (used != s.size()) throw std::invalid_argument(s);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("--grid: bad ") + what + " value '" + s + "'");
    }
  }
  return out;
}

int cmd_build_relspace(const RunConfig& cfg) {
  const auto setup = make_setup(cfg);
  const auto dir = output_dir(cfg);
  for (std::size_t m = 0; m < setup.models.size(); ++m) {
    const auto path = dir / (setup.models[m].name + ".dpr");
    write_relative_matrix(*setup.normalized[m], path);
    logger().info("wrote {} ({} x {}, {} zero-norm rows)", path.string(), setup.normalized[m]->rows,
                  setup.normalized[m]->anchors, setup.models[m].embeddings->flagged_count());
  }
  write_anchor_manifest(setup.anchors, dir / "anchors.jsonl");
  logger().info("wrote {} ({} anchors of {} common tokens)", (dir / "anchors.jsonl").string(), setup.anchors.size(),
                setup.common.size());
  return kOk;
}

int cmd_decode(const RunConfig& cfg, const Options& opt) {
  const auto setup = make_setup(cfg);
  const std::size_t main = resolve_main(cfg, setup);
  auto session = make_session(setup, main);
  const auto out = generate(session, opt.prompt);
  std::cout << out.text << '\n';
  const auto path = output_dir(cfg) / "trace.jsonl";
  write_trace(out.trace, path);
  logger().info("wrote {}", path.string());
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const auto setup = make_setup(cfg);
  const auto dev = dev_items(cfg);
  const std::size_t main = resolve_main(cfg, setup);
  std::vector<EvalItem> test;
  if (cfg.test) test = read_dataset(*cfg.test);
  emit_csv(evaluation_report(setup, main, dev, test), output_dir(cfg) / "report.csv");
  return kOk;
}

int cmd_sweep(const RunConfig& cfg, const Options& opt) {
  const auto setup = make_setup(cfg);
  const auto dev = dev_items(cfg);
  const std::size_t main = resolve_main(cfg, setup);
  SweepResult sweep;
  if (opt.sweep_kind == "eta") {
    const auto grid = opt.grid.empty() ? default_eta_grid() : parse_list<double>(opt.grid, "eta");
    sweep = sweep_eta(setup, main, dev, grid);
  } else if (opt.sweep_kind == "steps") {
    const auto grid = opt.grid.empty() ? std::vector<int>{1, 2, 3, 5, 8, 10} : parse_list<int>(opt.grid, "steps");
    sweep = sweep_steps(setup, main, dev, grid);
  } else {
    std::vector<std::size_t> counts;
    if (opt.grid.empty()) {
      for (std::size_t c : {25, 50, 100}) {
        if (c < setup.common.size()) counts.push_back(c);
      }
    } else {
      counts = parse_list<std::size_t>(opt.grid, "anchor count");
    }
    sweep = sweep_anchor_count(setup, main, dev, counts, *cfg.seed);
  }
  const auto& best = sweep.points[sweep.best];
  logger().info("best: eta {:.2f}, steps {}, anchors {}, accuracy {:.4f}", best.eta, best.steps, best.anchors,
                best.accuracy);
  emit_csv(sweep_report("sweep_" + opt.sweep_kind, setup, main, sweep, dev),
           output_dir(cfg) / ("sweep_" + opt.sweep_kind + ".csv"));
  return kOk;
}

int cmd_ablate(const RunConfig& cfg) {
  const auto setup = make_setup(cfg);
  const auto dev = dev_items(cfg);
  const std::size_t main = resolve_main(cfg, setup);
  const auto r = ablate_normalization(setup, main, dev);
  RunReport report;
  const std::string label = "ensemble(main=" + setup.models[main].name + ")";
  for (const auto& [condition, acc] : {std::pair{"raw", r.raw}, std::pair{"normalized", r.normalized}}) {
    report.rows.push_back({condition, "dev", label, acc, std::nullopt, cfg.fusion.eta, cfg.fusion.steps,
                           setup.anchors.size(), *cfg.seed});
  }
  emit_csv(report, output_dir(cfg) / "ablation.csv");
  return kOk;
}

int cmd_inspect(const RunConfig& cfg, const Options& opt) {
  const auto setup = make_setup(cfg);
  const auto dir = output_dir(cfg);
  std::ostringstream csv;
  std::filesystem::path path;
  if (opt.inspect_kind == "consistency") {
    if (setup.models.size() < 2) throw ConfigError("inspect consistency needs at least two models");
    csv << "model_a,model_b,shared,shared_mean,random_mean\n";
    for (std::size_t a = 0; a < setup.models.size(); ++a) {
      for (std::size_t b = a + 1; b < setup.models.size(); ++b) {
        const auto pairs = shared_token_pairs(*setup.models[a].vocab, *setup.models[b].vocab);
        const auto gap = consistency_gap(*setup.raw[a], *setup.raw[b], pairs, 1000, *cfg.seed);
        csv << fmt::format("{},{},{},{:.4f},{:.4f}\n", setup.models[a].name, setup.models[b].name, gap.shared,
                           gap.shared_mean, gap.random_mean);
      }
    }
    path = dir / "consistency.csv";
  } else {
    std::vector<double> edges;
    for (int k = 0; k <= 20; ++k) edges.push_back(-1.0 + 0.1 * k);
    csv << "model,lo,hi,count\n";
    for (const auto& m : setup.models) {
      const auto h = nn_distance_histogram(*m.embeddings, edges);
      std::size_t low = 0, usable = 0;
      for (double s : h.nearest) {
        if (std::isnan(s)) continue;
        ++usable;
        low += s < 0.3;
      }
      for (std::size_t k = 0; k < h.counts.size(); ++k) {
        csv << fmt::format("{},{:.1f},{:.1f},{}\n", m.name, edges[k], edges[k + 1], h.counts[k]);
      }
      logger().info("{}: {} of {} tokens have nearest-neighbour cosine < 0.3 ({} zero-norm rows skipped)", m.name,
                    low, usable, h.flagged);
    }
    path = dir / "nn_hist.csv";
  }
  std::ofstream(path, std::ios::binary) << csv.str();
  std::cout << csv.str();
  logger().info("wrote {}", path.string());
  return kOk;
}

int cmd_serve(const RunConfig& cfg, const Options& opt) {
  const ModelSpec* spec = nullptr;
  for (const auto& m : cfg.models) {
    if (m.name == opt.model) spec = &m;
  }
  if (!spec) throw ConfigError("--model: no model named '" + opt.model + "' in the config");
  if (spec->backend.kind == "remote") throw ConfigError("--model: cannot serve a remote backend");
  const Model model = load_model(*spec);
  ServeOptions serve;
  serve.sparse_top = opt.sparse_top;
  if (opt.listen) {
    serve_socket(*model.backend, *opt.listen, serve, opt.sessions, [](std::uint16_t port) {
      std::cout << port << std::endl;
    });
  } else {
    FdTransport stdio(0, 1);
    serve_session(*model.backend, stdio, serve);
  }
  return kOk;
}

int cmd_make_toy(const Options& opt) {
  if (!opt.overrides.out) throw ConfigError("make-toy needs --out");
  const std::filesystem::path dir = *opt.overrides.out;
  std::filesystem::create_directories(dir);
  ToyOptions toy;
  toy.seed = opt.toy_seed;
  toy.entities = opt.toy_entities;
  toy.outlier_words = opt.toy_outliers;
  const auto bench = make_toy_benchmark(toy);
  ToyTraining training;
  training.embedding.dim = opt.toy_dim;

  nlohmann::ordered_json models = nlohmann::ordered_json::array();
  for (const auto& m : bench.models) {
    write_vocabulary(m.vocab, dir / (m.name + ".vocab.jsonl"));
    std::ofstream(dir / (m.name + ".corpus.txt"), std::ios::binary) << m.corpus;
    const Model built = build_toy_model(m.name, m.vocab, m.corpus, training);
    write_embeddings(*built.embeddings, dir / (m.name + ".dpe"));
    models.push_back({{"name", m.name},
                      {"vocab", m.name + ".vocab.jsonl"},
                      {"embeddings", m.name + ".dpe"},
                      {"backend",
                       {{"kind", "ngram"},
                        {"corpus", m.name + ".corpus.txt"},
                        {"order", training.ngram.order},
                        {"delta", training.ngram.delta}}}});
  }
  write_dataset(bench.dev, dir / "dev.jsonl");
  write_dataset(bench.test, dir / "test.jsonl");
  const auto stop = toy_stop_conditions();
  const nlohmann::ordered_json config = {
      {"seed", opt.toy_seed},
      {"output_dir", "out"},
      {"anchors", "full"},
      {"main", "auto"},
      {"fusion", {{"eta", 0.1}, {"steps", 5}}},
      {"stop", {{"max_tokens", stop.max_tokens}, {"stop_surfaces", stop.stop_surfaces}}},
      {"datasets", {{"dev", "dev.jsonl"}, {"test", "test.jsonl"}}},
      {"models", models}};
  std::ofstream(dir / "config.json") << config.dump(2) << '\n';
  logger().info("wrote toy benchmark to {}", dir.string());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Relative-space ensemble decoding across heterogeneous vocabularies"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Run configuration (JSON)")->required();
    sub->add_option("--out", opt.overrides.out, "Output directory");
    sub->add_option("--eta", opt.overrides.eta, "Search learning rate");
    sub->add_option("--steps", opt.overrides.steps, "Search steps");
    sub->add_option("--anchors", opt.overrides.anchors, "full | sample:K");
    sub->add_option("--main", opt.overrides.main, "auto | model index");
    sub->add_option("--seed", opt.overrides.seed, "Seed for anchor sampling");
    sub->add_option("--max-tokens", opt.overrides.max_tokens, "Generation length limit");
    sub->add_option("--dataset", opt.overrides.dataset, "Evaluation dataset (JSONL), replaces datasets.dev");
    sub->add_flag("--dry-run", opt.dry_run, "Validate and print the plan only");
  };

  auto* build = app.add_subcommand("build-relspace", "Write relative matrices and the anchor manifest");
  add_common(build);
  auto* decode = app.add_subcommand("decode", "Greedy ensemble generation from a prompt");
  add_common(decode);
  decode->add_option("--prompt", opt.prompt, "Prompt text")->required();
  auto* eval = app.add_subcommand("eval", "Individual and ensemble accuracy on dev/test");
  add_common(eval);
  eval->add_option("--sweep", opt.sweep_kind, "Run a sweep instead: eta | anchors | steps")
      ->check(CLI::IsMember({"eta", "anchors", "steps"}));
  eval->add_option("--grid", opt.grid, "Sweep values");
  auto* sweep = app.add_subcommand("sweep", "Dev accuracy over eta, anchor counts or step counts");
  add_common(sweep);
  sweep->add_option("kind", opt.sweep_kind, "eta | anchors | steps")
      ->required()
      ->check(CLI::IsMember({"eta", "anchors", "steps"}));
  sweep->add_option("--grid", opt.grid, "Values to sweep (defaults: eta grid, counts 25 50 100, steps 1..10)");
  auto* ablate = app.add_subcommand("ablate-norm", "Raw versus normalized relative matrices");
  add_common(ablate);
  auto* inspect = app.add_subcommand("inspect", "Relative-space diagnostics");
  add_common(inspect);
  inspect->add_option("kind", opt.inspect_kind, "consistency | nn-hist")
      ->required()
      ->check(CLI::IsMember({"consistency", "nn-hist"}));
  auto* serve = app.add_subcommand("serve-backend", "Serve a configured model over the wire protocol");
  add_common(serve);
  serve->add_option("--model", opt.model, "Model name from the config")->required();
  serve->add_option("--listen", opt.listen, "TCP port on 127.0.0.1 (0 picks one); default is stdin/stdout");
  serve->add_option("--sessions", opt.sessions, "Stop after this many TCP sessions");
  serve->add_option("--sparse-top", opt.sparse_top, "Answer with sparse frames of this many ids");
  auto* toy = app.add_subcommand("make-toy", "Write the synthetic benchmark and a config for it");
  toy->add_option("--out", opt.overrides.out, "Output directory")->required();
  toy->add_option("--seed", opt.toy_seed, "Benchmark seed");
  toy->add_option("--entities", opt.toy_entities, "Entities in the fact language");
  toy->add_option("--outliers", opt.toy_outliers, "Junk words that become outlier tokens");
  toy->add_option("--dim", opt.toy_dim, "Embedding dimension");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "make-toy") return cmd_make_toy(opt);
    const RunConfig cfg = load_config(opt.config, opt.overrides);
    if (opt.dry_run) {
      std::cout << describe_plan(cfg, command + (opt.sweep_kind.empty() ? "" : " " + opt.sweep_kind));
      return kOk;
    }
    if (command == "build-relspace") return cmd_build_relspace(cfg);
    if (command == "decode") return cmd_decode(cfg, opt);
    if (command == "eval") return opt.sweep_kind.empty() ? cmd_eval(cfg) : cmd_sweep(cfg, opt);
    if (command == "sweep") return cmd_sweep(cfg, opt);
    if (command == "ablate-norm") return cmd_ablate(cfg);
    if (command == "inspect") return cmd_inspect(cfg, opt);
    if (command == "serve-backend") return cmd_serve(cfg, opt);
  } catch (const ConfigError& e) {
    logger().error("{}", e.what());
    return kValidation;
  } catch (const ArgumentError& e) {
    logger().error("{}", e.what());
    return kValidation;
  } catch (const NumericError& e) {
    logger().error("{} (search step {})", e.what(), e.step());
    return kNumeric;
  } catch (const std::exception& e) {
    logger().error("{}", e.what());
    return kRuntime;
  }
  return kRuntime;
}
