#include "looptwin/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "looptwin/gradcheck.hpp"
#include "looptwin/graphs.hpp"
#include "looptwin/harness.hpp"
#include "looptwin/record.hpp"
#include "looptwin/simkit.hpp"
#include "looptwin/twins.hpp"

namespace looptwin {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

bool deterministic_mode() {
  const char* v = std::getenv(kDeterministicEnv);
  return v != nullptr && *v != '\0' && std::string(v) != "0";
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json j = json::parse(in);
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " must hold an object");
  return j;
}

// Explicit flags win over config-file values; a config key only applies when
// its flag was not given on the command line.
template <typename T>
void apply_config(const CLI::App& cmd, const json& cfg, const std::string& key, T& value) {
  if (!cfg.contains(key)) return;
  const CLI::Option* opt = cmd.get_option_no_throw("--" + key);
  if (opt != nullptr && opt->count() > 0) return;
  value = cfg.at(key).get<T>();
}

void check_config_keys(const json& cfg, const std::vector<std::string>& known,
                       const std::string& command) {
  for (const auto& [key, value] : cfg.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown key \"" + key + "\" for " + command);
  }
}

std::string prepare_out_dir(const std::string& out) {
  if (out.empty()) throw std::invalid_argument("missing required --out directory");
  fs::create_directories(out);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path);
}

// Exactly one manifest per output directory; reruns overwrite it.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const json& config, std::uint64_t seed,
                        const std::vector<std::string>& artifacts, double wall_s) {
  json m;
  m["tool"] = "looptwin";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["artifacts"] = artifacts;
  m["wall_clock_s"] = wall_s;
  m["deterministic"] = deterministic_mode();
  write_text((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

IntersectionTopology resolve_topology(const std::string& name_or_path) {
  auto names = IntersectionTopology::builtin_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end())
    return IntersectionTopology::builtin(name_or_path);
  if (!fs::exists(name_or_path))
    throw std::invalid_argument("topology: no builtin or file named " + name_or_path);
  return IntersectionTopology::load(name_or_path);
}

TemplateKind kind_from_name(const std::string& name) {
  if (name == "exit") return TemplateKind::Exit;
  if (name == "inflow") return TemplateKind::Inflow;
  throw std::invalid_argument("unknown graph kind: " + name);
}

struct SimulateOpts {
  std::vector<std::string> topologies{"full"};
  int scenarios = 100;
  std::string regime = "real";
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 1;
  std::string config;
};

int run_simulate(const CLI::App& cmd, SimulateOpts& o) {
  json cfg = load_config_file(o.config);
  check_config_keys(cfg, {"topology", "scenarios", "regime", "seed", "out", "jobs"}, "simulate");
  apply_config(cmd, cfg, "topology", o.topologies);
  apply_config(cmd, cfg, "scenarios", o.scenarios);
  apply_config(cmd, cfg, "regime", o.regime);
  apply_config(cmd, cfg, "seed", o.seed);
  apply_config(cmd, cfg, "out", o.out);
  apply_config(cmd, cfg, "jobs", o.jobs);

  auto t0 = Clock::now();
  CorpusSpec spec;
  spec.n_scenarios = o.scenarios;
  for (const auto& t : o.topologies) spec.topologies.push_back(resolve_topology(t));
  spec.regime = regime_from_name(o.regime);
  spec.seed = o.seed;
  spec.jobs = deterministic_mode() ? 1 : o.jobs;

  auto records = generate_corpus(spec);
  std::string out = prepare_out_dir(o.out);
  std::string rec_path = (fs::path(out) / "records.jsonl").string();
  {
    std::ofstream f(rec_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + rec_path);
    write_records(f, records);
  }
  std::string corpus_path = (fs::path(out) / "corpus.json").string();
  write_text(corpus_path, corpus_manifest(records));

  json snap = {{"topology", o.topologies}, {"scenarios", o.scenarios}, {"regime", o.regime},
               {"seed", o.seed},           {"out", o.out},             {"jobs", spec.jobs}};
  double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  write_run_manifest(out, "simulate", snap, o.seed, {"records.jsonl", "corpus.json"}, wall);
  std::cout << "simulate: " << records.size() << " records -> " << rec_path << " (" << wall
            << " s)\n";
  return 0;
}

struct GraphsOpts {
  std::string in;
  std::string kind = "exit";
  std::string out;
  std::string config;
};

int run_graphs(const CLI::App& cmd, GraphsOpts& o) {
  json cfg = load_config_file(o.config);
  check_config_keys(cfg, {"in", "kind", "out"}, "graphs");
  apply_config(cmd, cfg, "in", o.in);
  apply_config(cmd, cfg, "kind", o.kind);
  apply_config(cmd, cfg, "out", o.out);
  if (o.in.empty()) throw std::invalid_argument("missing required --in records file");

  auto t0 = Clock::now();
  TemplateKind kind = kind_from_name(o.kind);
  auto records = read_records_file(o.in);
  std::vector<SimGraph> graphs;
  graphs.reserve(records.size());
  for (const auto& rec : records) graphs.push_back(build_graph(rec, rec.topology, kind));

  std::string out = prepare_out_dir(o.out);
  std::string gpath = (fs::path(out) / "graphs.bin").string();
  write_graph_dataset(gpath, graphs);

  json snap = {{"in", o.in}, {"kind", o.kind}, {"out", o.out}};
  double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  write_run_manifest(out, "graphs", snap, 0, {"graphs.bin"}, wall);
  int pillar = graphs.empty() ? 0 : graphs.front().n_pillar();
  std::cout << "graphs: " << graphs.size() << " samples, " << (kind == TemplateKind::Exit ? 33 : 36)
            << " nodes / " << (graphs.empty() ? 0 : graphs.front().n_edges()) << " edges / "
            << kEdgeFeatureDim << " edge features";
  if (pillar > 0) std::cout << " (" << pillar << " pillar)";
  std::cout << " -> " << gpath << "\n";
  return 0;
}

struct TrainOpts {
  std::string graphs;
  std::string variant = "gatconv-ext";
  std::string model_config;
  std::string out;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 42;
  int epochs = 30;
  int batch = 1;
  long max_steps = 0;
  double lr = 1e-3;
  int patience = 5;
  double min_delta = 1e-5;
  double dropout = -1.0;
  int latent = 0;
  bool verbose = false;
  std::string config;
};

int run_train(const CLI::App& cmd, TrainOpts& o) {
  json cfg = load_config_file(o.config);
  check_config_keys(cfg,
                    {"graphs", "variant", "model_config", "out", "seed", "split_seed", "epochs",
                     "batch", "max_steps", "lr", "patience", "min_delta", "dropout", "latent"},
                    "train");
  apply_config(cmd, cfg, "graphs", o.graphs);
  apply_config(cmd, cfg, "variant", o.variant);
  apply_config(cmd, cfg, "model_config", o.model_config);
  apply_config(cmd, cfg, "out", o.out);
  apply_config(cmd, cfg, "seed", o.seed);
  apply_config(cmd, cfg, "split_seed", o.split_seed);
  apply_config(cmd, cfg, "epochs", o.epochs);
  apply_config(cmd, cfg, "batch", o.batch);
  apply_config(cmd, cfg, "max_steps", o.max_steps);
  apply_config(cmd, cfg, "lr", o.lr);
  apply_config(cmd, cfg, "patience", o.patience);
  apply_config(cmd, cfg, "min_delta", o.min_delta);
  apply_config(cmd, cfg, "dropout", o.dropout);
  apply_config(cmd, cfg, "latent", o.latent);
  if (o.graphs.empty()) throw std::invalid_argument("missing required --graphs dataset");

  auto t0 = Clock::now();
  TwinConfig mc = TwinConfig::variant_named(o.variant);
  if (!o.model_config.empty()) {
    std::ifstream f(o.model_config);
    if (!f) throw std::invalid_argument("config: cannot open " + o.model_config);
    json patch = json::parse(f);
    json merged = mc.to_json();
    merged.merge_patch(patch);
    mc = TwinConfig::from_json(merged);
  }
  if (o.dropout >= 0.0) mc.dropout = o.dropout;
  if (o.latent > 0) mc.latent = o.latent;
  mc.validate();

  auto data = read_graph_dataset(o.graphs);
  if (data.empty()) throw std::invalid_argument("train: empty dataset " + o.graphs);
  if (data.front().kind != mc.kind)
    throw std::invalid_argument("train: dataset kind does not match model variant");
  DataSplit split = DataSplit::make(static_cast<int>(data.size()), o.split_seed);
  if (split.train.empty()) {
    split.train.resize(data.size());
    std::iota(split.train.begin(), split.train.end(), 0);
    split.val.clear();
    split.test.clear();
  }

  TwinModel<float> model;
  model.init(mc, o.seed);

  TrainOptions topt;
  topt.max_epochs = o.epochs;
  topt.batch_size = o.batch;
  topt.max_steps = o.max_steps;
  topt.lr = o.lr;
  topt.patience = o.patience;
  topt.min_delta = o.min_delta;
  topt.seed = o.seed;
  topt.verbose = o.verbose;
  TrainResult res = train_model(model, data, split.train, split.val, topt);

  std::string out = prepare_out_dir(o.out);
  std::string ckpt = (fs::path(out) / "checkpoint.bin").string();
  model.save(ckpt);
  write_text((fs::path(out) / "history.csv").string(), res.history_csv());
  double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  json summary;
  summary["model"] = model.summary();
  summary["dataset"] = {{"path", o.graphs},
                        {"graphs", data.size()},
                        {"train", split.train.size()},
                        {"val", split.val.size()},
                        {"test", split.test.size()}};
  summary["best_val_loss"] = res.best_val_loss;
  summary["best_epoch"] = res.best_epoch;
  summary["epochs_run"] = res.history.size();
  summary["steps"] = res.steps;
  summary["stopped_early"] = res.stopped_early;
  summary["wall_clock_s"] = wall;
  write_text((fs::path(out) / "summary.json").string(), summary.dump(2) + "\n");

  json snap = {{"graphs", o.graphs},   {"variant", o.variant},
               {"model_config", o.model_config}, {"out", o.out},
               {"seed", o.seed},       {"split_seed", o.split_seed},
               {"epochs", o.epochs},   {"batch", o.batch},
               {"max_steps", o.max_steps}, {"lr", o.lr},
               {"patience", o.patience},   {"min_delta", o.min_delta},
               {"dropout", mc.dropout},    {"latent", mc.latent}};
  write_run_manifest(out, "train", snap, o.seed,
                     {"checkpoint.bin", "history.csv", "summary.json"}, wall);
  std::cout << "train: " << o.variant << " best val " << res.best_val_loss << " at epoch "
            << res.best_epoch << " (" << res.steps << " steps, " << wall << " s) -> " << ckpt
            << "\n";
  return 0;
}

struct EvalOpts {
  std::string graphs;
  std::string checkpoint;
  std::string out;
  std::string split = "test";
  std::uint64_t split_seed = 42;
  std::string config;
};

int run_eval(const CLI::App& cmd, EvalOpts& o) {
  json cfg = load_config_file(o.config);
  check_config_keys(cfg, {"graphs", "checkpoint", "out", "split", "split_seed"}, "eval");
  apply_config(cmd, cfg, "graphs", o.graphs);
  apply_config(cmd, cfg, "checkpoint", o.checkpoint);
  apply_config(cmd, cfg, "out", o.out);
  apply_config(cmd, cfg, "split", o.split);
  apply_config(cmd, cfg, "split_seed", o.split_seed);
  if (o.graphs.empty()) throw std::invalid_argument("missing required --graphs dataset");
  if (o.checkpoint.empty()) throw std::invalid_argument("missing required --checkpoint file");

  auto t0 = Clock::now();
  TwinConfig mc = checkpoint_config(o.checkpoint);
  TwinModel<float> model;
  model.init(mc, 0);
  model.load(o.checkpoint);

  auto data = read_graph_dataset(o.graphs);
  if (data.empty()) throw std::invalid_argument("eval: empty dataset " + o.graphs);
  DataSplit split = DataSplit::make(static_cast<int>(data.size()), o.split_seed);
  std::vector<int> idx;
  if (o.split == "all") {
    idx.resize(data.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    idx = split.part(o.split);
  }
  if (idx.empty()) throw std::invalid_argument("eval: empty split " + o.split);
  std::vector<int> mean_src = split.train.empty() ? idx : split.train;

  MetricsReport rep = evaluate_model(model, data, idx);
  MetricsReport zero = evaluate_zero(data, idx);
  MetricsReport mean = evaluate_mean(data, mean_src, idx);

  std::string out = prepare_out_dir(o.out);
  json mj;
  mj["split"] = o.split;
  mj["n_graphs"] = idx.size();
  mj["model"] = rep.to_json();
  mj["zero_baseline"] = zero.to_json();
  mj["mean_baseline"] = mean.to_json();
  write_text((fs::path(out) / "metrics.json").string(), mj.dump(2) + "\n");

  json snap = {{"graphs", o.graphs},
               {"checkpoint", o.checkpoint},
               {"out", o.out},
               {"split", o.split},
               {"split_seed", o.split_seed}};
  double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  write_run_manifest(out, "eval", snap, o.split_seed, {"metrics.json"}, wall);
  std::cout << "eval: split " << o.split << " mae@5s " << rep.mae_at(5) << " rmse@5s "
            << rep.rmse_at(5) << " ci95 " << rep.ci95 << " (zero mae@5s " << zero.mae_at(5)
            << ")\n";
  return 0;
}

struct ExplainOpts {
  std::string records;
  std::string checkpoint;
  std::string out;
  int latent_graphs = 50;
  std::string config;
};

int run_explain(const CLI::App& cmd, ExplainOpts& o) {
  json cfg = load_config_file(o.config);
  check_config_keys(cfg, {"records", "checkpoint", "out", "latent_graphs"}, "explain");
  apply_config(cmd, cfg, "records", o.records);
  apply_config(cmd, cfg, "checkpoint", o.checkpoint);
  apply_config(cmd, cfg, "out", o.out);
  apply_config(cmd, cfg, "latent_graphs", o.latent_graphs);
  if (o.records.empty()) throw std::invalid_argument("missing required --records file");
  if (o.checkpoint.empty()) throw std::invalid_argument("missing required --checkpoint file");

  auto t0 = Clock::now();
  TwinConfig mc = checkpoint_config(o.checkpoint);
  TwinModel<float> model;
  model.init(mc, 0);
  model.load(o.checkpoint);

  auto records = read_records_file(o.records);
  if (records.empty()) throw std::invalid_argument("explain: no records in " + o.records);
  std::vector<SimGraph> graphs;
  graphs.reserve(records.size());
  for (const auto& rec : records) graphs.push_back(build_graph(rec, rec.topology, mc.kind));

  std::vector<int> latent_idx(std::min<std::size_t>(graphs.size(), std::max(o.latent_graphs, 1)));
  std::iota(latent_idx.begin(), latent_idx.end(), 0);
  std::string out = prepare_out_dir(o.out);
  write_text((fs::path(out) / "latents.csv").string(),
             export_latents_csv(model, graphs, latent_idx));

  LinearExplanation ex = explain_linear(model, records, graphs);
  std::ostringstream attr;
  attr << "record,response";
  for (const auto& n : ex.feature_names) attr << ",phi_" << n;
  attr << "\n";
  char buf[48];
  for (std::size_t i = 0; i < records.size(); ++i) {
    attr << records[i].intersection_id << "_" << records[i].seed;
    std::snprintf(buf, sizeof(buf), ",%.9g", ex.response[i]);
    attr << buf;
    for (double phi : ex.shapley[i]) {
      std::snprintf(buf, sizeof(buf), ",%.9g", phi);
      attr << buf;
    }
    attr << "\n";
  }
  write_text((fs::path(out) / "attributions.csv").string(), attr.str());
  write_text((fs::path(out) / "ranking.csv").string(), ex.ranking_csv());
  json ej;
  ej["feature_names"] = ex.feature_names;
  ej["coef"] = ex.coef;
  ej["intercept"] = ex.intercept;
  ej["r2"] = ex.r2;
  ej["ridge_fallback"] = ex.ridge_fallback;
  write_text((fs::path(out) / "explain.json").string(), ej.dump(2) + "\n");
  if (ex.ridge_fallback)
    std::cerr << "explain: rank-deficient design, fitted with ridge penalty 1e-6\n";

  json snap = {{"records", o.records},
               {"checkpoint", o.checkpoint},
               {"out", o.out},
               {"latent_graphs", o.latent_graphs}};
  double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  write_run_manifest(out, "explain", snap, 0,
                     {"latents.csv", "attributions.csv", "ranking.csv", "explain.json"}, wall);
  std::cout << "explain: " << records.size() << " scenarios, surrogate r2 " << ex.r2 << " -> "
            << out << "\n";
  return 0;
}

struct GradcheckOpts {
  double step = 1e-5;
  std::uint64_t seed = 7;
  double tol = 1e-4;
  std::string out;
};

int cmd_gradcheck(GradcheckOpts& o) {
  GradCheckReport rep = run_gradcheck(o.seed, o.step);
  for (const auto& e : rep.entries)
    std::printf("%-28s %10.3e  (%ld values)\n", e.name.c_str(), e.max_rel_err, e.checked);
  std::printf("max relative error %.3e over %zu cases in %.1f s\n", rep.max_rel_err,
              rep.entries.size(), rep.seconds);
  if (!o.out.empty()) {
    std::string out = prepare_out_dir(o.out);
    write_text((fs::path(out) / "gradcheck.json").string(), gradcheck_json(rep).dump(2) + "\n");
    json snap = {{"step", o.step}, {"seed", o.seed}, {"tol", o.tol}, {"out", o.out}};
    write_run_manifest(out, "gradcheck", snap, o.seed, {"gradcheck.json"}, rep.seconds);
  }
  if (!rep.pass(o.tol)) {
    std::printf("FAIL: tolerance %.1e exceeded\n", o.tol);
    return 1;
  }
  std::printf("PASS\n");
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Loop detector digital twins: simulate, learn, explain"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SimulateOpts so;
  CLI::App* sim = app.add_subcommand("simulate", "Generate a randomized scenario corpus");
  sim->add_option("--topology", so.topologies,
                  "Topology name or JSON path, repeatable for a mixed corpus");
  sim->add_option("--scenarios", so.scenarios, "Number of scenarios");
  sim->add_option("--regime", so.regime, "Demand regime: real, random or mixed");
  sim->add_option("--seed", so.seed, "Master seed");
  sim->add_option("--out", so.out, "Output directory");
  sim->add_option("--jobs", so.jobs, "Worker threads");
  sim->add_option("--config", so.config, "JSON config file; explicit flags win");

  GraphsOpts go;
  CLI::App* gr = app.add_subcommand("graphs", "Build template graphs from records");
  gr->add_option("--in", go.in, "records.jsonl path");
  gr->add_option("--kind", go.kind, "Graph kind: exit or inflow");
  gr->add_option("--out", go.out, "Output directory");
  gr->add_option("--config", go.config, "JSON config file; explicit flags win");

  TrainOpts to;
  CLI::App* tr = app.add_subcommand("train", "Train a model variant on a graph dataset");
  tr->add_option("--graphs", to.graphs, "graphs.bin dataset path");
  tr->add_option("--variant", to.variant, "Model variant name");
  tr->add_option("--model-config", to.model_config, "JSON file overriding model settings");
  tr->add_option("--out", to.out, "Output directory");
  tr->add_option("--seed", to.seed, "Init and shuffle seed");
  tr->add_option("--split-seed", to.split_seed, "Dataset split seed");
  tr->add_option("--epochs", to.epochs, "Maximum epochs");
  tr->add_option("--batch", to.batch, "Minibatch size");
  tr->add_option("--max-steps", to.max_steps, "Optimizer step cap, 0 for none");
  tr->add_option("--lr", to.lr, "Adam learning rate");
  tr->add_option("--patience", to.patience, "Early stopping patience in epochs");
  tr->add_option("--min-delta", to.min_delta, "Minimum val improvement to reset patience");
  tr->add_option("--dropout", to.dropout, "Dropout override, negative keeps the variant default");
  tr->add_option("--latent", to.latent, "Latent width override, 0 keeps the variant default");
  tr->add_flag("--verbose", to.verbose, "Per-epoch progress on stderr");
  tr->add_option("--config", to.config, "JSON config file; explicit flags win");

  EvalOpts eo;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint against baselines");
  ev->add_option("--graphs", eo.graphs, "graphs.bin dataset path");
  ev->add_option("--checkpoint", eo.checkpoint, "Model checkpoint path");
  ev->add_option("--out", eo.out, "Output directory");
  ev->add_option("--split", eo.split, "Partition: train, val, test or all");
  ev->add_option("--split-seed", eo.split_seed, "Dataset split seed");
  ev->add_option("--config", eo.config, "JSON config file; explicit flags win");

  ExplainOpts xo;
  CLI::App* ex = app.add_subcommand("explain", "Latents and linear attributions");
  ex->add_option("--records", xo.records, "records.jsonl path");
  ex->add_option("--checkpoint", xo.checkpoint, "Model checkpoint path");
  ex->add_option("--out", xo.out, "Output directory");
  ex->add_option("--latent-graphs", xo.latent_graphs, "Graphs to include in latents.csv");
  ex->add_option("--config", xo.config, "JSON config file; explicit flags win");

  GradcheckOpts ko;
  CLI::App* gc = app.add_subcommand("gradcheck", "Finite difference check of all layers");
  gc->add_option("--step", ko.step, "Central difference step");
  gc->add_option("--seed", ko.seed, "Probe seed");
  gc->add_option("--tol", ko.tol, "Max relative error tolerance");
  gc->add_option("--out", ko.out, "Optional output directory for the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return run_simulate(*sim, so);
    if (gr->parsed()) return run_graphs(*gr, go);
    if (tr->parsed()) return run_train(*tr, to);
    if (ev->parsed()) return run_eval(*ev, eo);
    if (ex->parsed()) return run_explain(*ex, xo);
    if (gc->parsed()) return cmd_gradcheck(ko);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace looptwin
