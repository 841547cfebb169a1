// trix: command-line driver.
//
//   trix stats <dataset>
//   trix train --config run.json [--seed N] [--output DIR] ...
//   trix finetune --config run.json --checkpoint init.bin ...
//   trix eval --checkpoint ckpt.bin --dataset DIR --task entity|relation
//   trix expressivity [--seeds 20]
//   trix gradcheck [--seeds 5]
//   trix export-sim --checkpoint ckpt.bin --dataset DIR --out sim.csv
//
// Exit codes: 0 success, 1 check failure, 2 usage or input error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trix/trix.hpp"
#include "trix/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trix;

namespace {

constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct Globals {
  std::size_t threads = 1;
  bool deterministic = false;

  std::size_t effective_threads() const { return deterministic ? 1 : std::max<std::size_t>(threads, 1); }
};

json metrics_json(const RankMetrics& m) {
  return {{"count", m.count}, {"mrr", m.mrr}, {"hits@1", m.hits1}, {"hits@3", m.hits3}, {"hits@10", m.hits10}};
}

json report_json(const RankingReport& rep) {
  json j;
  j["task"] = to_string(rep.task);
  j["skipped"] = rep.skipped;
  for (const auto& [k, m] : rep.metrics) j["metrics"][k] = metrics_json(m);
  return j;
}

Dataset open_dataset(const std::string& name) { return load_dataset(resolve_dataset_path(name)); }

RankingReport evaluate(const ModelParams<float>& params, const Dataset& ds, Task task, const std::string& split,
                       std::size_t threads) {
  const RelationGraph rg = build_relation_graph(ds.eval_graph, params.config.relgraph_mode);
  const GraphContext<float> ctx(ds.eval_graph, rg, params.config.message_weighting);
  const FilterIndex filter = make_filter(ds.eval_graph, {std::span<const Triple>(ds.valid), std::span<const Triple>(ds.test)});
  const auto& queries = split == "valid" ? ds.valid : ds.test;
  EvalOptions opt;
  opt.threads = threads;
  return task == Task::ENTITY ? evaluate_entity(params, ctx, queries, filter, opt)
                              : evaluate_relation(params, ctx, queries, filter, opt);
}

// ---- stats ----

int cmd_stats(const std::string& dataset) {
  const Dataset ds = open_dataset(dataset);
  const KnowledgeGraph& g = ds.train_graph;
  std::printf("dataset\tentities\tbase_relations\tbase_triples\n");
  std::printf("%s\t%u\t%u\t%zu\n", ds.name.c_str(), g.num_entities(), g.num_relations_base(), g.num_base_triples());
  std::printf("\nconvention\tentries\tcount_sum\tcollapsed_entries\thh\ttt\tht\tth\talpha\tbound\n");
  for (const auto& c : count_conventions(g))
    std::printf("%s\t%llu\t%llu\t%llu\t%llu\t%llu\t%llu\t%llu\t%u\t%llu\n", c.name.c_str(),
                static_cast<unsigned long long>(c.entries), static_cast<unsigned long long>(c.count_sum),
                static_cast<unsigned long long>(c.collapsed_entries), static_cast<unsigned long long>(c.per_role[0]),
                static_cast<unsigned long long>(c.per_role[1]), static_cast<unsigned long long>(c.per_role[2]),
                static_cast<unsigned long long>(c.per_role[3]), c.alpha, static_cast<unsigned long long>(c.bound));
  return 0;
}

// ---- train / finetune ----

struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::vector<std::string> datasets;
  std::optional<std::string> eval_dataset;
  std::optional<std::string> checkpoint;
  std::optional<std::string> task;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> steps;
  std::optional<std::string> relgraph;
  std::optional<std::string> update;
};

void add_train_flags(CLI::App* sub, TrainFlags& f, bool finetune) {
  sub->add_option("--config", f.config, "run config JSON")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "training seed");
  sub->add_option("--output", f.output, "output directory");
  sub->add_option("--dataset", f.datasets, "training dataset (repeatable)");
  sub->add_option("--eval-dataset", f.eval_dataset, "dataset evaluated on its test split after training");
  auto* ck = sub->add_option("--checkpoint", f.checkpoint, "initial checkpoint");
  if (finetune) ck->required();
  sub->add_option("--task", f.task, "entity or relation");
  sub->add_option("--epochs", f.epochs);
  sub->add_option("--steps-per-epoch", f.steps);
  sub->add_option("--relgraph", f.relgraph, "trix, ultra or ingram");
  sub->add_option("--update", f.update, "iterative or sequential");
}

RunConfig resolve_run_config(const TrainFlags& f, bool finetune, const Globals& gl) {
  RunConfig rc;
  if (finetune) rc.train = TrainConfig::finetune_defaults();
  const json file = f.config.empty() ? json::object() : read_json_file(f.config);
  apply_json(file, rc);
  if (f.checkpoint) rc.checkpoint = *f.checkpoint;
  // A starting checkpoint supplies the model config; the file's model section still overrides it.
  if (!rc.checkpoint.empty()) {
    rc.model = load_checkpoint(rc.checkpoint).config;
    if (file.contains("model")) apply_json(file["model"], rc.model);
  }
  if (f.seed) rc.train.seed = *f.seed;
  if (f.output) rc.output_dir = *f.output;
  if (!f.datasets.empty()) rc.train_datasets = f.datasets;
  if (f.eval_dataset) rc.eval_dataset = *f.eval_dataset;
  if (f.task) rc.train.task = parse_task(*f.task);
  if (f.epochs) rc.train.epochs = *f.epochs;
  if (f.steps) rc.train.steps_per_epoch = *f.steps;
  if (f.relgraph) rc.model.relgraph_mode = parse_relgraph_mode(*f.relgraph);
  if (f.update) rc.model.update_mode = parse_update_mode(*f.update);
  rc.train.threads = gl.effective_threads();
  rc.model.validate();
  rc.train.validate();
  if (rc.output_dir.empty()) throw config_error("no output directory (--output or output.dir)");
  if (rc.train_datasets.empty()) throw config_error("no training datasets (--dataset or datasets.train)");
  return rc;
}

int cmd_train(const TrainFlags& f, bool finetune, const Globals& gl) {
  const RunConfig rc = resolve_run_config(f, finetune, gl);
  std::vector<TrainingGraph> graphs;
  for (const auto& name : rc.train_datasets) {
    Dataset ds = open_dataset(name);
    graphs.push_back({ds.name, std::move(ds.train_graph), std::move(ds.train_valid)});
  }
  ModelParams<float> initial = rc.checkpoint.empty() ? ModelParams<float>::init(rc.model, rc.train.seed)
                                                     : load_checkpoint(rc.checkpoint, rc.model);
  const fs::path out = rc.output_dir;
  fs::create_directories(out);
  write_json_file(out / "config.json", to_json(rc));

  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw config_error("cannot write '" + (out / "metrics.jsonl").string() + "'");
  double wall = 0.0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    // Wall time stays out of metrics.jsonl so identical runs produce identical files.
    wall += m.wall_time;
    json line = {{"epoch", m.epoch}, {"mean_loss", m.mean_loss}, {"degenerate_negatives", m.degenerate_negatives}};
    line["valid_mrr"] = m.valid_mrr ? json(*m.valid_mrr) : json(nullptr);
    metrics << line.dump() << '\n' << std::flush;
    std::fprintf(stderr, "epoch %zu loss %.6f valid_mrr %s\n", m.epoch, m.mean_loss,
                 m.valid_mrr ? std::to_string(*m.valid_mrr).c_str() : "-");
  };
  const TrainResult result = train(graphs, initial, rc.train, hooks);
  save_checkpoint(result.params, out / "checkpoint.bin");

  json report = {{"command", finetune ? "finetune" : "train"},
                 {"best_epoch", result.best_epoch},
                 {"epochs_run", result.metrics.size()},
                 {"early_stopped", result.early_stopped},
                 {"wall_time_seconds", wall}};
  if (!rc.eval_dataset.empty()) {
    const Dataset ds = open_dataset(rc.eval_dataset);
    report["eval"] = report_json(evaluate(result.params, ds, rc.train.task, "test", rc.train.threads));
    report["eval"]["dataset"] = ds.name;
  }
  write_json_file(out / "report.json", report);
  return 0;
}

// ---- eval ----

struct EvalFlags {
  std::string checkpoint;
  std::string dataset;
  std::string task = "entity";
  std::string split = "test";
  std::optional<std::string> output;
  std::optional<std::string> ranks;
};

int cmd_eval(const EvalFlags& f, const Globals& gl) {
  const auto params = load_checkpoint(f.checkpoint);
  const Dataset ds = open_dataset(f.dataset);
  const Task task = parse_task(f.task);
  const RankingReport rep = evaluate(params, ds, task, f.split, gl.effective_threads());
  json j = report_json(rep);
  j["dataset"] = ds.name;
  j["split"] = f.split;
  j["checkpoint"] = f.checkpoint;
  if (ds.dropped_queries) j["dropped_queries"] = ds.dropped_queries;
  if (f.output) {
    fs::create_directories(*f.output);
    write_json_file(fs::path(*f.output) / "report.json", j);
  }
  if (f.ranks) write_rank_dump(rep, ds.eval_graph, *f.ranks);
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ---- expressivity ----

int cmd_expressivity(std::size_t seeds, const std::string& weighting, const std::optional<std::string>& output) {
  const MessageWeighting w = parse_weighting(weighting);
  json j;
  bool ok = true;
  for (Gadget g : {Gadget::ULTRA_GADGET, Gadget::INGRAM_GADGET}) {
    const auto c = check_separation(g, seeds, w);
    ok = ok && c.passed();
    j["separation"].push_back({{"gadget", to_string(g)},
                               {"fooled_mode", to_string(c.fooled_mode)},
                               {"seeds", c.seeds},
                               {"fooled_entity_equal", c.fooled_entity_equal},
                               {"fooled_relation_equal", c.fooled_relation_equal},
                               {"trix_entity_separated", c.trix_entity_separated},
                               {"trix_relation_separated", c.trix_relation_separated},
                               {"certificate_valid", c.certificate.valid()},
                               {"passed", c.passed()}});
  }
  const auto sub = check_subsumption(10, 0, w);
  ok = ok && sub.passed;
  j["subsumption"] = {{"trials", sub.trials},
                      {"max_abs_diff_trix", sub.max_abs_diff_trix},
                      {"max_abs_diff_ultra", sub.max_abs_diff_ultra},
                      {"passed", sub.passed}};
  j["passed"] = ok;
  if (output) {
    fs::create_directories(*output);
    write_json_file(fs::path(*output) / "report.json", j);
  }
  std::cout << j.dump(2) << '\n';
  return ok ? 0 : kCheckFailed;
}

// ---- gradcheck ----

int cmd_gradcheck(std::size_t seeds, std::size_t hidden_dim) {
  ModelConfig cfg;
  cfg.hidden_dim = hidden_dim;
  const KnowledgeGraph g = gradcheck_graph();
  json j;
  bool ok = true;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto r = gradient_check(g, cfg, s);
    ok = ok && r.passed;
    j["seeds"].push_back({{"seed", s},
                          {"checked", r.checked},
                          {"max_rel_error", r.max_rel_error},
                          {"refined", r.refined},
                          {"worst", r.worst},
                          {"passed", r.passed}});
  }
  j["passed"] = ok;
  std::cout << j.dump(2) << '\n';
  return ok ? 0 : kCheckFailed;
}

// ---- export-sim ----

int cmd_export_sim(const std::string& checkpoint, const std::string& dataset, const std::string& out,
                   std::size_t samples) {
  const auto params = load_checkpoint(checkpoint);
  const Dataset ds = open_dataset(dataset);
  const RelationGraph rg = build_relation_graph(ds.eval_graph, params.config.relgraph_mode);
  const GraphContext<float> ctx(ds.eval_graph, rg, params.config.message_weighting);
  export_relation_similarity(params, ctx, out, samples);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation-graph link prediction toolkit"};
  app.require_subcommand(1);
  Globals gl;
  app.add_option("--threads", gl.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", gl.deterministic, "single-threaded numeric paths");

  std::string stats_dataset;
  auto* stats = app.add_subcommand("stats", "dataset and relation-graph statistics (TSV)");
  stats->add_option("dataset", stats_dataset)->required();

  TrainFlags train_flags, finetune_flags;
  auto* train_cmd = app.add_subcommand("train", "train from scratch");
  add_train_flags(train_cmd, train_flags, false);
  auto* finetune_cmd = app.add_subcommand("finetune", "continue training from a checkpoint");
  add_train_flags(finetune_cmd, finetune_flags, true);

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "ranking evaluation");
  eval_cmd->add_option("--checkpoint", ef.checkpoint)->required();
  eval_cmd->add_option("--dataset", ef.dataset)->required();
  eval_cmd->add_option("--task", ef.task)->check(CLI::IsMember({"entity", "relation"}));
  eval_cmd->add_option("--split", ef.split)->check(CLI::IsMember({"valid", "test"}));
  eval_cmd->add_option("--output", ef.output, "directory for report.json");
  eval_cmd->add_option("--ranks", ef.ranks, "per-query rank TSV");

  std::size_t expr_seeds = 20;
  std::string expr_weighting = "binary";
  std::optional<std::string> expr_output;
  auto* expr_cmd = app.add_subcommand("expressivity", "separation and subsumption checks");
  expr_cmd->add_option("--seeds", expr_seeds);
  expr_cmd->add_option("--weighting", expr_weighting)->check(CLI::IsMember({"binary", "log_count"}));
  expr_cmd->add_option("--output", expr_output, "directory for report.json");

  std::size_t gc_seeds = 5, gc_dim = 8;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc_cmd->add_option("--seeds", gc_seeds);
  gc_cmd->add_option("--hidden-dim", gc_dim)->check(CLI::PositiveNumber);

  std::string sim_ckpt, sim_dataset, sim_out;
  std::size_t sim_samples = 64;
  auto* sim_cmd = app.add_subcommand("export-sim", "relation cosine-similarity CSV");
  sim_cmd->add_option("--checkpoint", sim_ckpt)->required();
  sim_cmd->add_option("--dataset", sim_dataset)->required();
  sim_cmd->add_option("--out", sim_out)->required();
  sim_cmd->add_option("--samples", sim_samples)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*stats) return cmd_stats(stats_dataset);
    if (*train_cmd) return cmd_train(train_flags, false, gl);
    if (*finetune_cmd) return cmd_train(finetune_flags, true, gl);
    if (*eval_cmd) return cmd_eval(ef, gl);
    if (*expr_cmd) return cmd_expressivity(expr_seeds, expr_weighting, expr_output);
    if (*gc_cmd) return cmd_gradcheck(gc_seeds, gc_dim);
    if (*sim_cmd) return cmd_export_sim(sim_ckpt, sim_dataset, sim_out, sim_samples);
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  } catch (const trix::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
