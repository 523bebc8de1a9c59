// kgalign: train, evaluate, explain and curate cross-graph entity alignments.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "kgalign/align.hpp"
#include "kgalign/batching.hpp"
#include "kgalign/kg.hpp"
#include "kgalign/service.hpp"
#include "kgalign/training.hpp"

namespace fs = std::filesystem;
using namespace kgalign;

namespace {

fs::path resolve(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("IALIGN_DATA_DIR"); root && *root) return fs::path(root) / path;
  return path;
}

struct DataArgs {
  std::string kg_a, kg_b, seed;
  double train_fraction = 0.3;
  std::uint64_t split_seed = 0;
  bool split_seed_set = false;
};

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--kg-a", d.kg_a, "triple TSV of graph A")->required();
  cmd->add_option("--kg-b", d.kg_b, "triple TSV of graph B")->required();
  cmd->add_option("--seed", d.seed, "seed alignment TSV")->required();
}

Dataset load_dataset(const DataArgs& d, double train_fraction, std::uint64_t split_seed) {
  Dataset data;
  data.a = parse_triples(resolve(d.kg_a), GraphLabel::A);
  data.b = parse_triples(resolve(d.kg_b), GraphLabel::B);
  data.seeds = load_seed_alignment(resolve(d.seed), data.a, data.b, train_fraction, split_seed);
  return data;
}

Metric parse_metric(const std::string& m) { return m == "l2" ? Metric::L2 : Metric::Cosine; }

NormalizationMap load_normalization(const std::string& path) {
  NormalizationMap map;
  if (path.empty()) return map;
  std::ifstream in(resolve(path));
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("normalization map: expected two fields at line " + std::to_string(n));
    map[unescape_field(line.substr(0, tab))] = unescape_field(line.substr(tab + 1));
  }
  return map;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable knowledge-graph entity alignment"};
  app.require_subcommand(1);

  // gen-synthetic
  SyntheticConfig syn;
  std::string syn_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic graph pair (a.tsv, b.tsv, gold.tsv)");
  gen->add_option("--n", syn.n_entities, "entities per graph")->capture_default_str();
  gen->add_option("--attrs", syn.attr_per_entity, "attributes per entity")->capture_default_str();
  gen->add_option("--rel-density", syn.rel_density, "edge probability per entity pair")->capture_default_str();
  gen->add_option("--noise", syn.char_noise, "per-character flip probability in B")->capture_default_str();
  gen->add_option("--dropout", syn.rel_dropout, "relationship drop probability in B")->capture_default_str();
  gen->add_option("--seed-rng", syn.rng_seed, "random seed")->capture_default_str();
  gen->add_option("--out", syn_out, "output directory")->required();

  // train
  DataArgs train_data;
  TrainConfig cfg;
  cfg.epochs = 100;
  std::string train_out;
  std::size_t checkpoint_every = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint directory");
  add_data_options(train_cmd, train_data);
  train_cmd->add_option("--out", train_out, "checkpoint directory")->required();
  train_cmd->add_option("--epochs", cfg.epochs)->capture_default_str();
  train_cmd->add_option("--parts", cfg.num_parts, "parts per graph (0: ~512 entities each)")->capture_default_str();
  train_cmd->add_option("--dim", cfg.dims.dim)->capture_default_str();
  train_cmd->add_option("--heads", cfg.dims.heads)->capture_default_str();
  train_cmd->add_option("--layers", cfg.dims.layers)->capture_default_str();
  train_cmd->add_option("--margin", cfg.margin)->capture_default_str();
  train_cmd->add_option("--negatives", cfg.negatives)->capture_default_str();
  train_cmd->add_option("--lr", cfg.lr)->capture_default_str();
  train_cmd->add_option("--seed-rng", cfg.rng_seed, "seed for initialization, split and sampling")->capture_default_str();
  train_cmd->add_option("--train-fraction", cfg.train_fraction)->capture_default_str();
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "also save <out>/epoch-N every N epochs");

  // eval / explain / removal / serve share checkpoint loading
  DataArgs eval_data;
  std::string eval_ckpt, eval_metric = "cosine";
  auto* eval_cmd = app.add_subcommand("eval", "print Hits@1 and Hits@10 on the test split");
  add_data_options(eval_cmd, eval_data);
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--metric", eval_metric)->check(CLI::IsMember({"cosine", "l2"}))->capture_default_str();

  DataArgs explain_data;
  std::string explain_ckpt, explain_metric = "cosine", explain_out;
  std::size_t top_n = kDefaultTopN;
  auto* explain_cmd = app.add_subcommand("explain", "write explanations of test predictions as JSON lines");
  add_data_options(explain_cmd, explain_data);
  explain_cmd->add_option("--ckpt", explain_ckpt, "checkpoint directory")->required();
  explain_cmd->add_option("--top-n", top_n)->capture_default_str();
  explain_cmd->add_option("--metric", explain_metric)->check(CLI::IsMember({"cosine", "l2"}))->capture_default_str();
  explain_cmd->add_option("--out", explain_out, "output file (default stdout)");

  DataArgs removal_data;
  std::string removal_ckpt, removal_kind = "attributes", removal_map, removal_metric = "cosine";
  RemovalOptions removal_opts;
  auto* removal_cmd = app.add_subcommand("removal", "feature-removal analysis as CSV");
  add_data_options(removal_cmd, removal_data);
  removal_cmd->add_option("--ckpt", removal_ckpt, "checkpoint directory")->required();
  removal_cmd->add_option("--kind", removal_kind)->check(CLI::IsMember({"attributes", "neighbors"}))->capture_default_str();
  removal_cmd->add_option("--runs", removal_opts.runs)->capture_default_str();
  removal_cmd->add_option("--top-n", removal_opts.top_n)->capture_default_str();
  removal_cmd->add_option("--normalize", removal_map, "TSV synonym table used by the Jaccard score");
  removal_cmd->add_option("--metric", removal_metric)->check(CLI::IsMember({"cosine", "l2"}))->capture_default_str();

  std::string part_kg, part_out;
  std::size_t part_count = 0;
  std::uint64_t part_seed = 0;
  auto* part_cmd = app.add_subcommand("partition", "partition one graph and dump the parts as JSON");
  part_cmd->add_option("--kg-a", part_kg, "triple TSV")->required();
  part_cmd->add_option("--parts", part_count, "number of parts (0: ~512 entities each)")->capture_default_str();
  part_cmd->add_option("--seed-rng", part_seed)->capture_default_str();
  part_cmd->add_option("--out", part_out, "output file (default stdout)");

  DataArgs serve_data;
  std::string serve_ckpt, serve_log, serve_ui, serve_metric = "cosine", serve_host = "127.0.0.1";
  int port = 8080;
  std::size_t serve_top_n = kDefaultTopN;
  bool high_first = false;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP curation API");
  add_data_options(serve_cmd, serve_data);
  serve_cmd->add_option("--ckpt", serve_ckpt, "checkpoint directory")->required();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--host", serve_host)->capture_default_str();
  serve_cmd->add_option("--top-n", serve_top_n)->capture_default_str();
  serve_cmd->add_option("--metric", serve_metric)->check(CLI::IsMember({"cosine", "l2"}))->capture_default_str();
  serve_cmd->add_option("--decisions", serve_log, "decision log (default <ckpt>/decisions.jsonl)");
  serve_cmd->add_option("--ui", serve_ui, "static UI directory mounted at /");
  serve_cmd->add_flag("--highest-first", high_first, "review the most confident predictions first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const fs::path out = resolve(syn_out);
      fs::create_directories(out);
      const SyntheticPair pair = gen_synthetic_pair(syn);
      write_triples(pair.a, out / "a.tsv");
      write_triples(pair.b, out / "b.tsv");
      std::ofstream gold(out / "gold.tsv");
      write_alignment(pair.gold, pair.a, pair.b, gold);
      std::cout << "wrote " << (out / "a.tsv").string() << ", " << (out / "b.tsv").string() << ", "
                << (out / "gold.tsv").string() << "\n";
      return 0;
    }

    if (*train_cmd) {
      const Dataset data = load_dataset(train_data, cfg.train_fraction, cfg.rng_seed);
      const fs::path out = resolve(train_out);
      const auto start = std::chrono::steady_clock::now();
      Checkpoint ckpt;
      try {
        ckpt = train(cfg, data, [&](const Trainer& t) {
          const EpochLosses& l = t.history().back();
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          std::cerr << "epoch " << l.epoch << "  align " << l.align << "  he1 " << l.he1 << "  he2 " << l.he2
                    << "  reg " << l.reg << "  (" << secs << "s)\n";
          if (checkpoint_every > 0 && l.epoch % checkpoint_every == 0) {
            save_checkpoint(t.snapshot(), out / ("epoch-" + std::to_string(l.epoch)));
          }
        });
      } catch (const DivergenceError& e) {
        save_checkpoint(e.last_good(), out / "last-good");
        std::cerr << "error: " << e.what() << "; last good state saved to " << (out / "last-good").string() << "\n";
        return 1;
      }
      save_checkpoint(ckpt, out);
      std::ofstream csv(out / "loss.csv");
      write_loss_csv(ckpt.history, csv);
      std::cout << "checkpoint written to " << out.string() << "\n";
      return 0;
    }

    auto load_for = [](const DataArgs& d, const std::string& ckpt_dir, Checkpoint& ckpt) {
      ckpt = load_checkpoint(resolve(ckpt_dir));
      Dataset data = load_dataset(d, ckpt.config.train_fraction, ckpt.config.rng_seed);
      check_compatible(ckpt, data.a, data.b);
      return data;
    };

    if (*eval_cmd) {
      Checkpoint ckpt;
      const Dataset data = load_for(eval_data, eval_ckpt, ckpt);
      const ModelView model = view_of(ckpt);
      const auto ta = embed_all(data.a, model);
      const auto tb = embed_all(data.b, model);
      const EvalResult r = evaluate(ta, tb, data.seeds.test(), parse_metric(eval_metric));
      std::cout << "Hits@1\t" << format_percent(r.hits1) << "\n";
      std::cout << "Hits@10\t" << format_percent(r.hits10) << "\n";
      return 0;
    }

    if (*explain_cmd) {
      Checkpoint ckpt;
      const Dataset data = load_for(explain_data, explain_ckpt, ckpt);
      const ModelView model = view_of(ckpt);
      const auto ta = embed_all(data.a, model, true);
      const auto tb = embed_all(data.b, model, true);
      const auto test = data.seeds.test();
      const EvalResult r = evaluate(ta, tb, test, parse_metric(explain_metric), 1);
      std::ofstream file;
      if (!explain_out.empty()) file.open(resolve(explain_out));
      std::ostream& out = explain_out.empty() ? std::cout : file;
      for (std::size_t i = 0; i < r.predictions.size(); ++i) {
        const auto& p = r.predictions[i];
        const Explanation e = explain(i, p.top.front().second, data.a, *ta.internals, p.query, data.b, *tb.internals,
                                      p.top.front().first, top_n);
        out << to_json(e).dump() << "\n";
      }
      return 0;
    }

    if (*removal_cmd) {
      Checkpoint ckpt;
      const Dataset data = load_for(removal_data, removal_ckpt, ckpt);
      removal_opts.metric = parse_metric(removal_metric);
      const auto kind = removal_kind == "attributes" ? RemovalKind::Attributes : RemovalKind::Neighbors;
      const auto report = removal_analysis(data, ckpt, kind, load_normalization(removal_map), removal_opts);
      std::cout << "run,hits1,attr_jaccard,neighbor_jaccard,attr_triples_a,attr_triples_b,rel_triples_a,rel_triples_b\n";
      for (const auto& r : report) {
        std::cout << r.run << ',' << format_percent(r.hits1) << ',' << r.jaccard.attributes << ','
                  << r.jaccard.neighbors << ',' << r.attr_triples_a << ',' << r.attr_triples_b << ','
                  << r.rel_triples_a << ',' << r.rel_triples_b << "\n";
      }
      return 0;
    }

    if (*part_cmd) {
      const KnowledgeGraph kg = parse_triples(resolve(part_kg), GraphLabel::A);
      const std::size_t k = part_count == 0 ? default_num_parts(kg.num_entities()) : part_count;
      const Partition p = partition_graph(kg, k, part_seed);
      nlohmann::json parts = nlohmann::json::array();
      for (const auto& part : p.parts) {
        nlohmann::json names = nlohmann::json::array();
        for (EntityId v : part) names.push_back(kg.entities().name(v));
        parts.push_back(names);
      }
      const nlohmann::json doc{{"num_parts", k}, {"edge_cut", p.edge_cut}, {"parts", parts}};
      if (part_out.empty()) {
        std::cout << doc.dump(2) << "\n";
      } else {
        std::ofstream(resolve(part_out)) << doc.dump(2) << "\n";
      }
      return 0;
    }

    if (*serve_cmd) {
      Checkpoint ckpt;
      const Dataset data = load_for(serve_data, serve_ckpt, ckpt);
      const fs::path log = serve_log.empty() ? resolve(serve_ckpt) / "decisions.jsonl" : resolve(serve_log);
      ServiceOptions opts;
      opts.top_n = serve_top_n;
      opts.metric = parse_metric(serve_metric);
      opts.highest_score_first = high_first;
      CurationService service(data, ckpt, log, opts);
      httplib::Server server;
      std::optional<fs::path> ui;
      if (!serve_ui.empty()) ui = resolve(serve_ui);
      register_routes(server, service, ui);
      std::cerr << "serving " << service.pairs().size() << " pairs on http://" << serve_host << ":" << port << "\n";
      if (!server.listen(serve_host, port)) {
        std::cerr << "error: cannot listen on " << serve_host << ":" << port << "\n";
        return 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
