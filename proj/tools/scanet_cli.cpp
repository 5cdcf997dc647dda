// Command-line front end: corpus generation, complexity estimation,
// two-stage training, evaluation and the scene/proposal mismatch report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scanet/config.hpp"
#include "scanet/corpus.hpp"
#include "scanet/digest.hpp"
#include "scanet/error.hpp"
#include "scanet/eval.hpp"
#include "scanet/log.hpp"
#include "scanet/scene_complexity.hpp"
#include "scanet/synthetic.hpp"
#include "scanet/trainer.hpp"

namespace fs = std::filesystem;
using namespace scanet;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return digest_hex(os.str());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string config_help() {
  const nlohmann::json defaults = RunConfig{}.to_json();
  std::string out = "\nConfig keys (JSON file and --set key=value; 'seed' is required in files):\n";
  for (const auto& f : config_fields()) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-14s %-10s %s\n", f.name, defaults.at(f.name).dump().c_str(), f.doc);
    out += line;
  }
  out += "\nEnvironment: SCANET_LOG=debug|info|warn|error|off (default warn)\n";
  return out;
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& o : overrides) cfg = apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

AnnotationCorpus open_corpus(const std::string& path, const RunConfig& cfg) {
  return load_corpus(path, cfg.corpus_options());
}

// ---------------------------------------------------------------- commands

struct GenerateArgs {
  std::string spec, out, oracle;
};

void cmd_generate(const GenerateArgs& a) {
  const auto spec = load_synthetic_spec(a.spec);
  auto [corpus, oracle] = generate_synthetic(spec);
  save_corpus(corpus, a.out);
  save_oracle(oracle, a.oracle.empty() ? a.out + ".oracle.json" : a.oracle);
  log::info("generated ", corpus.videos().size(), " videos, ", corpus.queries().size(), " queries");
}

struct ComplexityArgs {
  std::string corpus, human_nouns, out;
  std::size_t K = kDefaultMaxComplexity;
};

void cmd_complexity(const ComplexityArgs& a) {
  const auto corpus = load_corpus(a.corpus);
  const HumanNouns nouns = a.human_nouns.empty() ? default_human_nouns() : load_human_nouns(a.human_nouns);
  std::string csv = "video_id,alpha,raw_count,n_queries\n";
  for (std::size_t v = 0; v < corpus.videos().size(); ++v) {
    const auto& id = corpus.videos()[v].video_id;
    if (corpus.query_indices(v).empty()) {
      log::warn("video '", id, "' has no queries; skipped");
      continue;
    }
    const auto sc = estimate(id, corpus, a.K, nouns);
    csv += id + "," + std::to_string(sc.alpha) + "," + std::to_string(sc.raw_count) + "," +
           std::to_string(sc.n_queries) + "\n";
  }
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
}

struct TrainArgs {
  std::string corpus, config, out;
  std::vector<std::string> overrides;
};

void cmd_train(const TrainArgs& a) {
  const RunConfig cfg = resolve_config(a.config, a.overrides);
  const auto corpus = open_corpus(a.corpus, cfg);
  const fs::path dir(a.out);
  make_dir(dir);
  write_file(dir / "config.json", cfg.to_json().dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  if (!metrics) throw IoError("cannot write '" + (dir / "metrics.csv").string() + "'");
  metrics << kMetricsHeader << '\n';

  Model model = init_model(cfg, corpus);
  save_checkpoint(model, (dir / "init.ckpt").string());
  const std::size_t total = cfg.steps_stage1 + cfg.steps_stage2;
  auto result = train_two_stage(
      model, corpus, [&](const Model& m) { save_checkpoint(m, (dir / "stage1.ckpt").string()); },
      [&](const StepMetrics& s) {
        metrics << metrics_row(s) << '\n';
        const std::size_t done = s.step + 1 + (s.stage == 2 ? cfg.steps_stage1 : 0);
        if (done % 100 == 0 || done == total) {
          log::info("stage ", s.stage, " step ", s.step + 1, " total ", s.total, " l_mqr ", s.l_mqr);
        }
      });
  save_checkpoint(model, (dir / "stage2.ckpt").string());

  nlohmann::json cache = nlohmann::json::object();
  for (const auto& [qid, list] : result.cache.lists) cache[qid] = list;
  write_file(dir / "cache.json", cache.dump(2) + "\n");
  if (!metrics) throw IoError("failed writing metrics log");
}

struct EvalArgs {
  std::string corpus, checkpoint, config, out, strategy = "adaptive", scenes = "fsc", oracle;
};

eval::EvalReport run_eval(const EvalArgs& a, const Model& model, const AnnotationCorpus& corpus) {
  const auto source = eval::parse_scene_source(a.scenes);
  const auto strategy = eval::parse_strategy(a.strategy);
  std::optional<OracleAnnotations> oracle;
  if (source == eval::SceneSource::Oracle) {
    if (a.oracle.empty()) throw ConfigError("--scenes oracle needs --oracle <file>");
    oracle = load_oracle(a.oracle);
  }
  return eval::build_report(eval::predict(model, corpus, strategy), corpus, a.strategy, source,
                            oracle ? &*oracle : nullptr);
}

Model open_checkpoint(const EvalArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  if (!a.config.empty()) {
    const RunConfig cfg = load_config(a.config);
    if (cfg.digest() != model.cfg.digest()) {
      throw ConfigError("config '" + a.config + "' differs from the one recorded in '" + a.checkpoint + "'");
    }
  }
  return model;
}

void cmd_eval(const EvalArgs& a) {
  const Model model = open_checkpoint(a);
  const auto corpus = open_corpus(a.corpus, model.cfg);
  const auto report = run_eval(a, model, corpus);
  const fs::path dir(a.out);
  make_dir(dir);
  write_file(dir / "config.json", model.cfg.to_json().dump(2) + "\n");
  write_file(dir / "predictions.csv", eval::predictions_csv(report));
  write_file(dir / "heatmap.csv", eval::heatmap_csv(report.heatmap));
  auto summary = eval::summary_json(report);
  summary["scene_source"] = a.scenes;
  summary["config_digest"] = model.cfg.digest();
  summary["param_digest"] = model.store.digest();
  summary["corpus_digest"] = file_digest(a.corpus);
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  std::printf("R@1,IoU=0.3 %.4f  R@1,IoU=0.5 %.4f  R@5,IoU=0.5 %.4f  mIoU %.4f\n", report.r_at(1, 0.3),
              report.r_at(1, 0.5), report.r_at(5, 0.5), report.miou);
}

void cmd_mismatch(const EvalArgs& a) {
  const Model model = open_checkpoint(a);
  const auto corpus = open_corpus(a.corpus, model.cfg);
  const auto csv = eval::heatmap_csv(run_eval(a, model, corpus).heatmap);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-complexity aware moment retrieval: data, training and evaluation"};
  app.require_subcommand(1);
  app.footer(config_help());

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic corpus with planted scenes");
  g->add_option("--spec", gen.spec, "synthetic spec JSON")->required();
  g->add_option("--out", gen.out, "corpus JSONL to write")->required();
  g->add_option("--oracle", gen.oracle, "planted ground truth (default <out>.oracle.json)");

  ComplexityArgs cx;
  auto* c = app.add_subcommand("complexity", "Scene complexity per video as CSV");
  c->add_option("--corpus", cx.corpus, "corpus JSONL")->required();
  c->add_option("--K", cx.K, "maximum complexity")->capture_default_str();
  c->add_option("--human-nouns", cx.human_nouns, "file with one excluded noun per line");
  c->add_option("--out", cx.out, "CSV path (default stdout)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Stage 1, negative cache, stage 2; writes a run directory");
  t->add_option("--corpus", tr.corpus, "corpus JSONL")->required();
  t->add_option("--config", tr.config, "run config JSON")->required();
  t->add_option("--out", tr.out, "run directory")->required();
  t->add_option("--set", tr.overrides, "config override key=value (repeatable, wins over the file)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Recall, mIoU and heatmap for a checkpoint");
  EvalArgs mm;
  auto* m = app.add_subcommand("mismatch", "Scene/proposal heatmap CSV for one strategy");
  for (auto [cmd, args] : {std::pair{e, &ev}, std::pair{m, &mm}}) {
    cmd->add_option("--corpus", args->corpus, "corpus JSONL")->required();
    cmd->add_option("--checkpoint", args->checkpoint, "checkpoint manifest")->required();
    cmd->add_option("--strategy", args->strategy, "adaptive | fixed:n | window:w[/w2],s")->capture_default_str();
    cmd->add_option("--scenes", args->scenes, "scene-count source: oracle | gt | fsc")->capture_default_str();
    cmd->add_option("--oracle", args->oracle, "oracle file for --scenes oracle");
  }
  e->add_option("--config", ev.config, "run config; must match the checkpoint");
  e->add_option("--out", ev.out, "report directory")->required();
  m->add_option("--out", mm.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: usage: " << err.what() << '\n';
    return 2;
  }

  try {
    if (*g) cmd_generate(gen);
    if (*c) cmd_complexity(cx);
    if (*t) cmd_train(tr);
    if (*e) cmd_eval(ev);
    if (*m) cmd_mismatch(mm);
  } catch (const Error& err) {
    std::cerr << "error: " << to_string(err.kind()) << ": " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: internal: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
