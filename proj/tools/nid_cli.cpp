// nid: novel intent and domain discovery over utterance embeddings.
//
//   nid gen-synthetic --out DIR [--seed N] [--preset default|overlap]
//   nid detect|discover|link|evaluate|pipeline --config FILE [--seed N]
//       [--constraints FILE] [--eval] [--out DIR]
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nid/corpus.hpp"
#include "nid/error.hpp"
#include "nid/hier_cluster.hpp"
#include "nid/pipeline.hpp"
#include "nid/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> constraints;
  std::optional<std::string> out;
  bool eval = false;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags) {
  cmd->add_option("--config", flags.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", flags.seed, "Override the run seed");
  cmd->add_option("--constraints", flags.constraints, "Must-link / cannot-link constraints (JSON)");
  cmd->add_option("--out", flags.out, "Output directory");
  cmd->add_flag("--eval", flags.eval, "Score against truth labels carried by unlabeled utterances");
  cmd->add_flag("-q,--quiet", flags.quiet, "Suppress progress output");
}

nid::pipeline::RunConfig resolve_config(const RunFlags& flags) {
  auto cfg = nid::pipeline::load_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.constraints) cfg.constraints = fs::path(*flags.constraints);
  if (flags.out) cfg.out_dir = fs::path(*flags.out);
  if (flags.eval) cfg.eval = true;
  return cfg;
}

struct SynthFlags {
  std::string out;
  std::uint64_t seed = 0;
  std::string preset = "default";
};

// Writes a synthetic corpus, truth-consistent constraints over its novel
// utterances, and a config that points at them.
void write_synthetic(const SynthFlags& flags) {
  nid::synthetic::SyntheticSpec spec;
  spec.seed = flags.seed;
  if (flags.preset == "overlap") {
    spec = nid::synthetic::overlap_spec(flags.seed);
  } else if (flags.preset != "default") {
    throw nid::ConfigError("unknown preset '" + flags.preset + "'");
  }
  const auto corpus = nid::synthetic::generate(spec);
  const fs::path dir = flags.out;
  fs::create_directories(dir);
  nid::write_embeddings(corpus.embeddings, dir / "embeddings.emb1");

  std::string jsonl;
  std::vector<std::string> novel_ids, novel_labels;
  std::set<std::string> seen_intents;
  for (const auto& i : corpus.seen) seen_intents.insert(i.intent);
  for (const auto& u : corpus.utterances) {
    jsonl += nid::to_json(u).dump() + "\n";
    if (u.split == nid::Split::unlabeled && u.intent && !seen_intents.count(*u.intent)) {
      novel_ids.push_back(u.id);
      novel_labels.push_back(*u.intent);
    }
  }
  nid::detail::write_file_atomic(dir / "utterances.jsonl", jsonl);
  const auto cs = nid::synthetic::sample_constraints(novel_ids, novel_labels, 3, 4, flags.seed + 7);
  nid::detail::write_file_atomic(dir / "constraints.json", nid::cluster::to_json(cs).dump(2) + "\n");

  nlohmann::json config = {{"embeddings", "embeddings.emb1"},
                           {"utterances", "utterances.jsonl"},
                           {"out", "run"},
                           {"seed", flags.seed}};
  nid::detail::write_file_atomic(dir / "config.json", config.dump(2) + "\n");
  std::cout << "wrote " << corpus.utterances.size() << " utterances to " << dir.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Novel intent and domain discovery"};
  app.require_subcommand(1);

  RunFlags flags;
  auto* detect = app.add_subcommand("detect", "Flag unlabeled utterances with novel intents");
  auto* discover = app.add_subcommand("discover", "Learn a metric and cluster novel utterances");
  auto* link = app.add_subcommand("link", "Group discovered intents into domains");
  auto* evaluate = app.add_subcommand("evaluate", "Score stored artifacts against truth labels");
  auto* pipeline = app.add_subcommand("pipeline", "Run all stages and write a manifest");
  for (auto* cmd : {detect, discover, link, evaluate, pipeline}) add_run_flags(cmd, flags);

  SynthFlags synth;
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic fixture corpus");
  gen->add_option("--out", synth.out, "Output directory")->required();
  gen->add_option("--seed", synth.seed, "Generator seed");
  gen->add_option("--preset", synth.preset, "default | overlap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      write_synthetic(synth);
      return 0;
    }
    const auto cfg = resolve_config(flags);
    const nid::pipeline::StageLog log{flags.quiet ? nullptr : &std::cerr};
    if (pipeline->parsed()) {
      nid::pipeline::run_pipeline(cfg, log);
      return 0;
    }
    fs::create_directories(cfg.out_dir);
    const auto inputs = nid::pipeline::tagged("load", [&] { return nid::pipeline::load_inputs(cfg); });
    if (detect->parsed()) nid::pipeline::run_detect(cfg, inputs, log);
    if (discover->parsed()) nid::pipeline::run_discover(cfg, inputs, log);
    if (link->parsed()) nid::pipeline::run_link(cfg, inputs, log);
    if (evaluate->parsed()) nid::pipeline::run_evaluate(cfg, inputs, log);
    return 0;
  } catch (const nid::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
