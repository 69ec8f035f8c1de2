#pragma once

// Run configuration and the stage commands behind the CLI. Stages exchange
// data only through files in the output directory, so each can be rerun on
// its own.
//
//   detect    head.json, novel_ids.txt, detection.json
//   discover  encoder.json, clustering.json
//   link      taxonomy.json
//   evaluate  report.json
//   pipeline  all of the above plus manifest.json (and timings.json)

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nid/corpus.hpp"
#include "nid/detail/files.hpp"
#include "nid/error.hpp"
#include "nid/hier_cluster.hpp"
#include "nid/metric_learner.hpp"
#include "nid/metrics.hpp"
#include "nid/novelty_detector.hpp"
#include "nid/taxonomy.hpp"

namespace nid::pipeline {

inline constexpr std::string_view kVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kHeadFile = "head.json";
inline constexpr const char* kNovelFile = "novel_ids.txt";
inline constexpr const char* kDetectionFile = "detection.json";
inline constexpr const char* kEncoderFile = "encoder.json";
inline constexpr const char* kClusteringFile = "clustering.json";
inline constexpr const char* kTaxonomyFile = "taxonomy.json";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTimingsFile = "timings.json";

struct RunConfig {
  fs::path embeddings;
  fs::path utterances;
  std::optional<fs::path> constraints;
  fs::path out_dir = "run";
  std::uint64_t seed = 0;
  bool eval = false;

  // "auto" picks m_unseen when every OOD row has an intent, else one_unseen.
  std::string detector_mode = "auto";
  double risk_factor = 3.0;
  detector::TrainConfig detector;

  metric::LossConfig loss;
  metric::MetricTrainConfig metric;

  cluster::F1Variant f1_variant = cluster::F1Variant::pairwise;
  bool joint_domains = false;
  metrics::EntropyMean nmi_mean = metrics::EntropyMean::arithmetic;
  bool taxonomy_centroids = false;

  std::uint64_t detector_seed() const noexcept { return seed; }
  std::uint64_t metric_seed() const noexcept { return seed + 1; }
};

namespace detail {

// Reads `key` from `obj` into `out` if present, rejecting unknown keys.
class Reader {
 public:
  Reader(const json& obj, std::string section) : obj_(obj), section_(std::move(section)) {
    if (!obj_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    known_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where() + "bad value for '" + key + "'");
    }
  }

  const json* child(const char* key) {
    known_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!known_.count(key)) throw ConfigError(where() + "unknown key '" + key + "'");
    }
  }

 private:
  std::string where() const { return "config" + (section_.empty() ? "" : "." + section_) + ": "; }
  const json& obj_;
  std::string section_;
  std::set<std::string> known_;
};

}  // namespace detail

// Relative paths are resolved against `base_dir`.
inline RunConfig config_from_json(const json& j, const fs::path& base_dir) {
  RunConfig cfg;
  detail::Reader top(j, "");
  std::string embeddings, utterances, out, constraints;
  top.get("embeddings", embeddings);
  top.get("utterances", utterances);
  top.get("constraints", constraints);
  top.get("out", out);
  top.get("seed", cfg.seed);
  top.get("eval", cfg.eval);
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  if (!embeddings.empty()) cfg.embeddings = resolve(embeddings);
  if (!utterances.empty()) cfg.utterances = resolve(utterances);
  if (!constraints.empty()) cfg.constraints = resolve(constraints);
  if (!out.empty()) cfg.out_dir = resolve(out);

  if (const json* d = top.child("detector")) {
    detail::Reader r(*d, "detector");
    r.get("mode", cfg.detector_mode);
    r.get("risk_factor", cfg.risk_factor);
    r.get("learning_rate", cfg.detector.learning_rate);
    r.get("batch_size", cfg.detector.batch_size);
    r.get("epochs", cfg.detector.epochs);
    r.get("beta1", cfg.detector.adam_beta1);
    r.get("beta2", cfg.detector.adam_beta2);
    r.get("l2_weight", cfg.detector.l2_weight);
    r.get("balance_classes", cfg.detector.balance_classes);
    r.finish();
  }
  if (const json* m = top.child("metric")) {
    detail::Reader r(*m, "metric");
    r.get("hidden", cfg.metric.hidden);
    r.get("output", cfg.metric.output);
    r.get("m1", cfg.loss.m1);
    r.get("m2", cfg.loss.m2);
    r.get("m3", cfg.loss.m3);
    r.get("alpha", cfg.loss.alpha);
    r.get("beta", cfg.loss.beta);
    r.get("learning_rate", cfg.metric.learning_rate);
    r.get("batch_quadruplets", cfg.metric.batch_quadruplets);
    r.get("epochs", cfg.metric.epochs);
    r.get("per_anchor", cfg.metric.per_anchor);
    r.get("beta1", cfg.metric.adam_beta1);
    r.get("beta2", cfg.metric.adam_beta2);
    r.finish();
  }
  if (const json* c = top.child("cluster")) {
    detail::Reader r(*c, "cluster");
    std::string f1 = "pairwise";
    r.get("f1", f1);
    cfg.f1_variant = cluster::parse_f1_variant(f1);
    r.get("joint_domains", cfg.joint_domains);
    r.finish();
  }
  if (const json* e = top.child("evaluation")) {
    detail::Reader r(*e, "evaluation");
    std::string mean = "arithmetic";
    r.get("nmi_mean", mean);
    cfg.nmi_mean = metrics::parse_entropy_mean(mean);
    r.finish();
  }
  if (const json* t = top.child("taxonomy")) {
    detail::Reader r(*t, "taxonomy");
    r.get("centroids", cfg.taxonomy_centroids);
    r.finish();
  }
  top.finish();

  if (cfg.detector_mode != "auto") detector::parse_head_mode(cfg.detector_mode);
  cfg.detector.validate();
  cfg.metric.validate();
  cfg.loss.validate();
  if (cfg.risk_factor < 0.0) throw ConfigError("config.detector: risk_factor must be >= 0");
  return cfg;
}

inline RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(nid::detail::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j, path.parent_path());
}

// Effective configuration, recorded in the manifest.
inline json to_json(const RunConfig& cfg) {
  json j;
  j["embeddings"] = cfg.embeddings.string();
  j["utterances"] = cfg.utterances.string();
  j["constraints"] = cfg.constraints ? json(cfg.constraints->string()) : json(nullptr);
  j["out"] = cfg.out_dir.string();
  j["seed"] = cfg.seed;
  j["eval"] = cfg.eval;
  j["detector"] = {{"mode", cfg.detector_mode},
                   {"risk_factor", cfg.risk_factor},
                   {"learning_rate", cfg.detector.learning_rate},
                   {"batch_size", cfg.detector.batch_size},
                   {"epochs", cfg.detector.epochs},
                   {"beta1", cfg.detector.adam_beta1},
                   {"beta2", cfg.detector.adam_beta2},
                   {"l2_weight", cfg.detector.l2_weight},
                   {"balance_classes", cfg.detector.balance_classes}};
  j["metric"] = {{"hidden", cfg.metric.hidden},
                 {"output", cfg.metric.output},
                 {"m1", cfg.loss.m1},
                 {"m2", cfg.loss.m2},
                 {"m3", cfg.loss.m3},
                 {"alpha", cfg.loss.alpha},
                 {"beta", cfg.loss.beta},
                 {"learning_rate", cfg.metric.learning_rate},
                 {"batch_quadruplets", cfg.metric.batch_quadruplets},
                 {"epochs", cfg.metric.epochs},
                 {"per_anchor", cfg.metric.per_anchor},
                 {"beta1", cfg.metric.adam_beta1},
                 {"beta2", cfg.metric.adam_beta2}};
  j["cluster"] = {{"f1", std::string(cluster::to_string(cfg.f1_variant))},
                  {"joint_domains", cfg.joint_domains}};
  j["evaluation"] = {{"nmi_mean", cfg.nmi_mean == metrics::EntropyMean::arithmetic ? "arithmetic"
                                                                                   : "geometric"}};
  j["taxonomy"] = {{"centroids", cfg.taxonomy_centroids}};
  return j;
}

// Loaded corpus and its views.
struct Inputs {
  Dataset dataset;
  SplitViews views;
  View seen_all;  // train_seen + validation
};

inline Inputs load_inputs(const RunConfig& cfg) {
  if (cfg.embeddings.empty()) throw ConfigError("config: 'embeddings' path is required");
  if (cfg.utterances.empty()) throw ConfigError("config: 'utterances' path is required");
  for (const auto& p : {cfg.embeddings, cfg.utterances}) {
    if (!fs::exists(p)) throw ConfigError("config: file not found: " + p.string());
  }
  if (cfg.constraints && !fs::exists(*cfg.constraints)) {
    throw ConfigError("config: file not found: " + cfg.constraints->string());
  }
  Inputs in;
  in.dataset = join(load_utterances(cfg.utterances), load_embeddings(cfg.embeddings));
  in.views = split_views(in.dataset);
  in.seen_all = in.views.seen_all();
  return in;
}

inline void write_json(const fs::path& path, const json& j) {
  nid::detail::write_file_atomic(path, j.dump(2) + "\n");
}

inline json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing artifact " + path.string() + " (run the earlier stage first)");
  try {
    return json::parse(nid::detail::read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Truth novelty of the unlabeled pool: a row is novel when its intent is not
// a seen intent. Empty when any row lacks an intent.
inline std::optional<std::vector<bool>> novelty_truth(const Inputs& in) {
  std::set<std::string> seen;
  for (const auto& i : in.seen_all.intents) {
    if (i) seen.insert(*i);
  }
  std::vector<bool> out;
  for (const auto& i : in.views.unlabeled.intents) {
    if (!i) return std::nullopt;
    out.push_back(!seen.count(*i));
  }
  return out;
}

inline View subset(const View& v, const std::vector<std::string>& ids) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t r = 0; r < v.size(); ++r) index.emplace(v.ids[r], r);
  View out;
  out.x = Matrix(0, v.x.cols());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("id '" + id + "' is not an unlabeled utterance");
    const std::size_t r = it->second;
    out.ids.push_back(v.ids[r]);
    out.x.append_row(v.x.row(r));
    out.intents.push_back(v.intents[r]);
    out.domains.push_back(v.domains[r]);
  }
  return out;
}

inline std::vector<std::string> read_novel_ids(const fs::path& dir) {
  const auto path = dir / kNovelFile;
  if (!fs::exists(path)) throw DataError("missing artifact " + path.string() + " (run detect first)");
  std::vector<std::string> ids;
  std::istringstream in(nid::detail::read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

// Prefixes the stage name onto any library error, keeping its kind.
template <typename F>
auto tagged(const char* stage, F&& f) -> decltype(f()) {
  const std::string tag = std::string("[") + stage + "] ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const NumericError& e) {
    throw NumericError(tag + e.what());
  } catch (const DataError& e) {
    throw DataError(tag + e.what());
  }
}

struct StageLog {
  std::ostream* out = nullptr;
  template <typename... Args>
  void operator()(const Args&... args) const {
    if (!out) return;
    (*out << ... << args) << '\n';
  }
};

// Stage I.
inline void run_detect(const RunConfig& cfg, const Inputs& in, const StageLog& log = {}) {
  tagged("detect", [&] {
    detector::HeadMode mode;
    if (cfg.detector_mode == "auto") {
      const bool labeled_ood = !in.views.ood.empty() && std::all_of(in.views.ood.intents.begin(),
                                                                     in.views.ood.intents.end(),
                                                                     [](const auto& i) { return i.has_value(); });
      mode = labeled_ood ? detector::HeadMode::m_unseen : detector::HeadMode::one_unseen;
    } else {
      mode = detector::parse_head_mode(cfg.detector_mode);
    }
    auto train = cfg.detector;
    train.rng_seed = cfg.detector_seed();
    auto fit = detector::train_softmax(in.views.seen, in.views.ood, mode, train);
    const auto thresholds = detector::fit_doc_thresholds(fit.head, in.views.seen, cfg.risk_factor);
    const auto detection = detector::detect_all(fit.head, thresholds, in.views.unlabeled);
    log("detect: ", to_string(fit.head.mode), " head with ", fit.head.num_classes(), " classes; ",
        detection.novel_ids.size(), " of ", in.views.unlabeled.size(), " unlabeled utterances flagged novel");

    write_json(cfg.out_dir / kHeadFile, detector::to_json(fit.head, thresholds));
    std::string listing;
    for (const auto& id : detection.novel_ids) listing += id + "\n";
    nid::detail::write_file_atomic(cfg.out_dir / kNovelFile, listing);

    json seen = json::object();
    for (const auto& [id, label] : detection.seen) seen[id] = label;
    json report = {{"mode", std::string(to_string(fit.head.mode))},
                   {"classes", fit.head.classes},
                   {"thresholds", thresholds.t},
                   {"loss_history", fit.loss_history},
                   {"unlabeled", in.views.unlabeled.size()},
                   {"novel", detection.novel_ids.size()},
                   {"seen_assignments", seen}};
    if (cfg.eval) {
      if (auto truth = novelty_truth(in)) {
        report["detection_f1"] = metrics::detection_f1(detection.novel, *truth);
      }
    }
    write_json(cfg.out_dir / kDetectionFile, report);
  });
}

// Stage II.
inline void run_discover(const RunConfig& cfg, const Inputs& in, const StageLog& log = {}) {
  tagged("discover", [&] {
    const auto novel_ids = read_novel_ids(cfg.out_dir);
    std::optional<cluster::ConstraintSet> constraints;
    if (cfg.constraints) {
      constraints = cluster::constraints_from_json(read_json(*cfg.constraints));
    }

    auto train = cfg.metric;
    train.rng_seed = cfg.metric_seed();
    const auto fit = metric::train_metric(in.views.seen, cfg.loss, train);
    write_json(cfg.out_dir / kEncoderFile, metric::to_json(fit.net));

    const auto seen_emb = metric::embed_all(fit.net, in.seen_all.embeddings());
    std::vector<std::string> seen_intents;
    for (const auto& i : in.seen_all.intents) seen_intents.push_back(*i);
    const auto choice = cluster::transfer_threshold<std::string>(seen_emb.matrix, seen_intents, cfg.f1_variant);
    const auto seen_clustering = cluster::cut(
        cluster::complete_linkage(cluster::pairwise_distances(seen_emb.matrix)), choice.delta);

    json out = {{"delta", choice.delta},
                {"delta_f1", choice.f1},
                {"f1_variant", std::string(cluster::to_string(cfg.f1_variant))},
                {"metric_training",
                 {{"loss_history", fit.loss_history},
                  {"initial_loss", fit.initial_loss},
                  {"final_loss", fit.final_loss},
                  {"skipped_anchors", fit.skipped_anchors}}},
                {"seen", cluster::to_json(seen_clustering, seen_emb.ids)}};

    const View pool = subset(in.views.unlabeled, novel_ids);
    std::size_t applied = 0;
    if (constraints) applied = cluster::restrict_to(*constraints, pool.ids).size();
    out["constraints"] = {{"given", constraints ? constraints->size() : 0}, {"applied", applied}};

    if (pool.empty()) {
      out["novel"] = cluster::to_json(cluster::Clustering{}, std::span<const std::string>{});
      out["message"] = "no novel utterances";
      log("discover: no novel utterances");
    } else {
      const auto emb = metric::embed_all(fit.net, pool.embeddings());
      cluster::Clustering novel;
      if (emb.size() == 1) {
        novel = {{0}, 1};
      } else {
        auto dm = cluster::pairwise_distances(emb);
        if (constraints) {
          dm = cluster::apply_constraints(dm, cluster::restrict_to(*constraints, emb.ids), emb.ids);
        }
        const auto dendro = cluster::complete_linkage(dm);
        novel = cluster::cut(dendro, choice.delta);
        out["novel_dendrogram"] = cluster::to_json(dendro);
      }
      out["novel"] = cluster::to_json(novel, emb.ids);
      log("discover: threshold ", choice.delta, " (seen F1 ", choice.f1, "), ", novel.k,
          " novel intent clusters from ", pool.size(), " utterances");
    }
    write_json(cfg.out_dir / kClusteringFile, out);
  });
}

// Stage III.
inline void run_link(const RunConfig& cfg, const Inputs& in, const StageLog& log = {}) {
  tagged("link", [&] {
    const auto net = metric::net_from_json(read_json(cfg.out_dir / kEncoderFile));
    const auto clustering = read_json(cfg.out_dir / kClusteringFile);
    const auto novel_ids = read_novel_ids(cfg.out_dir);

    for (std::size_t r = 0; r < in.seen_all.size(); ++r) {
      if (!in.seen_all.domains[r]) {
        throw DataError("seen utterance '" + in.seen_all.ids[r] + "' has no domain label");
      }
    }
    const auto seen_emb = metric::embed_all(net, in.seen_all.embeddings());
    const auto seen_c = cluster::clustering_from_json(clustering.at("seen"), seen_emb.ids);
    const auto seen_clusters =
        taxonomy::label_seen_clusters(seen_c, seen_emb.ids, in.seen_all.domains, seen_emb.matrix);
    if (seen_clusters.size() < 2) {
      throw DataError("need at least 2 seen clusters to learn a domain threshold");
    }
    const auto dom = taxonomy::transfer_domain_threshold(seen_clusters, cfg.f1_variant);

    std::vector<taxonomy::IntentCluster> novel_clusters;
    const View pool = subset(in.views.unlabeled, novel_ids);
    if (!pool.empty()) {
      const auto emb = metric::embed_all(net, pool.embeddings());
      const auto novel_c = cluster::clustering_from_json(clustering.at("novel"), emb.ids);
      novel_clusters = taxonomy::make_intent_clusters(novel_c, emb.ids, emb.matrix,
                                                      taxonomy::Provenance::novel, "novel-intent");
    }
    const auto tax = cfg.joint_domains
                         ? taxonomy::link_jointly(seen_clusters, novel_clusters, dom.delta)
                         : taxonomy::build_taxonomy(seen_clusters, novel_clusters, dom.delta);
    auto j = taxonomy::to_json(tax, cfg.taxonomy_centroids);
    j["domain_threshold"] = {{"delta", dom.delta}, {"f1", dom.f1}};
    write_json(cfg.out_dir / kTaxonomyFile, j);
    log("link: domain threshold ", dom.delta, "; ", tax.intent_count(taxonomy::Provenance::novel),
        " novel intents in ", tax.count(taxonomy::Provenance::novel), " novel domains");
  });
}

// Combined report from the stage artifacts. With `with_truth` and labeled
// unlabeled rows, quality metrics are filled in.
inline json build_run_report(const RunConfig& cfg, const Inputs& in, bool with_truth) {
  const auto detection = read_json(cfg.out_dir / kDetectionFile);
  const auto clustering = read_json(cfg.out_dir / kClusteringFile);
  const auto tax = read_json(cfg.out_dir / kTaxonomyFile);
  const auto novel_ids = read_novel_ids(cfg.out_dir);
  const View pool = subset(in.views.unlabeled, novel_ids);

  json report;
  report["unlabeled"] = in.views.unlabeled.size();
  report["novel"] = novel_ids.size();
  report["constraints"] = clustering.at("constraints");
  report["counts"] = tax.at("counts");

  std::optional<double> det_f1;
  if (with_truth) {
    if (auto truth = novelty_truth(in)) {
      std::set<std::string> flagged(novel_ids.begin(), novel_ids.end());
      std::vector<bool> pred;
      for (const auto& id : in.views.unlabeled.ids) pred.push_back(flagged.count(id) > 0);
      det_f1 = metrics::detection_f1(pred, *truth);
    }
  }
  report["detection"] = {{"detection_f1", det_f1 ? json(*det_f1) : json(nullptr)}};

  if (pool.empty()) {
    report["message"] = "no novel utterances";
    report["intents"] = nullptr;
    report["domains"] = nullptr;
    return report;
  }
  const auto intents = cluster::clustering_from_json(clustering.at("novel"), pool.ids);

  // Novel domain of each pool utterance, via its intent cluster.
  std::map<std::string, std::size_t> domain_of_member;
  std::size_t domain_index = 0;
  for (const auto& d : tax.at("domains")) {
    for (const auto& i : d.at("intents")) {
      for (const auto& m : i.at("member_ids")) domain_of_member[m.get<std::string>()] = domain_index;
    }
    ++domain_index;
  }
  std::vector<std::size_t> dom_labels;
  for (const auto& id : pool.ids) dom_labels.push_back(domain_of_member.at(id));
  const auto domains = cluster::canonical_clustering(dom_labels);

  std::optional<std::vector<std::string>> intent_truth, domain_truth;
  if (with_truth && pool.fully_labeled()) {
    intent_truth.emplace();
    domain_truth.emplace();
    for (std::size_t r = 0; r < pool.size(); ++r) {
      intent_truth->push_back(*pool.intents[r]);
      domain_truth->push_back(pool.domains[r].value_or(""));
    }
  }
  auto intent_report = metrics::build_report(intents, intent_truth, cfg.nmi_mean);
  auto domain_report = metrics::build_report(domains, domain_truth, cfg.nmi_mean);
  intent_report.detection_f1 = det_f1;
  report["intents"] = metrics::to_json(intent_report);
  report["domains"] = metrics::to_json(domain_report);
  report["table"] = metrics::format_table({{"intents", intent_report}, {"domains", domain_report}});
  return report;
}

inline void run_evaluate(const RunConfig& cfg, const Inputs& in, const StageLog& log = {}) {
  tagged("evaluate", [&] {
    const auto report = build_run_report(cfg, in, true);
    write_json(cfg.out_dir / kReportFile, report);
    if (report.contains("table")) log(report.at("table").get<std::string>());
  });
}

struct PipelineResult {
  json manifest;
  json report;
  std::map<std::string, double> timings_ms;
};

// detect -> discover -> link -> report, then a manifest with the hash of
// every artifact. On failure the manifest records the failing stage and the
// error is rethrown.
inline PipelineResult run_pipeline(const RunConfig& cfg, const StageLog& log = {}) {
  fs::create_directories(cfg.out_dir);
  PipelineResult result;
  json manifest;
  manifest["tool"] = "nid";
  manifest["version"] = std::string(kVersion);
  manifest["config"] = to_json(cfg);
  manifest["seeds"] = {{"run", cfg.seed}, {"detector", cfg.detector_seed()}, {"metric", cfg.metric_seed()}};
  json artifacts = json::array();
  auto record = [&](const char* name) {
    const auto bytes = nid::detail::read_file(cfg.out_dir / name);
    artifacts.push_back({{"name", name}, {"bytes", bytes.size()}, {"sha256", nid::detail::sha256_hex(bytes)}});
  };
  auto finish = [&](const std::string& status) {
    manifest["artifacts"] = artifacts;
    manifest["status"] = status;
    write_json(cfg.out_dir / kManifestFile, manifest);
    json timings = json::object();
    for (const auto& [k, v] : result.timings_ms) timings[k] = v;
    write_json(cfg.out_dir / kTimingsFile, timings);
  };

  std::string stage = "load";
  try {
    auto timed = [&](const char* name, const std::function<void()>& f) {
      stage = name;
      const auto t0 = std::chrono::steady_clock::now();
      f();
      result.timings_ms[name] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };
    Inputs in;
    timed("load", [&] { in = tagged("load", [&] { return load_inputs(cfg); }); });
    timed("detect", [&] { run_detect(cfg, in, log); });
    for (const char* a : {kHeadFile, kNovelFile, kDetectionFile}) record(a);
    timed("discover", [&] { run_discover(cfg, in, log); });
    for (const char* a : {kEncoderFile, kClusteringFile}) record(a);
    timed("link", [&] { run_link(cfg, in, log); });
    record(kTaxonomyFile);
    timed("report", [&] {
      result.report = tagged("report", [&] { return build_run_report(cfg, in, cfg.eval); });
      write_json(cfg.out_dir / kReportFile, result.report);
    });
    record(kReportFile);
  } catch (const std::exception& e) {
    manifest["failed_stage"] = stage;
    manifest["error"] = e.what();
    finish("failed");
    throw;
  }
  finish("complete");
  if (result.report.contains("table")) log(result.report.at("table").get<std::string>());
  result.manifest = manifest;
  return result;
}

}  // namespace nid::pipeline
