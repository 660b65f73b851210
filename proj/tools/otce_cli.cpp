// Command-line front end: scoring, ranking, correlation, embedding
// optimization, synthetic task generation and CSV conversion.
//
// Every command prints one JSON report on stdout. Exit codes: 0 success,
// 2 input or validation failure, 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "otce/otce.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

/// Input problem that is not an otce::Error (bad flags, bad JSON, ...).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class StageTimer {
 public:
  void start() { t0_ = std::chrono::steady_clock::now(); }
  void stop(const std::string& stage) {
    timing_[stage] = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0_).count();
  }
  const json& timing() const { return timing_; }

 private:
  std::chrono::steady_clock::time_point t0_;
  json timing_ = json::object();
};

json make_report(const std::string& command, json config, json results, const StageTimer& timer) {
  return json{{"command", command},
              {"config", std::move(config)},
              {"results", std::move(results)},
              {"timing_ms", timer.timing()},
              {"tool_version", otce::kVersion}};
}

otce::FeatureSet load(const std::string& path) {
  if (!fs::exists(path)) throw otce::Error(otce::ErrorCode::IoFailure, path + ": no such file");
  return otce::io::read_feature_file(path);
}

struct MetricFlags {
  std::string metric = "f-otce";
  double lambda = 0.1;
  double gamma = 0.5;
  int max_iter = 1000;
  double tolerance = 1e-9;
  bool standardize = false;
  bool scaling = false;
  unsigned threads = 1;

  void add_to(CLI::App& cmd, bool with_metric) {
    if (with_metric)
      cmd.add_option("--metric", metric, "f-otce | jc-otce | nce")
          ->check(CLI::IsMember({"f-otce", "jc-otce", "nce"}))
          ->capture_default_str();
    cmd.add_option("--lambda", lambda, "entropic regularization weight")->capture_default_str();
    cmd.add_option("--gamma", gamma, "jc-otce sample/label cost mix")->capture_default_str();
    cmd.add_option("--max-iter", max_iter, "Sinkhorn iteration cap")->capture_default_str();
    cmd.add_option("--tolerance", tolerance, "L-inf marginal tolerance")->capture_default_str();
    cmd.add_flag("--standardize", standardize, "standardize features with pooled statistics");
    cmd.add_flag("--scaling", scaling, "use plain scaling iterations instead of log-domain");
    cmd.add_option("--threads", threads, "worker threads")->capture_default_str();
  }

  otce::MetricConfig config() const {
    otce::MetricConfig cfg;
    cfg.sinkhorn.lambda = lambda;
    cfg.sinkhorn.max_iterations = max_iter;
    cfg.sinkhorn.marginal_tolerance = tolerance;
    cfg.sinkhorn.log_domain = !scaling;
    cfg.gamma = gamma;
    cfg.standardize_features = standardize;
    cfg.threads = std::max(1u, threads);
    return cfg;
  }

  json echo() const {
    return json{{"metric", metric},       {"lambda", lambda},         {"gamma", gamma},
                {"max_iter", max_iter},   {"tolerance", tolerance},   {"standardize", standardize},
                {"log_domain", !scaling}};
  }
};

otce::TransferabilityScore score_pair(const std::string& metric, const otce::FeatureSet& src,
                                      const otce::FeatureSet& tgt, const otce::MetricConfig& cfg) {
  if (metric == "jc-otce") return otce::jc_otce(src, tgt, cfg);
  if (metric == "nce") return otce::nce(src, tgt);
  return otce::f_otce(src, tgt, cfg);
}

json score_json(const otce::TransferabilityScore& s) {
  json j{{"metric", otce::to_string(s.metric)},
         {"value", s.value},
         {"lambda", s.lambda},
         {"iterations", s.iterations_used},
         {"converged", s.converged}};
  j["gamma"] = s.gamma ? json(*s.gamma) : json(nullptr);
  return j;
}

json cmd_score(const MetricFlags& flags, const std::string& source, const std::string& target) {
  StageTimer timer;
  timer.start();
  const auto src = load(source);
  const auto tgt = load(target);
  timer.stop("load");
  timer.start();
  const auto score = score_pair(flags.metric, src, tgt, flags.config());
  timer.stop("score");
  json config = flags.echo();
  config["source"] = source;
  config["target"] = target;
  return make_report("score", std::move(config), score_json(score), timer);
}

json cmd_rank(const MetricFlags& flags, const std::string& target, const std::string& sources_dir) {
  StageTimer timer;
  timer.start();
  if (!fs::is_directory(sources_dir)) throw UsageError(sources_dir + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(sources_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ftrs") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError(sources_dir + ": no .ftrs files");
  const auto tgt = load(target);
  std::vector<otce::FeatureSet> sources;
  for (const auto& f : files) sources.push_back(load(f.string()));
  timer.stop("load");

  timer.start();
  const auto cfg = flags.config();
  std::vector<otce::TransferabilityScore> scores(sources.size());
  const unsigned workers = std::min<unsigned>(std::max(1u, flags.threads), static_cast<unsigned>(sources.size()));
  std::vector<std::future<void>> pending;
  for (unsigned w = 0; w < workers; ++w)
    pending.push_back(std::async(std::launch::async, [&, w] {
      otce::MetricConfig local = cfg;
      local.threads = 1;
      for (std::size_t k = w; k < sources.size(); k += workers) scores[k] = score_pair(flags.metric, sources[k], tgt, local);
    }));
  for (auto& p : pending) p.get();

  std::vector<otce::ScoredPair> pairs;
  for (std::size_t k = 0; k < files.size(); ++k) pairs.push_back({files[k].filename().string(), scores[k].value, {}});
  const auto ranked = otce::rank_sources(pairs);
  timer.stop("score");

  json ranking = json::array();
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto k = static_cast<std::size_t>(
        std::find(files.begin(), files.end(), fs::path(sources_dir) / ranked[r].task_id) - files.begin());
    json row = score_json(scores[k]);
    row["rank"] = r + 1;
    row["source"] = ranked[r].task_id;
    ranking.push_back(std::move(row));
  }
  json config = flags.echo();
  config["target"] = target;
  config["sources"] = sources_dir;
  return make_report("rank", std::move(config), json{{"ranking", std::move(ranking)}}, timer);
}

json cmd_corr(const std::string& pairs_path, const std::string& method) {
  StageTimer timer;
  timer.start();
  std::ifstream in(pairs_path, std::ios::binary);
  if (!in) throw otce::Error(otce::ErrorCode::IoFailure, "cannot open " + pairs_path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::vector<otce::ScoredPair> pairs;
  try {
    pairs = otce::parse_scored_pairs(buffer.str());
  } catch (const otce::Error& e) {
    throw otce::Error(e.code(), pairs_path + ": " + e.what());
  }
  std::vector<double> acc, trf;
  for (const auto& p : pairs) {
    if (!p.accuracy) throw UsageError(pairs_path + ": task '" + p.task_id + "' has no accuracy");
    acc.push_back(*p.accuracy);
    trf.push_back(p.transferability);
  }
  timer.stop("load");
  timer.start();
  json results{{"n", pairs.size()}};
  if (method == "spearman" || method == "both") results["spearman_rho"] = otce::spearman_rho(acc, trf);
  if (method == "kendall" || method == "both") results["kendall_tau"] = otce::kendall_tau(acc, trf);
  timer.stop("correlate");
  return make_report("corr", json{{"pairs", pairs_path}, {"method", method}}, std::move(results), timer);
}

struct OptimizeFlags {
  std::string source, target, out, trace;
  otce::guidance::GradConfig grad;
};

json cmd_optimize(const OptimizeFlags& flags) {
  StageTimer timer;
  timer.start();
  const auto src = load(flags.source);
  const auto tgt = load(flags.target);
  timer.stop("load");

  otce::MetricConfig metric;
  metric.sinkhorn.lambda = flags.grad.lambda;
  timer.start();
  const double initial_score = otce::f_otce(src, tgt, metric).value;
  const double initial_probe = otce::guidance::nearest_centroid_probe(tgt, tgt);
  timer.stop("initial_eval");

  timer.start();
  const auto result = otce::guidance::optimize_target_embeddings(src, tgt, flags.grad);
  timer.stop("optimize");

  timer.start();
  const double final_score = otce::f_otce(src, result.target, metric).value;
  const double final_probe = otce::guidance::nearest_centroid_probe(result.target, result.target);
  timer.stop("final_eval");

  otce::io::write_feature_file(result.target, flags.out);
  if (!flags.trace.empty()) {
    std::ofstream trace(flags.trace, std::ios::trunc);
    if (!trace) throw otce::Error(otce::ErrorCode::IoFailure, "cannot open " + flags.trace);
    trace << "step,f_otce,grad_norm\n";
    trace.precision(17);
    for (const auto& row : result.trace) trace << row.step << ',' << row.f_otce << ',' << row.grad_norm << '\n';
  }

  const auto& g = flags.grad;
  json config{{"source", flags.source},         {"target", flags.target},
              {"out", flags.out},               {"trace", flags.trace},
              {"steps", g.steps},               {"lr", g.learning_rate},
              {"unroll", g.unroll_iterations},  {"lambda", g.lambda},
              {"source_batch", g.source_batch}, {"target_batch", g.target_batch},
              {"seed", g.seed}};
  json results{{"initial_f_otce", initial_score},
               {"final_f_otce", final_score},
               {"initial_probe_accuracy", initial_probe},
               {"final_probe_accuracy", final_probe},
               {"steps_run", result.trace.size()}};
  if (!result.trace.empty()) {
    results["first_batch_f_otce"] = result.trace.front().f_otce;
    results["last_batch_f_otce"] = result.trace.back().f_otce;
  }
  return make_report("optimize", std::move(config), std::move(results), timer);
}

otce::synth::SyntheticTaskSpec parse_spec(const json& j) {
  otce::synth::SyntheticTaskSpec spec;
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  take("classes", spec.classes);
  take("dim", spec.dim);
  take("samples_per_class", spec.samples_per_class);
  take("centroid_separation", spec.centroid_separation);
  take("domain_shift", spec.domain_shift);
  take("label_permutation_fraction", spec.label_permutation_fraction);
  take("seed", spec.seed);
  spec.validate();
  return spec;
}

json spec_json(const otce::synth::SyntheticTaskSpec& s) {
  return json{{"classes", s.classes},
              {"dim", s.dim},
              {"samples_per_class", s.samples_per_class},
              {"centroid_separation", s.centroid_separation},
              {"domain_shift", s.domain_shift},
              {"label_permutation_fraction", s.label_permutation_fraction},
              {"seed", s.seed}};
}

json write_pair(const otce::synth::TaskPair& pair, const fs::path& dir) {
  fs::create_directories(dir);
  otce::io::write_feature_file(pair.source, dir / "source.ftrs");
  otce::io::write_feature_file(pair.target, dir / "target.ftrs");
  return json{{"source", (dir / "source.ftrs").string()}, {"target", (dir / "target.ftrs").string()}};
}

json cmd_synth(const std::string& spec_path, bool fig3, const std::string& out_dir) {
  StageTimer timer;
  timer.start();
  const fs::path out(out_dir);
  json config{{"out", out_dir}};
  json results;

  if (fig3) {
    const auto toy = otce::synth::make_fig3_toy();
    fs::create_directories(out);
    otce::io::write_feature_file(toy.source_a, out / "source_a.ftrs");
    otce::io::write_feature_file(toy.source_b, out / "source_b.ftrs");
    otce::io::write_feature_file(toy.target, out / "target.ftrs");
    config["fig3"] = true;
    results["files"] = {(out / "source_a.ftrs").string(), (out / "source_b.ftrs").string(),
                        (out / "target.ftrs").string()};
    timer.stop("generate");
    return make_report("synth", std::move(config), std::move(results), timer);
  }

  std::ifstream in(spec_path);
  if (!in) throw otce::Error(otce::ErrorCode::IoFailure, "cannot open " + spec_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(spec_path + ": " + e.what());
  }
  if (!doc.is_object()) throw UsageError(spec_path + ": spec must be a JSON object");
  otce::synth::SyntheticTaskSpec base;
  try {
    base = parse_spec(doc);
  } catch (const json::exception& e) {
    throw UsageError(spec_path + ": " + e.what());
  } catch (const otce::Error& e) {
    throw UsageError(spec_path + ": " + e.what());
  }
  config["spec"] = spec_path;
  config["resolved_spec"] = spec_json(base);

  if (!doc.contains("sweep")) {
    results = write_pair(otce::synth::generate_task_pair(base), out);
    timer.stop("generate");
    return make_report("synth", std::move(config), std::move(results), timer);
  }

  // Sweep: {"parameter": "label_permutation_fraction" | "domain_shift", "levels": [...], "seeds": [...]}
  std::string parameter;
  std::vector<double> levels;
  std::vector<std::uint64_t> seeds;
  try {
    const auto& sweep = doc.at("sweep");
    parameter = sweep.at("parameter").get<std::string>();
    levels = sweep.at("levels").get<std::vector<double>>();
    seeds = sweep.contains("seeds") ? sweep.at("seeds").get<std::vector<std::uint64_t>>()
                                    : std::vector<std::uint64_t>{base.seed};
  } catch (const json::exception& e) {
    throw UsageError(spec_path + ": sweep: " + e.what());
  }
  if (parameter != "label_permutation_fraction" && parameter != "domain_shift")
    throw UsageError(spec_path + ": sweep.parameter must be label_permutation_fraction or domain_shift");
  if (levels.empty() || seeds.empty()) throw UsageError(spec_path + ": sweep needs levels and seeds");
  config["sweep"] = doc.at("sweep");

  fs::create_directories(out);
  std::ofstream manifest(out / "manifest.csv", std::ios::trunc);
  manifest << "level,seed,path\n";
  manifest.precision(17);
  json entries = json::array();
  for (std::size_t li = 0; li < levels.size(); ++li)
    for (const auto seed : seeds) {
      auto spec = base;
      spec.seed = seed;
      (parameter == "domain_shift" ? spec.domain_shift : spec.label_permutation_fraction) = levels[li];
      otce::synth::TaskPair pair = [&] {
        try {
          return otce::synth::generate_task_pair(spec);
        } catch (const otce::Error& e) {
          if (e.code() == otce::ErrorCode::InvalidArgument) throw UsageError(spec_path + ": " + e.what());
          throw;
        }
      }();
      const fs::path dir = out / ("level" + std::to_string(li) + "_seed" + std::to_string(seed));
      write_pair(pair, dir);
      manifest << levels[li] << ',' << seed << ',' << dir.string() << '\n';
      entries.push_back(json{{"level", levels[li]}, {"seed", seed}, {"path", dir.string()}});
    }
  results["manifest"] = (out / "manifest.csv").string();
  results["pairs"] = std::move(entries);
  timer.stop("generate");
  return make_report("synth", std::move(config), std::move(results), timer);
}

json cmd_convert(const std::string& csv, const std::string& out, bool header) {
  StageTimer timer;
  timer.start();
  const auto set = otce::io::read_csv(csv, header);
  otce::io::write_feature_file(set, out);
  timer.stop("convert");
  return make_report("convert", json{{"csv", csv}, {"out", out}, {"header", header}},
                     json{{"n", set.size()}, {"d", set.dim()}, {"classes", set.class_count()}}, timer);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transferability estimation with optimal-transport conditional entropy"};
  app.require_subcommand(1);
  app.set_version_flag("--version", otce::kVersion);

  MetricFlags score_flags;
  std::string score_source, score_target;
  auto* score = app.add_subcommand("score", "score one source/target pair");
  score_flags.add_to(*score, true);
  score->add_option("--source", score_source, "source FTRS file")->required();
  score->add_option("--target", score_target, "target FTRS file")->required();

  MetricFlags rank_flags;
  std::string rank_target, rank_sources;
  auto* rank = app.add_subcommand("rank", "rank every source in a directory against one target");
  rank_flags.add_to(*rank, true);
  rank->add_option("--target", rank_target, "target FTRS file")->required();
  rank->add_option("--sources", rank_sources, "directory of source FTRS files")->required();

  std::string corr_pairs, corr_method = "both";
  auto* corr = app.add_subcommand("corr", "rank correlation of scores against accuracies");
  corr->add_option("--pairs", corr_pairs, "CSV with task_id,score,accuracy")->required();
  corr->add_option("--method", corr_method, "spearman | kendall | both")
      ->check(CLI::IsMember({"spearman", "kendall", "both"}))
      ->capture_default_str();

  OptimizeFlags opt;
  auto* optimize = app.add_subcommand("optimize", "gradient ascent on F-OTCE over target embeddings");
  optimize->add_option("--source", opt.source, "source FTRS file")->required();
  optimize->add_option("--target", opt.target, "target FTRS file")->required();
  optimize->add_option("--out", opt.out, "optimized target FTRS file")->required();
  optimize->add_option("--steps", opt.grad.steps, "gradient steps")->required();
  optimize->add_option("--lr", opt.grad.learning_rate, "learning rate")->capture_default_str();
  optimize->add_option("--unroll", opt.grad.unroll_iterations, "unrolled Sinkhorn iterations")->capture_default_str();
  optimize->add_option("--lambda", opt.grad.lambda, "entropic regularization weight")->capture_default_str();
  optimize->add_option("--source-batch", opt.grad.source_batch, "source mini-batch size")->capture_default_str();
  optimize->add_option("--target-batch", opt.grad.target_batch, "target mini-batch size")->capture_default_str();
  optimize->add_option("--seed", opt.grad.seed, "mini-batch seed")->capture_default_str();
  optimize->add_option("--trace", opt.trace, "per-step trace CSV (step,f_otce,grad_norm)");

  std::string synth_spec, synth_out;
  bool synth_fig3 = false;
  auto* synth = app.add_subcommand("synth", "generate synthetic task pairs");
  auto* spec_opt = synth->add_option("--spec", synth_spec, "JSON task spec");
  auto* fig3_opt = synth->add_flag("--fig3", synth_fig3, "write the two-source toy scenario instead");
  spec_opt->excludes(fig3_opt);
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string convert_csv, convert_out;
  bool convert_header = false;
  auto* convert = app.add_subcommand("convert", "convert label-first CSV to FTRS");
  convert->add_option("--csv", convert_csv, "input CSV")->required();
  convert->add_option("--out", convert_out, "output FTRS file")->required();
  convert->add_flag("--header", convert_header, "first row is a header");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    json report;
    if (*score) {
      report = cmd_score(score_flags, score_source, score_target);
    } else if (*rank) {
      report = cmd_rank(rank_flags, rank_target, rank_sources);
    } else if (*corr) {
      report = cmd_corr(corr_pairs, corr_method);
    } else if (*optimize) {
      report = cmd_optimize(opt);
    } else if (*synth) {
      if (!synth_fig3 && synth_spec.empty()) throw UsageError("synth needs --spec or --fig3");
      report = cmd_synth(synth_spec, synth_fig3, synth_out);
    } else if (*convert) {
      report = cmd_convert(convert_csv, convert_out, convert_header);
    }
    std::cout << report.dump(2) << '\n';
    return 0;
  } catch (const otce::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return otce::is_numerical(e.code()) ? kExitNumerical : kExitInput;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
}
