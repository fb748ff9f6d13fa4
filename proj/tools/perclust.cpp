// perclust: perception-aligned clustering of 2D point sets.
//
// Subcommands cover dataset statistics, model training and fine-tuning,
// prediction, evaluation against rater groups, classical-baseline parameter
// search and evaluation, and SVG rendering of clustered scatterplots.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
// PERCLUST_WORKERS overrides the worker-thread count.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "perclust/perclust.hpp"

namespace fs = std::filesystem;
using namespace perclust;

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::data("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error::data(path + ": invalid JSON: " + e.what());
  }
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::data("cannot write file: " + path);
  out << content;
}

std::vector<AnnotatedPlot> load_plots(const std::string& data_path, const std::string& splits_path,
                                      const std::string& split_name) {
  auto plots = load_dataset(data_path);
  if (!splits_path.empty()) apply_splits(plots, load_splits(splits_path));
  if (!split_name.empty()) {
    const Split wanted = split_from_name(split_name);
    std::vector<AnnotatedPlot> filtered;
    for (auto& plot : plots)
      if (plot.split == wanted) filtered.push_back(std::move(plot));
    return filtered;
  }
  return plots;
}

struct EvalArtifacts {
  MetricReport report;
  nlohmann::json document;
};

// Shared scoring path for `eval` and `baseline-eval`: chi / Vanbelle / noise
// IoU per plot, stratified by consensus cluster count, plus agreement
// regression (when predictions carry agreement vectors) and the
// single-vs-multi cluster-count comparison with dummy references.
EvalArtifacts evaluate_predictions(const std::vector<AnnotatedPlot>& plots,
                                   const std::vector<PredictionRecord>& predictions) {
  if (plots.empty()) throw Error::data("empty dataset");
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& rec : predictions) by_id[rec.id] = &rec;
  std::string missing;
  for (const auto& plot : plots)
    if (!by_id.count(plot.pointset.id)) missing += (missing.empty() ? "" : ",") + plot.pointset.id;
  if (!missing.empty()) throw Error::data("missing predictions for ids: " + missing);

  std::vector<PlotMetrics> rows(plots.size());
  parallel_for(plots.size(), [&](std::size_t i) {
    const AnnotatedPlot& plot = plots[i];
    const PredictionRecord& rec = *by_id.at(plot.pointset.id);
    if (static_cast<int>(rec.labels.size()) != plot.pointset.size())
      throw Error::data("prediction length mismatch for '" + plot.pointset.id + "'");
    Annotation pred{"prediction", rec.labels};
    PlotMetrics m;
    m.id = plot.pointset.id;
    m.chi = chi(pred, plot.group);
    m.vanbelle = vanbelle(pred, plot.group);
    m.noise_iou = noise_iou(pred, plot.group);
    bool has_noise = false;
    for (const Annotation& r : plot.group.annotations)
      for (int l : r.labels) has_noise = has_noise || l == 0;
    m.group_has_noise = has_noise;
    m.consensus = consensus_cluster_count(plot.group);
    rows[i] = m;
  });

  EvalArtifacts out;
  out.report = stratified_report(rows);

  bool all_have_agreement = true;
  for (const auto& plot : plots)
    all_have_agreement = all_have_agreement && !by_id.at(plot.pointset.id)->agreement.empty();
  if (all_have_agreement) {
    std::vector<AgreementVector> predicted, target;
    for (const auto& plot : plots) {
      predicted.push_back(by_id.at(plot.pointset.id)->agreement);
      target.push_back(group_agreement(plot.group));
    }
    const auto [mse, mae] = regression_metrics(predicted, target);
    out.report.mse = mse;
    out.report.mae = mae;
  }

  // Cluster-count comparison, binarized to single vs multiple.
  std::vector<int> predicted_counts;
  std::vector<std::vector<int>> group_counts;
  for (const auto& plot : plots) {
    predicted_counts.push_back(cluster_count(by_id.at(plot.pointset.id)->labels));
    std::vector<int> counts;
    for (const Annotation& r : plot.group.annotations) counts.push_back(cluster_count(r));
    group_counts.push_back(std::move(counts));
  }
  const CountMetrics model_counts = count_metrics(predicted_counts, group_counts);
  const CountMetrics always_single =
      count_metrics(std::vector<int>(plots.size(), 1), group_counts);
  const CountMetrics always_multi = count_metrics(std::vector<int>(plots.size(), 2), group_counts);
  auto count_json = [](const CountMetrics& c) {
    return nlohmann::json{
        {"vanbelle_binary", c.vanbelle_binary}, {"accuracy", c.accuracy}, {"f1", c.f1}};
  };

  out.document = report_to_json(out.report);
  out.document["count_metrics"] = {{"model", count_json(model_counts)},
                                   {"always_single", count_json(always_single)},
                                   {"always_multi", count_json(always_multi)}};
  return out;
}

void cmd_dataset_stats(const std::string& data, const std::string& splits, const std::string& split,
                       const std::string& out_prefix) {
  const auto plots = load_plots(data, splits, split);
  if (plots.empty()) throw Error::data("empty dataset");
  struct Acc {
    int n = 0;
    double agreement = 0.0;
  };
  std::map<int, Acc> per_count;
  double overall = 0.0;
  for (const auto& plot : plots) {
    const double agreement = mean_agreement(plot.group);
    Acc& acc = per_count[consensus_stratum(consensus_cluster_count(plot.group))];
    ++acc.n;
    acc.agreement += agreement;
    overall += agreement;
  }
  overall /= static_cast<double>(plots.size());

  nlohmann::json doc;
  doc["n_stimuli"] = plots.size();
  doc["overall_mean_agreement"] = overall;
  auto strata = nlohmann::json::array();
  std::string csv = "cluster_count,n_stimuli,mean_agreement\n";
  for (const auto& [count, acc] : per_count) {
    const double mean = acc.agreement / acc.n;
    strata.push_back({{"cluster_count", count}, {"n_stimuli", acc.n}, {"mean_agreement", mean}});
    csv += std::to_string(count) + "," + std::to_string(acc.n) + "," + format_double(mean) + "\n";
  }
  doc["per_cluster_count"] = std::move(strata);
  write_text(out_prefix + ".json", doc.dump(2) + "\n");
  write_text(out_prefix + ".csv", csv);
  std::cout << "stimuli: " << plots.size() << " overall mean agreement: " << overall << "\n";
}

// Returns train/val plots according to the config's splits file or ratios;
// freshly drawn splits are persisted next to the run outputs.
std::pair<std::vector<AnnotatedPlot>, std::vector<AnnotatedPlot>> prepare_splits(
    const nlohmann::json& cfg, std::uint64_t default_seed, const std::string& out_dir) {
  auto plots = load_dataset(cfg.at("dataset").get<std::string>());
  if (cfg.contains("splits") && !cfg["splits"].is_null()) {
    apply_splits(plots, load_splits(cfg["splits"].get<std::string>()));
    std::vector<AnnotatedPlot> train_plots, val_plots;
    for (auto& plot : plots) {
      if (plot.split == Split::train) train_plots.push_back(std::move(plot));
      else if (plot.split == Split::val) val_plots.push_back(std::move(plot));
    }
    return {std::move(train_plots), std::move(val_plots)};
  }
  std::vector<double> ratios{0.8, 0.1, 0.1};
  if (cfg.contains("ratios")) ratios = cfg["ratios"].get<std::vector<double>>();
  if (ratios.size() != 3) throw Error::usage("ratios must hold exactly three values");
  const std::uint64_t split_seed =
      cfg.contains("split_seed") ? cfg["split_seed"].get<std::uint64_t>() : default_seed;
  auto split = split_dataset(plots, ratios[0], ratios[1], ratios[2], split_seed);
  std::vector<AnnotatedPlot> all;
  all.insert(all.end(), split.train.begin(), split.train.end());
  all.insert(all.end(), split.val.begin(), split.val.end());
  all.insert(all.end(), split.test.begin(), split.test.end());
  save_splits(all, (fs::path(out_dir) / "splits.jsonl").string());
  return {std::move(split.train), std::move(split.val)};
}

void write_logs_and_checkpoints(const TrainOutput& result, const std::string& out_dir) {
  std::ofstream train_log(fs::path(out_dir) / "train_log.jsonl", std::ios::binary);
  for (const StepLog& s : result.steps) {
    nlohmann::json rec{{"step", s.step}, {"mcl", s.mcl},     {"noise", s.noise},
                       {"agree", s.agree}, {"total", s.total}, {"lr", s.lr}};
    train_log << rec.dump() << "\n";
  }
  std::ofstream val_log(fs::path(out_dir) / "val_log.jsonl", std::ios::binary);
  for (const EpochLog& e : result.epochs) {
    nlohmann::json rec{{"epoch", e.epoch}, {"val_total", e.val_total}, {"lr", e.lr}};
    val_log << rec.dump() << "\n";
  }
  save_checkpoint(result.best_params, result.model_config,
                  (fs::path(out_dir) / "checkpoint.ckpt").string());
  save_checkpoint(result.final_params, result.model_config,
                  (fs::path(out_dir) / "final.ckpt").string());
}

void cmd_train(const std::string& config_path, const std::string& out_dir,
               std::optional<std::uint64_t> seed_override) {
  const nlohmann::json cfg = read_json_file(config_path);
  if (!cfg.contains("train")) throw Error::usage("train config must contain a \"train\" object");
  TrainConfig tc = train_config_from_json(cfg["train"]);
  if (seed_override) tc.seed = *seed_override;
  fs::create_directories(out_dir);
  auto [train_plots, val_plots] = prepare_splits(cfg, tc.seed, out_dir);
  const TrainOutput result = train(tc, train_plots, val_plots);
  write_logs_and_checkpoints(result, out_dir);
  std::cout << "trained " << result.steps.size() << " steps; checkpoint: "
            << (fs::path(out_dir) / "checkpoint.ckpt").string() << "\n";
}

void cmd_finetune(const std::string& config_path, const std::string& out_dir,
                  std::optional<std::uint64_t> seed_override) {
  const nlohmann::json cfg = read_json_file(config_path);
  if (!cfg.contains("finetune")) throw Error::usage("finetune config must contain a \"finetune\" object");
  FinetuneConfig fc = finetune_config_from_json(cfg["finetune"]);
  if (seed_override) fc.seed = *seed_override;
  fs::create_directories(out_dir);
  auto [train_plots, val_plots] = prepare_splits(cfg, fc.seed, out_dir);
  const TrainOutput result = finetune(fc, train_plots, val_plots);
  write_logs_and_checkpoints(result, out_dir);
  std::cout << "fine-tuned " << result.steps.size() << " steps; checkpoint: "
            << (fs::path(out_dir) / "checkpoint.ckpt").string() << "\n";
}

void cmd_predict(const std::string& checkpoint, const std::string& data, const std::string& splits,
                 const std::string& split, const std::string& out_path) {
  auto [params, config] = load_checkpoint(checkpoint);
  const auto plots = load_plots(data, splits, split);
  if (plots.empty()) throw Error::data("empty dataset");
  std::vector<PredictionRecord> records(plots.size());
  parallel_for(plots.size(), [&](std::size_t i) {
    const auto out = model_forward(plots[i].pointset.points, params, config, ForwardMode::infer);
    PredictionRecord rec;
    rec.id = plots[i].pointset.id;
    rec.labels = extract_clustering(out).labels;
    rec.agreement = out.agreement;
    records[i] = std::move(rec);
  });
  save_predictions(records, out_path);
  std::cout << "predicted " << records.size() << " stimuli -> " << out_path << "\n";
}

void cmd_eval(const std::string& pred_path, const std::string& data, const std::string& splits,
              const std::string& split, const std::string& out_prefix) {
  const auto plots = load_plots(data, splits, split);
  const auto artifacts = evaluate_predictions(plots, load_predictions(pred_path));
  write_text(out_prefix + ".json", artifacts.document.dump(2) + "\n");
  write_text(out_prefix + ".csv", report_to_csv(artifacts.report));
  std::cout << "chi_x100: " << artifacts.report.chi * 100.0 << " vanbelle: " << artifacts.report.vanbelle
            << " n: " << artifacts.report.n_samples << "\n";
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec grid;
  if (j.contains("eps")) grid.eps_candidates = j["eps"].get<std::vector<double>>();
  if (j.contains("min_pts")) grid.min_pts_candidates = j["min_pts"].get<std::vector<int>>();
  if (j.contains("k")) grid.k_candidates = j["k"].get<std::vector<int>>();
  return grid;
}

nlohmann::json spec_to_json(const BaselineSpec& spec) {
  nlohmann::json j{{"algorithm", algorithm_name(spec.algorithm)}};
  if (spec.algorithm == BaselineAlgorithm::dbscan) {
    j["eps"] = spec.eps;
    j["min_pts"] = spec.min_pts;
  } else {
    j["k"] = spec.k;
    j["oracle_k"] = spec.k_mode == KMode::oracle_consensus;
  }
  return j;
}

void cmd_baseline_search(const std::string& algorithm, const std::string& data,
                         const std::string& splits, const std::string& split,
                         const std::string& grid_path, std::uint64_t seed,
                         const std::string& out_prefix) {
  const auto plots = load_plots(data, splits, split);
  if (plots.empty()) throw Error::data("empty dataset");
  GridSpec grid;
  if (!grid_path.empty()) grid = grid_from_json(read_json_file(grid_path));
  const auto result = grid_search(algorithm_from_name(algorithm), grid, plots, seed);

  std::string csv = "algorithm,eps,min_pts,k,mean_chi_x100,mean_vanbelle,mean_noise_iou\n";
  for (const GridRow& row : result.table) {
    csv += algorithm;
    if (row.spec.algorithm == BaselineAlgorithm::dbscan)
      csv += "," + format_double(row.spec.eps) + "," + std::to_string(row.spec.min_pts) + ",";
    else
      csv += ",,," + std::to_string(row.spec.k);
    csv += "," + format_double(row.mean_chi * 100.0) + "," + format_double(row.mean_vanbelle) + ",";
    if (row.mean_noise_iou) csv += format_double(*row.mean_noise_iou);
    csv += "\n";
  }
  nlohmann::json doc{{"best", spec_to_json(result.best)},
                     {"best_mean_chi_x100", result.best_score * 100.0}};
  write_text(out_prefix + ".csv", csv);
  write_text(out_prefix + ".json", doc.dump(2) + "\n");
  std::cout << "best " << spec_to_json(result.best).dump() << " mean chi_x100 "
            << result.best_score * 100.0 << "\n";
}

void cmd_baseline_eval(const std::string& algorithm, const std::string& data,
                       const std::string& splits, const std::string& split, double eps, int min_pts,
                       int k, bool oracle_k, std::uint64_t seed, const std::string& out_prefix,
                       const std::string& pred_out) {
  const auto plots = load_plots(data, splits, split);
  if (plots.empty()) throw Error::data("empty dataset");
  BaselineSpec spec;
  spec.algorithm = algorithm_from_name(algorithm);
  spec.eps = eps;
  spec.min_pts = min_pts;
  spec.k = k;
  spec.k_mode = oracle_k ? KMode::oracle_consensus : KMode::fixed;
  spec.seed = seed;

  std::vector<PredictionRecord> records(plots.size());
  parallel_for(plots.size(), [&](std::size_t i) {
    PredictionRecord rec;
    rec.id = plots[i].pointset.id;
    rec.labels = run_baseline(spec, plots[i]).labels;
    records[i] = std::move(rec);
  });
  auto artifacts = evaluate_predictions(plots, records);
  artifacts.document["baseline"] = spec_to_json(spec);
  write_text(out_prefix + ".json", artifacts.document.dump(2) + "\n");
  write_text(out_prefix + ".csv", report_to_csv(artifacts.report));
  if (!pred_out.empty()) save_predictions(records, pred_out);
  std::cout << "chi_x100: " << artifacts.report.chi * 100.0 << " vanbelle: " << artifacts.report.vanbelle
            << " n: " << artifacts.report.n_samples << "\n";
}

void cmd_render(const std::string& data, const std::string& id, const std::string& pred_path,
                const std::string& rater, bool agreement_opacity, const std::string& out_path) {
  const auto plots = load_dataset(data);
  if (plots.empty()) throw Error::data("empty dataset");
  const AnnotatedPlot* plot = nullptr;
  if (id.empty()) {
    plot = &plots.front();
  } else {
    for (const auto& p : plots)
      if (p.pointset.id == id) plot = &p;
    if (!plot) throw Error::data("no stimulus with id '" + id + "'");
  }

  std::vector<int> labels;
  AgreementVector agreement;
  if (!pred_path.empty()) {
    for (const auto& rec : load_predictions(pred_path))
      if (rec.id == plot->pointset.id) {
        labels = rec.labels;
        agreement = rec.agreement;
      }
    if (labels.empty()) throw Error::data("no prediction for stimulus '" + plot->pointset.id + "'");
  } else if (!rater.empty()) {
    for (const auto& ann : plot->group.annotations)
      if (ann.rater == rater) labels = ann.labels;
    if (labels.empty()) throw Error::data("no rater '" + rater + "' for stimulus '" + plot->pointset.id + "'");
    if (agreement_opacity) agreement = group_agreement(plot->group);
  } else {
    throw Error::usage("render needs --pred or --rater as the label source");
  }
  if (agreement_opacity && agreement.empty())
    throw Error::data("agreement opacity requested but no agreement values available");

  const std::string svg = render_svg(plot->pointset.points, labels,
                                     agreement_opacity ? &agreement : nullptr);
  write_text(out_path, svg);
  std::cout << "rendered '" << plot->pointset.id << "' -> " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "perclust: perception-aligned clustering of 2D point sets.\n"
      "Chi values in emitted reports are scaled x100; the library API is raw.\n"
      "PERCLUST_WORKERS overrides the worker-thread count."};
  app.require_subcommand(1);

  // dataset-stats
  std::string ds_data, ds_splits, ds_split, ds_out;
  auto* stats = app.add_subcommand("dataset-stats", "Cluster-count and agreement statistics");
  stats->add_option("--data", ds_data, "Dataset JSONL")->required();
  stats->add_option("--splits", ds_splits, "Splits JSONL");
  stats->add_option("--split", ds_split, "Restrict to one split (train|val|test)");
  stats->add_option("--out", ds_out, "Output prefix (.json/.csv)")->required();
  stats->callback([&] { cmd_dataset_stats(ds_data, ds_splits, ds_split, ds_out); });

  // train
  std::string tr_config, tr_out;
  std::optional<std::uint64_t> tr_seed;
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  tr->add_option("--config", tr_config, "Config JSON")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--seed", tr_seed, "Seed override");
  tr->callback([&] { cmd_train(tr_config, tr_out, tr_seed); });

  // finetune
  std::string ft_config, ft_out;
  std::optional<std::uint64_t> ft_seed;
  auto* ft = app.add_subcommand("finetune", "Fine-tune from a base checkpoint");
  ft->add_option("--config", ft_config, "Config JSON")->required();
  ft->add_option("--out", ft_out, "Output directory")->required();
  ft->add_option("--seed", ft_seed, "Seed override");
  ft->callback([&] { cmd_finetune(ft_config, ft_out, ft_seed); });

  // predict
  std::string pr_ckpt, pr_data, pr_splits, pr_split, pr_out;
  auto* pr = app.add_subcommand("predict", "Predict clusterings for a dataset");
  pr->add_option("--checkpoint", pr_ckpt, "Model checkpoint")->required();
  pr->add_option("--data", pr_data, "Dataset JSONL")->required();
  pr->add_option("--splits", pr_splits, "Splits JSONL");
  pr->add_option("--split", pr_split, "Restrict to one split");
  pr->add_option("--out", pr_out, "Predictions JSONL")->required();
  pr->callback([&] { cmd_predict(pr_ckpt, pr_data, pr_splits, pr_split, pr_out); });

  // eval
  std::string ev_pred, ev_data, ev_splits, ev_split, ev_out;
  auto* ev = app.add_subcommand("eval", "Evaluate predictions against rater groups");
  ev->add_option("--pred", ev_pred, "Predictions JSONL")->required();
  ev->add_option("--data", ev_data, "Dataset JSONL")->required();
  ev->add_option("--splits", ev_splits, "Splits JSONL");
  ev->add_option("--split", ev_split, "Restrict to one split");
  ev->add_option("--out", ev_out, "Output prefix (.json/.csv)")->required();
  ev->callback([&] { cmd_eval(ev_pred, ev_data, ev_splits, ev_split, ev_out); });

  // baseline-search
  std::string bs_algo, bs_data, bs_splits, bs_split, bs_grid, bs_out;
  std::uint64_t bs_seed = 0;
  auto* bs = app.add_subcommand("baseline-search", "Grid-search baseline parameters by mean chi");
  bs->add_option("--algorithm", bs_algo, "dbscan|kmeans|ward|gmm")->required();
  bs->add_option("--data", bs_data, "Dataset JSONL")->required();
  bs->add_option("--splits", bs_splits, "Splits JSONL");
  bs->add_option("--split", bs_split, "Restrict to one split");
  bs->add_option("--grid", bs_grid, "Grid JSON with per-parameter candidate lists");
  bs->add_option("--seed", bs_seed, "Seed for stochastic baselines");
  bs->add_option("--out", bs_out, "Output prefix (.json/.csv)")->required();
  bs->callback([&] { cmd_baseline_search(bs_algo, bs_data, bs_splits, bs_split, bs_grid, bs_seed, bs_out); });

  // baseline-eval
  std::string be_algo, be_data, be_splits, be_split, be_out, be_pred_out;
  double be_eps = 0.1;
  int be_min_pts = 5, be_k = 2;
  bool be_oracle = false;
  std::uint64_t be_seed = 0;
  auto* be = app.add_subcommand("baseline-eval", "Run one baseline configuration and evaluate it");
  be->add_option("--algorithm", be_algo, "dbscan|kmeans|ward|gmm")->required();
  be->add_option("--data", be_data, "Dataset JSONL")->required();
  be->add_option("--splits", be_splits, "Splits JSONL");
  be->add_option("--split", be_split, "Restrict to one split");
  be->add_option("--eps", be_eps, "DBSCAN radius");
  be->add_option("--min-pts", be_min_pts, "DBSCAN density threshold");
  be->add_option("--k", be_k, "Cluster count for kmeans/ward/gmm");
  be->add_flag("--oracle-k", be_oracle, "Use the rounded consensus cluster count as k");
  be->add_option("--seed", be_seed, "Seed for stochastic baselines");
  be->add_option("--out", be_out, "Output prefix (.json/.csv)")->required();
  be->add_option("--pred-out", be_pred_out, "Also write the baseline predictions JSONL");
  be->callback([&] {
    cmd_baseline_eval(be_algo, be_data, be_splits, be_split, be_eps, be_min_pts, be_k, be_oracle,
                      be_seed, be_out, be_pred_out);
  });

  // render
  std::string rd_data, rd_id, rd_pred, rd_rater, rd_out;
  bool rd_agreement = false;
  auto* rd = app.add_subcommand("render", "Render a clustered scatterplot as SVG");
  rd->add_option("--data", rd_data, "Dataset JSONL")->required();
  rd->add_option("--id", rd_id, "Stimulus id (default: first)");
  rd->add_option("--pred", rd_pred, "Predictions JSONL as the label source");
  rd->add_option("--rater", rd_rater, "Rater name as the label source");
  rd->add_flag("--agreement", rd_agreement, "Map agreement to marker opacity");
  rd->add_option("--out", rd_out, "Output SVG path")->required();
  rd->callback([&] { cmd_render(rd_data, rd_id, rd_pred, rd_rater, rd_agreement, rd_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case Error::Kind::usage: return 1;
      case Error::Kind::data: return 2;
      case Error::Kind::numeric: return 3;
    }
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
