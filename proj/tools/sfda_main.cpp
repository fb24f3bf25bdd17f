// Command-line front end. One command per process: pretrain-source, adapt,
// eval, analyze, bench-synthetic. Exit codes: 0 success, 2 usage or
// configuration error, 3 runtime abort.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfda/benchmark.hpp"
#include "sfda/config.hpp"
#include "sfda/datasets.hpp"
#include "sfda/engine.hpp"
#include "sfda/evaluation.hpp"
#include "sfda/io_util.hpp"
#include "sfda/models.hpp"

namespace {

using namespace sfda;

constexpr int kOk = 0;
constexpr int kUsageError = 2;
constexpr int kRuntimeAbort = 3;

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument(what + " not found: " + path);
  }
}

FeatureDataset load_dataset(const std::string& features, const std::string& labels) {
  require_file(features, "feature file");
  require_file(labels, "label file");
  return import_feature_csv(features, labels);
}

// Teacher selected by the resolved `teacher` key: the seeded mock scorer
// (with its oracle leak when omega > 0) or a precomputed-feature archive.
std::unique_ptr<TeacherInterface> build_teacher(const RunConfig& config,
                                                const FeatureDataset& target) {
  const std::string& kind = config.text("teacher");
  if (kind == "mock") {
    return std::make_unique<MockTeacher>(
        make_prototype_teacher(target, config.integer("embed_dim"), config.number("temperature"),
                               config.number("omega"), config.seed("teacher_seed")));
  }
  if (kind == "clip-adapter") {
    const std::string& path = config.text("teacher_archive");
    if (path.empty()) {
      throw std::invalid_argument("teacher clip-adapter needs the teacher_archive key");
    }
    const ClipAdapterTeacher::Status status = ClipAdapterTeacher::probe(path);
    if (!status.available) {
      throw std::invalid_argument("teacher archive unusable: " + status.reason);
    }
    auto teacher = std::make_unique<ClipAdapterTeacher>(ClipAdapterTeacher::load(path));
    if (teacher->num_classes() != target.num_classes) {
      throw std::invalid_argument("teacher archive classes do not match the dataset");
    }
    if (teacher->num_samples() < target.size()) {
      throw std::invalid_argument("teacher archive holds fewer feature rows than the dataset");
    }
    return teacher;
  }
  throw std::invalid_argument("unknown teacher `" + kind + "`; expected mock or clip-adapter");
}

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << "\n"; }

int cmd_pretrain(const RunConfig& config, const std::string& config_path,
                 const std::string& features, const std::string& labels, const std::string& out) {
  const FeatureDataset source = load_dataset(features, labels);
  write_manifest(make_manifest("pretrain-source", config_path, out, config), out);

  const int in_dim = static_cast<int>(source.x.cols());
  const int hidden = config.integer("hidden");
  Rng rng(config.seed("model_seed"));
  TargetModel model =
      make_mlp_model(in_dim, hidden, config.integer("bottleneck_dim"), source.num_classes, rng);
  const PretrainReport report =
      pretrain_source(model, source.x, source.labels, config.pretrain(), rng);
  const std::string checkpoint = out + "/source_model.bin";
  save_mlp_model_file(model, in_dim, hidden, checkpoint);

  nlohmann::ordered_json j;
  j["checkpoint"] = checkpoint;
  j["final_train_accuracy"] = report.final_train_accuracy;
  j["final_loss"] = report.final_loss;
  j["steps"] = report.steps;
  print_json(j);
  return kOk;
}

int cmd_adapt(const RunConfig& config, const std::string& config_path,
              const std::string& source_model, const std::string& features,
              const std::string& labels, const std::string& out, bool resume) {
  require_file(source_model, "source model");
  const FeatureDataset target = load_dataset(features, labels);
  const std::vector<std::int64_t> dims =
      TensorArchive::read_file(source_model).get_i64("arch.dims");
  if (dims.size() != 4 || dims[0] != target.x.cols()) {
    throw std::invalid_argument("source model input width does not match the dataset");
  }
  TargetModel model = load_mlp_model_file(source_model);
  if (model.num_classes() != target.num_classes) {
    throw std::invalid_argument("source model classes do not match the dataset");
  }
  const std::unique_ptr<TeacherInterface> teacher = build_teacher(config, target);

  write_manifest(make_manifest("adapt", config_path, out, config), out);
  AdaptationConfig run_config = config.adaptation();
  run_config.out_dir = out;
  AdaptOutcome outcome = resume ? adapt_resume(run_config, std::move(model), *teacher, target)
                                : adapt(run_config, std::move(model), *teacher, target);
  save_mlp_model_file(outcome.model, static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                      out + "/adapted_model.bin");
  std::cout << adapt_summary_json(outcome) << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& config, const std::string& config_path,
             const std::string& model_path, const std::string& features,
             const std::string& labels, const std::string& out) {
  require_file(model_path, "model checkpoint");
  const FeatureDataset data = load_dataset(features, labels);
  TargetModel model = load_mlp_model_file(model_path);
  const std::string report = eval_report_json(evaluate(model, data));
  if (!out.empty()) {
    write_manifest(make_manifest("eval", config_path, out, config), out);
    write_text_file(out + "/report.json", report);
  }
  std::cout << report << "\n";
  return kOk;
}

int cmd_analyze(const std::string& run_dir) {
  const TensorArchive checkpoint = TensorArchive::read_file(latest_checkpoint_path(run_dir));
  const Mat hist = checkpoint.get_mat("log.history");

  const std::string dir = run_dir + "/analysis";
  std::filesystem::create_directories(dir);

  std::string csv =
      "epoch,stage1_mean,stage2_mean,gap_fraction_mean,mean_uncertainty,target_accuracy,"
      "teacher_accuracy\n";
  std::vector<double> x;
  std::vector<PlotSeries> curves{{"stage1_mean", {}},       {"stage2_mean", {}},
                                 {"gap_fraction_mean", {}}, {"mean_uncertainty", {}},
                                 {"target_accuracy", {}},   {"teacher_accuracy", {}}};
  for (Eigen::Index i = 0; i < hist.rows(); ++i) {
    x.push_back(hist(i, 0));
    csv += g17(hist(i, 0));
    for (int c = 1; c < 7; ++c) {
      csv += "," + g17(hist(i, c));
      curves[static_cast<std::size_t>(c - 1)].y.push_back(hist(i, c));
    }
    csv += "\n";
  }
  write_text_file(dir + "/epochs.csv", csv);
  write_svg_line_plot(dir + "/losses.svg", "Stage losses by epoch", "epoch", "mean loss", x,
                      {curves[0], curves[1]});
  write_svg_line_plot(dir + "/adaptation.svg", "Adaptation trajectory", "epoch", "value", x,
                      {curves[2], curves[3], curves[4], curves[5]});

  nlohmann::ordered_json j;
  j["epochs"] = hist.rows();
  j["analysis_dir"] = dir;
  print_json(j);
  return kOk;
}

int cmd_bench(const RunConfig& config, const std::string& config_path, const std::string& out) {
  if (config.integer("epochs") < 1) {
    throw std::invalid_argument("bench-synthetic needs epochs >= 1");
  }
  write_manifest(make_manifest("bench-synthetic", config_path, out, config), out);

  const SyntheticBenchmark bench = make_synthetic_benchmark(config.benchmark());
  TargetModel model = make_benchmark_model(bench.pair.source, config.seed("model_seed"));
  AdaptationConfig run_config = config.adaptation();
  run_config.out_dir = out;
  AdaptOutcome outcome = adapt(run_config, std::move(model), bench.teacher, bench.pair.target);

  TargetModel oracle = train_oracle_reference(bench.pair, config.seed("model_seed"));
  Mat snap_x(static_cast<Eigen::Index>(outcome.snapshot_indices.size()),
             bench.pair.target.x.cols());
  for (std::size_t i = 0; i < outcome.snapshot_indices.size(); ++i) {
    snap_x.row(static_cast<Eigen::Index>(i)) =
        bench.pair.target.x.row(outcome.snapshot_indices[i]);
  }
  const Mat reference = oracle.forward(snap_x, false);
  const MmdTrajectory traj =
      mmd_trajectory(outcome.target_snapshots, outcome.teacher_snapshots, reference);
  write_mmd_outputs(traj, out + "/mmd.csv", out + "/mmd.svg");

  nlohmann::ordered_json j;
  j["baseline_accuracy"] = outcome.baseline_accuracy;
  j["final_accuracy"] = outcome.final_report.accuracy;
  j["gain"] = outcome.final_report.accuracy - outcome.baseline_accuracy;
  j["mean_uncertainty_first"] = outcome.history.front().mean_uncertainty;
  j["mean_uncertainty_last"] = outcome.history.back().mean_uncertainty;
  j["mmd_target_first"] = traj.target_mid.front();
  j["mmd_target_final"] = traj.target_mid.back();
  write_text_file(out + "/bench_summary.json", j.dump(2));
  print_json(j);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free domain adaptation: prompt-customized frozen teacher distilled into a "
               "small classifier."};
  app.require_subcommand(1);

  std::string config_path, features, labels, out, source_model, model_path, run_dir;
  std::string teacher_flag, teacher_archive_flag;
  bool resume = false;

  CLI::App* pre =
      app.add_subcommand("pretrain-source", "Train the source classifier on labeled feature CSVs");
  pre->add_option("-c,--config", config_path, "key = value configuration file");
  pre->add_option("--features", features, "feature CSV, one sample per row")->required();
  pre->add_option("--labels", labels, "label file, one integer per line")->required();
  pre->add_option("-o,--out", out, "run directory")->required();

  CLI::App* ad = app.add_subcommand("adapt", "Adapt a source checkpoint to an unlabeled target");
  ad->add_option("-c,--config", config_path, "key = value configuration file");
  ad->add_option("--source-model", source_model, "source classifier checkpoint")->required();
  ad->add_option("--features", features, "target feature CSV")->required();
  ad->add_option("--labels", labels, "target labels, used for evaluation only")->required();
  ad->add_option("-o,--out", out, "run directory")->required();
  ad->add_option("--teacher", teacher_flag, "teacher implementation: mock or clip-adapter");
  ad->add_option("--teacher-archive", teacher_archive_flag,
                 "precomputed-feature archive for the clip-adapter teacher");
  ad->add_flag("--resume", resume, "continue from the latest checkpoint under --out");

  CLI::App* ev = app.add_subcommand("eval", "Score a classifier checkpoint on a labeled dataset");
  ev->add_option("-c,--config", config_path, "key = value configuration file");
  ev->add_option("--model", model_path, "classifier checkpoint")->required();
  ev->add_option("--features", features, "feature CSV")->required();
  ev->add_option("--labels", labels, "label file")->required();
  ev->add_option("-o,--out", out, "optional report directory");

  CLI::App* an = app.add_subcommand("analyze", "Regenerate trajectory CSV and plots for a run");
  an->add_option("run_dir", run_dir, "directory of a finished or in-progress run")->required();

  CLI::App* bench =
      app.add_subcommand("bench-synthetic", "Run the full desk-scale pipeline end to end");
  bench->add_option("-c,--config", config_path, "key = value configuration file");
  bench->add_option("-o,--out", out, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*an) return cmd_analyze(run_dir);

    RunConfig config = RunConfig::from_file(config_path);
    if (!teacher_flag.empty()) config.set("teacher", teacher_flag, Provenance::kFlag);
    if (!teacher_archive_flag.empty()) {
      config.set("teacher_archive", teacher_archive_flag, Provenance::kFlag);
    }

    if (*pre) return cmd_pretrain(config, config_path, features, labels, out);
    if (*ad) return cmd_adapt(config, config_path, source_model, features, labels, out, resume);
    if (*ev) return cmd_eval(config, config_path, model_path, features, labels, out);
    if (*bench) return cmd_bench(config, config_path, out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kOk;
}
