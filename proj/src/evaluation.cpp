#include "sfda/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "sfda/core_math.hpp"
#include "sfda/engine.hpp"
#include "sfda/io_util.hpp"

namespace sfda {

EvalReport evaluate_probs(const Mat& probs, const std::vector<int>& labels, double hc_quantile) {
  const int n = static_cast<int>(probs.rows());
  const int c = static_cast<int>(probs.cols());
  if (n == 0) throw std::invalid_argument("evaluate: empty data");
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("evaluate: one label per prediction row required");
  }
  if (!(hc_quantile > 0.0) || hc_quantile > 1.0) {
    throw std::invalid_argument("evaluate: hc_quantile must lie in (0, 1]");
  }

  EvalReport report;
  report.n = n;
  report.num_classes = c;
  report.per_class.assign(static_cast<std::size_t>(c), 0.0);

  std::vector<int> class_count(static_cast<std::size_t>(c), 0);
  std::vector<int> class_correct(static_cast<std::size_t>(c), 0);
  std::vector<char> correct(static_cast<std::size_t>(n), 0);
  std::vector<double> confidence(static_cast<std::size_t>(n), 0.0);
  int total_correct = 0;
  for (int i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c) throw std::invalid_argument("evaluate: label out of range");
    Eigen::Index argmax = 0;
    confidence[static_cast<std::size_t>(i)] = probs.row(i).maxCoeff(&argmax);
    const bool hit = static_cast<int>(argmax) == label;
    correct[static_cast<std::size_t>(i)] = hit ? 1 : 0;
    total_correct += hit ? 1 : 0;
    ++class_count[static_cast<std::size_t>(label)];
    class_correct[static_cast<std::size_t>(label)] += hit ? 1 : 0;
  }

  report.accuracy = static_cast<double>(total_correct) / n;
  report.pl_acc = report.accuracy;

  int present = 0;
  double per_class_sum = 0.0;
  for (int k = 0; k < c; ++k) {
    if (class_count[static_cast<std::size_t>(k)] == 0) continue;
    const double acc = static_cast<double>(class_correct[static_cast<std::size_t>(k)]) /
                       class_count[static_cast<std::size_t>(k)];
    report.per_class[static_cast<std::size_t>(k)] = acc;
    per_class_sum += acc;
    ++present;
  }
  report.mean_per_class = present == 0 ? 0.0 : per_class_sum / present;

  // Top-confidence subset: ties broken by lower index for determinism.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return confidence[static_cast<std::size_t>(a)] > confidence[static_cast<std::size_t>(b)];
  });
  const int keep = std::max(1, static_cast<int>(std::ceil(hc_quantile * n)));
  int hc_correct = 0;
  for (int i = 0; i < keep; ++i) {
    hc_correct += correct[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  report.hc_acc = static_cast<double>(hc_correct) / keep;
  return report;
}

EvalReport evaluate(TargetModel& model, const FeatureDataset& data, double hc_quantile) {
  return evaluate_probs(model.predict_eval(data.x), data.labels, hc_quantile);
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["accuracy"] = report.accuracy;
  j["per_class"] = report.per_class;
  j["mean_per_class"] = report.mean_per_class;
  j["pl_acc"] = report.pl_acc;
  j["hc_acc"] = report.hc_acc;
  j["n"] = report.n;
  j["num_classes"] = report.num_classes;
  return j.dump(2);
}

MmdTrajectory mmd_trajectory(const std::vector<Mat>& target_snapshots,
                             const std::vector<Mat>& teacher_snapshots,
                             const Mat& reference_logits) {
  if (target_snapshots.size() != teacher_snapshots.size()) {
    throw std::invalid_argument("mmd_trajectory: snapshot families differ in length");
  }
  MmdTrajectory traj;
  for (std::size_t k = 0; k < target_snapshots.size(); ++k) {
    if (target_snapshots[k].cols() != reference_logits.cols() ||
        teacher_snapshots[k].cols() != reference_logits.cols()) {
      throw std::invalid_argument("mmd_trajectory: snapshot/reference dimension mismatch");
    }
    traj.target_mid.push_back(mmd_distance(target_snapshots[k], reference_logits));
    traj.teacher_trim.push_back(mmd_distance(teacher_snapshots[k], reference_logits));
  }
  return traj;
}

void write_mmd_outputs(const MmdTrajectory& traj, const std::string& csv_path,
                       const std::string& svg_path) {
  std::string csv = "epoch,mmd_target_mid,mmd_teacher_trim\n";
  std::vector<double> epochs;
  for (std::size_t k = 0; k < traj.target_mid.size(); ++k) {
    csv += std::to_string(k) + "," + g17(traj.target_mid[k]) + "," + g17(traj.teacher_trim[k]) +
           "\n";
    epochs.push_back(static_cast<double>(k));
  }
  write_text_file(csv_path, csv);
  write_svg_line_plot(svg_path, "Logit-space MMD to reference", "epoch", "MMD", epochs,
                      {{"target-mid", traj.target_mid}, {"teacher-trim", traj.teacher_trim}});
}

std::string metric_name(UncertaintyMetric metric) {
  return metric == UncertaintyMetric::kReferenced ? "referenced" : "plain_entropy";
}

MetricComparison compare_uncertainty_metrics(const AdaptationConfig& config,
                                             const std::function<TargetModel()>& make_model,
                                             const TeacherInterface& teacher,
                                             const FeatureDataset& target,
                                             UncertaintyMetric metric_a,
                                             UncertaintyMetric metric_b) {
  MetricComparison cmp;
  cmp.metric_a = metric_a;
  cmp.metric_b = metric_b;
  auto run_arm = [&](UncertaintyMetric metric, const std::string& arm) {
    AdaptationConfig arm_config = config;
    arm_config.metric = metric;
    if (!config.out_dir.empty()) arm_config.out_dir = config.out_dir + "/" + arm;
    AdaptOutcome out = adapt(arm_config, make_model(), teacher, target);
    std::vector<double> acc;
    for (const EpochMetrics& m : out.history) acc.push_back(m.target_accuracy);
    return acc;
  };
  cmp.acc_a = run_arm(metric_a, "arm_a");
  cmp.acc_b = run_arm(metric_b, "arm_b");
  if (!cmp.acc_a.empty() && !cmp.acc_b.empty()) {
    cmp.final_delta = cmp.acc_a.back() - cmp.acc_b.back();
  }
  return cmp;
}

std::string comparison_csv(const MetricComparison& cmp) {
  std::string csv = "epoch,metric,accuracy\n";
  for (std::size_t k = 0; k < cmp.acc_a.size(); ++k) {
    csv += std::to_string(k) + "," + metric_name(cmp.metric_a) + "," + g17(cmp.acc_a[k]) + "\n";
  }
  for (std::size_t k = 0; k < cmp.acc_b.size(); ++k) {
    csv += std::to_string(k) + "," + metric_name(cmp.metric_b) + "," + g17(cmp.acc_b[k]) + "\n";
  }
  return csv;
}

}  // namespace sfda
