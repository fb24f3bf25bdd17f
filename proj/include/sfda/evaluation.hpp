#pragma once
// Accuracy reporting, pseudo-label quality metrics, logit-space MMD
// trajectories, and the paired uncertainty-metric comparison harness.

#include <functional>
#include <string>
#include <vector>

#include "sfda/datasets.hpp"
#include "sfda/models.hpp"

namespace sfda {

struct AdaptationConfig;  // adaptation loop configuration; see engine header

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class;   // entries for classes absent from the data are 0
  double mean_per_class = 0.0;     // over classes present in the data
  double pl_acc = 0.0;             // argmax pseudo-label accuracy, all samples
  double hc_acc = 0.0;             // accuracy within the top-confidence quantile
  int n = 0;
  int num_classes = 0;
};

// Scores argmax predictions against labels. The high-confidence subset keeps
// the ceil(hc_quantile * n) rows with the largest max probability (ties broken
// by lower index). Pure: identical inputs give identical reports.
EvalReport evaluate_probs(const Mat& probs, const std::vector<int>& labels,
                          double hc_quantile = 0.3);
EvalReport evaluate(TargetModel& model, const FeatureDataset& data, double hc_quantile = 0.3);

std::string eval_report_json(const EvalReport& report);

struct MmdTrajectory {
  std::vector<double> target_mid;    // intermediate target-model logits vs reference
  std::vector<double> teacher_trim;  // customized-teacher logits vs reference
};

// Per-epoch MMD between each logit snapshot and the reference logit space.
// Snapshot lists must be equally long; every matrix must match the reference's
// column count and own at least two rows.
MmdTrajectory mmd_trajectory(const std::vector<Mat>& target_snapshots,
                             const std::vector<Mat>& teacher_snapshots,
                             const Mat& reference_logits);

// CSV `epoch,mmd_target_mid,mmd_teacher_trim` plus a line plot beside it.
void write_mmd_outputs(const MmdTrajectory& traj, const std::string& csv_path,
                       const std::string& svg_path);

enum class UncertaintyMetric { kReferenced, kPlainEntropy };
std::string metric_name(UncertaintyMetric metric);

struct MetricComparison {
  UncertaintyMetric metric_a = UncertaintyMetric::kReferenced;
  UncertaintyMetric metric_b = UncertaintyMetric::kPlainEntropy;
  std::vector<double> acc_a;  // per-epoch target accuracy, arm A
  std::vector<double> acc_b;
  double final_delta = 0.0;   // acc_a.back() - acc_b.back()
};

// Runs two otherwise-identical adaptations that differ only in the
// uncertainty metric. `make_model` must produce a fresh copy of the same
// source-pretrained model for each arm.
MetricComparison compare_uncertainty_metrics(const AdaptationConfig& config,
                                             const std::function<TargetModel()>& make_model,
                                             const TeacherInterface& teacher,
                                             const FeatureDataset& target,
                                             UncertaintyMetric metric_a,
                                             UncertaintyMetric metric_b);

// CSV `epoch,metric,accuracy` with one row per epoch per arm.
std::string comparison_csv(const MetricComparison& cmp);

}  // namespace sfda
