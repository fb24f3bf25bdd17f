#pragma once
// The alternating adaptation loop: each epoch refreshes the teacher store,
// customizes the prompt context by mutual-information maximization (Stage I),
// then trains the target model on the gap region with fused pseudo-labels
// (Stage II), with per-epoch thresholds, references, metrics, and checkpoints.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sfda/checkpoint.hpp"
#include "sfda/datasets.hpp"
#include "sfda/evaluation.hpp"
#include "sfda/models.hpp"
#include "sfda/objectives.hpp"
#include "sfda/prediction_bank.hpp"
#include "sfda/rng.hpp"
#include "sfda/uncertainty.hpp"

namespace sfda {

struct AdaptationConfig {
  ObjectiveWeights weights;     // alpha/beta/eta/iota, calibration form, pc scope
  double lambda_rate = 10.0;    // fusion-weight distribution rate
  int top_n = 2;                // categories kept by the calibration loss
  double epsilon = 0.01;        // curriculum threshold m_k = epsilon * gamma^k
  double gamma = 1.01;
  double delta = 0.1;           // reference update weight
  ReferenceMode reference_mode = ReferenceMode::kEma;
  UncertaintyMetric metric = UncertaintyMetric::kReferenced;
  int epochs = 15;              // K
  int batch_size = 64;
  double momentum = 0.9;
  double lr_new = 3e-3;         // bottleneck and head
  double lr_backbone = 3e-4;    // 10x below the new layers, usual fine-tuning split
  double lr_prompt = 3e-3;
  int prompt_tokens = 4;
  bool prompt_per_class = false;
  std::uint64_t seed = 0;
  int snapshot_rows = 512;      // logit-snapshot subset size (capped at n)
  std::string out_dir;          // metrics/checkpoint sink; empty keeps runs in memory
};

struct EpochMetrics {
  int epoch = 0;
  double stage1_mean = 0.0;        // mean Stage-I loss over the epoch's iterations
  double stage2_mean = 0.0;
  double gap_fraction_mean = 0.0;  // mean over Stage-II iterations
  double mean_uncertainty = 0.0;   // dataset mean U at the epoch's close
  double target_accuracy = 0.0;    // eval-mode accuracy at epoch end
  double teacher_accuracy = 0.0;   // argmax accuracy of the epoch's teacher store
};

// One adaptation run; owns the model, prompt context, bank, reference, and
// optimizers. Stages are exposed individually so their contracts can be
// checked; run_epoch composes them in order.
class AdaptationRun {
 public:
  AdaptationRun(const AdaptationConfig& config, TargetModel model,
                const TeacherInterface& teacher, const FeatureDataset& target);

  // Rewrites the teacher store from the current context; the rows then stay
  // constant until the next refresh.
  void refresh_teacher_store();

  // One full pass of prompt-context optimization; the target model and its
  // normalization buffers are untouched. Returns per-iteration losses.
  std::vector<double> run_stage1();

  // One full pass of gap-region training. Iterations whose total gradient is
  // zero (empty gap under gap scope) leave the model bit-identical. Returns
  // per-iteration loss breakdowns.
  std::vector<LossBreakdown> run_stage2();

  // refresh store -> Stage I -> reference/threshold -> Stage II -> metrics,
  // snapshots, checkpoint. Appends to history and returns the epoch's row.
  EpochMetrics run_epoch();

  int epochs_completed() const { return epoch_; }
  double current_threshold() const;  // m_k for the next epoch to run

  TargetModel& model() { return model_; }
  PromptContext& context() { return context_; }
  const PredictionBank& bank() const { return *bank_; }
  const ReferenceState& reference() const { return reference_; }
  const std::vector<EpochMetrics>& history() const { return history_; }
  const std::string& metrics_csv() const { return csv_; }
  const std::vector<Mat>& target_snapshots() const { return target_snaps_; }
  const std::vector<Mat>& teacher_snapshots() const { return teacher_snaps_; }
  const std::vector<int>& snapshot_indices() const { return snap_indices_; }

  void save_checkpoint(TensorArchive& archive) const;
  void load_checkpoint(const TensorArchive& archive);

 private:
  void write_outputs() const;  // metrics.csv under out_dir, if set
  void append_snapshots();
  Mat gather(const std::vector<int>& indices) const;

  AdaptationConfig config_;
  TargetModel model_;
  const TeacherInterface& teacher_;
  const FeatureDataset& data_;
  PromptContext context_;
  std::unique_ptr<PredictionBank> bank_;
  ReferenceState reference_;
  CurriculumSchedule schedule_;
  SgdOptimizer target_opt_;
  SgdOptimizer prompt_opt_;
  Rng rng_;
  int epoch_ = 0;
  double epoch_mean_u_ = 0.0;  // dataset mean U at the epoch's close
  std::string csv_;
  std::vector<EpochMetrics> history_;
  std::vector<int> snap_indices_;
  std::vector<Mat> target_snaps_;
  std::vector<Mat> teacher_snaps_;
};

struct AdaptOutcome {
  TargetModel model;
  std::vector<EpochMetrics> history;
  double baseline_accuracy = 0.0;  // source model on target, before adaptation
  EvalReport final_report;
  std::string metrics_csv;
  std::vector<Mat> target_snapshots;
  std::vector<Mat> teacher_snapshots;
  std::vector<int> snapshot_indices;
};

// Runs K epochs and returns the adapted model plus metrics. K=0 returns the
// model unchanged. Non-finite losses abort with partial logs preserved under
// config.out_dir.
AdaptOutcome adapt(const AdaptationConfig& config, TargetModel model,
                   const TeacherInterface& teacher, const FeatureDataset& target);

// Highest-numbered checkpoint_epoch_<k>.bin under dir; throws
// std::invalid_argument when the directory holds none.
std::string latest_checkpoint_path(const std::string& dir);

// Picks up where the highest-numbered epoch checkpoint under config.out_dir
// left off and runs the remaining epochs. The model argument is the same
// source model the original run started from; it supplies the baseline
// accuracy and the parameter shapes the checkpoint is restored into.
AdaptOutcome adapt_resume(const AdaptationConfig& config, TargetModel model,
                          const TeacherInterface& teacher, const FeatureDataset& target);

// Baseline/final accuracies plus the per-epoch curve families, as written to
// out_dir/summary.json at the end of a run.
std::string adapt_summary_json(const AdaptOutcome& out);

inline constexpr const char* kMetricsCsvHeader =
    "epoch,iter,stage,loss_s1,loss_pc,loss_cac,loss_rc,loss_balance,loss_s2,gap_fraction,lr";

}  // namespace sfda
