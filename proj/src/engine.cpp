#include "sfda/engine.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "sfda/core_math.hpp"
#include "sfda/io_util.hpp"

namespace sfda {

namespace {

void check_config(const AdaptationConfig& c, const TargetModel& model,
                  const TeacherInterface& teacher, const FeatureDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("adaptation needs target samples");
  if (static_cast<int>(data.labels.size()) != data.size()) {
    throw std::invalid_argument("target labels must cover every sample");
  }
  if (teacher.num_classes() != model.num_classes()) {
    throw std::invalid_argument("teacher/model class count mismatch");
  }
  if (c.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (c.top_n < 1 || c.top_n >= model.num_classes()) {
    throw std::invalid_argument("top_n must lie in [1, C)");
  }
  if (!(c.epsilon > 0.0) || !(c.gamma > 0.0)) {
    throw std::invalid_argument("curriculum parameters must be positive");
  }
  if (!(c.lambda_rate > 0.0)) throw std::invalid_argument("lambda_rate must be positive");
  if (c.delta < 0.0) throw std::invalid_argument("delta must be non-negative");
  if (c.prompt_tokens < 1) throw std::invalid_argument("prompt_tokens must be positive");
  if (c.snapshot_rows < 2) throw std::invalid_argument("snapshot_rows must be at least 2");
}

std::vector<std::string> generic_class_names(int num_classes) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

PromptContext make_context(const AdaptationConfig& c, const TeacherInterface& teacher) {
  const auto names = generic_class_names(teacher.num_classes());
  return c.prompt_per_class
             ? PromptContext::split_by_class(c.prompt_tokens, teacher.embed_dim(), names)
             : PromptContext::shared(c.prompt_tokens, teacher.embed_dim(), names);
}

// Backbone parameters train at the pretrained-layer rate; bottleneck, norm,
// and head at the new-layer rate.
std::vector<ParamGroup> target_groups(TargetModel& model, const AdaptationConfig& c) {
  ParamGroup backbone{{}, c.lr_backbone};
  ParamGroup fresh{{}, c.lr_new};
  for (ParamRef& p : model.params()) {
    (p.name.rfind("backbone.", 0) == 0 ? backbone : fresh).params.push_back(p);
  }
  return {backbone, fresh};
}

std::vector<int> all_indices(int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

std::vector<int> spaced_indices(int n, int want) {
  const int take = std::min(n, want);
  std::vector<int> idx(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) {
    idx[static_cast<std::size_t>(i)] = static_cast<int>(static_cast<long long>(i) * n / take);
  }
  return idx;
}

Vec row_entropies(const Mat& probs) {
  Vec h(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) h[i] = entropy(probs.row(i).transpose());
  return h;
}

double argmax_accuracy(const Mat& probs, const std::vector<int>& labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index argmax = 0;
    probs.row(i).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return probs.rows() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(probs.rows());
}

}  // namespace

AdaptationRun::AdaptationRun(const AdaptationConfig& config, TargetModel model,
                             const TeacherInterface& teacher, const FeatureDataset& target)
    : config_(config),
      model_(std::move(model)),
      teacher_(teacher),
      data_(target),
      context_(make_context(config, teacher)),
      reference_{},
      schedule_(config.epsilon, config.gamma),
      target_opt_(target_groups(model_, config), config.momentum),
      prompt_opt_({ParamGroup{context_.params(), config.lr_prompt}}, config.momentum),
      rng_(config.seed) {
  check_config(config_, model_, teacher_, data_);
  const Mat initial_target = model_.predict_eval(data_.x);
  const Mat initial_vil = teacher_.predict(data_.x, all_indices(data_.size()), context_);
  bank_ = std::make_unique<PredictionBank>(initial_target, initial_vil);
  reference_ = init_reference(bank_->target_store().cast<double>(), config_.delta,
                              config_.reference_mode);
  snap_indices_ = spaced_indices(data_.size(), config_.snapshot_rows);
  csv_ = std::string(kMetricsCsvHeader) + "\n";
  if (!config_.out_dir.empty()) std::filesystem::create_directories(config_.out_dir);
}

Mat AdaptationRun::gather(const std::vector<int>& indices) const {
  Mat x(static_cast<Eigen::Index>(indices.size()), data_.x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = data_.x.row(indices[i]);
  }
  return x;
}

double AdaptationRun::current_threshold() const { return threshold(epoch_, schedule_); }

void AdaptationRun::refresh_teacher_store() {
  bank_->refresh_vil_all(teacher_.predict(data_.x, all_indices(data_.size()), context_));
}

void AdaptationRun::write_outputs() const {
  if (config_.out_dir.empty()) return;
  write_text_file(config_.out_dir + "/metrics.csv", csv_);
}

[[noreturn]] static void abort_with_state(AdaptationRun& run, const AdaptationConfig& config,
                                          const std::string& what) {
  if (!config.out_dir.empty()) {
    TensorArchive state;
    run.save_checkpoint(state);
    state.write(config.out_dir + "/abort_state.bin");
    write_text_file(config.out_dir + "/metrics.csv", run.metrics_csv());
  }
  throw std::runtime_error(what);
}

std::vector<double> AdaptationRun::run_stage1() {
  std::vector<double> losses;
  const auto batches = make_batches(data_.size(), config_.batch_size, rng_);
  int iter = 0;
  for (const std::vector<int>& batch : batches) {
    const Mat x = gather(batch);
    const Mat target_probs = model_.predict_eval(x);
    const Mat vil_probs = teacher_.predict(x, batch, context_);
    Mat d_vil;
    const double loss = stage1_loss(target_probs, vil_probs, &d_vil);
    if (!std::isfinite(loss)) {
      abort_with_state(*this, config_,
                       "non-finite stage-1 loss at epoch " + std::to_string(epoch_) +
                           " iteration " + std::to_string(iter));
    }
    context_.zero_grad();
    context_.context_grad += teacher_.context_grad(x, batch, context_, d_vil);
    prompt_opt_.step();

    csv_ += std::to_string(epoch_) + "," + std::to_string(iter) + ",1," + g17(loss) +
            ",,,,,,," + g17(config_.lr_prompt) + "\n";
    losses.push_back(loss);
    ++iter;
  }
  return losses;
}

std::vector<LossBreakdown> AdaptationRun::run_stage2() {
  const bool referenced = config_.metric == UncertaintyMetric::kReferenced;
  const double m_k = threshold(epoch_, schedule_);

  // The reference update runs once per epoch after the first, fed by each
  // sample's entropy as of its last visit.
  if (epoch_ >= 1 && reference_.epoch < epoch_) {
    update_reference(reference_, bank_->target_entropies());
  }

  std::vector<LossBreakdown> breakdowns;
  const auto batches = make_batches(data_.size(), config_.batch_size, rng_);
  int iter = 0;
  for (const std::vector<int>& batch : batches) {
    const Mat x = gather(batch);
    const Mat bn_mean = model_.bn().running_mean;
    const Mat bn_var = model_.bn().running_var;

    Stage2Inputs in;
    in.batch_logits = model_.forward(x, true);
    if (!in.batch_logits.allFinite()) {
      abort_with_state(*this, config_,
                       "non-finite logits at epoch " + std::to_string(epoch_) + " iteration " +
                           std::to_string(iter));
    }
    in.batch_probs = softmax_rows(in.batch_logits);
    in.batch_vil = teacher_.predict(x, batch, context_);
    in.rho_batch.resize(static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      in.rho_batch[static_cast<Eigen::Index>(i)] = referenced ? reference_.rho[batch[i]] : 0.0;
    }

    const Vec uncertainties = row_entropies(in.batch_probs) - in.rho_batch;
    in.gap = detect_gap_region(uncertainties, m_k);
    in.gap_tops.reserve(in.gap.size());
    for (int local : in.gap) {
      const double tau = sample_fusion_weight(config_.lambda_rate, rng_);
      const Vec fused = fuse(bank_->target_row(batch[static_cast<std::size_t>(local)]),
                             in.batch_vil.row(local).transpose(), tau);
      in.gap_tops.push_back(top_n_categories(fused, config_.top_n));
    }

    Mat d_logits;
    const LossBreakdown bd = stage2_loss(in, config_.weights, &d_logits);
    if (!std::isfinite(bd.stage2)) {
      abort_with_state(*this, config_,
                       "non-finite stage-2 loss at epoch " + std::to_string(epoch_) +
                           " iteration " + std::to_string(iter));
    }

    model_.zero_grad();
    model_.backward(d_logits);
    if (target_opt_.max_abs_grad() > 0.0) {
      target_opt_.step();
    } else {
      // Nothing to optimize: undo the train-forward's buffer drift so the
      // iteration is a complete no-op on the model.
      model_.bn().running_mean = bn_mean;
      model_.bn().running_var = bn_var;
    }
    bank_->update_target_rows(batch, model_.predict_eval(x));

    csv_ += std::to_string(epoch_) + "," + std::to_string(iter) + ",2,," + g17(bd.pc) + "," +
            g17(bd.cac) + "," + g17(bd.rc) + "," + g17(bd.balance) + "," + g17(bd.stage2) + "," +
            g17(bd.gap_fraction) + "," + g17(config_.lr_new) + "\n";
    breakdowns.push_back(bd);
    ++iter;
  }

  // Closing uncertainty for the epoch: each sample's entropy as of its last
  // visit, measured against the reference this epoch's gap detection used.
  const Vec closing = bank_->target_entropies();
  epoch_mean_u_ = referenced ? (closing - reference_.rho).mean() : closing.mean();
  return breakdowns;
}

void AdaptationRun::append_snapshots() {
  const Mat x = gather(snap_indices_);
  target_snaps_.push_back(model_.forward(x, false));
  teacher_snaps_.push_back(teacher_.score(x, snap_indices_, context_));
}

EpochMetrics AdaptationRun::run_epoch() {
  refresh_teacher_store();
  const std::vector<double> s1 = run_stage1();
  const std::vector<LossBreakdown> s2 = run_stage2();

  EpochMetrics m;
  m.epoch = epoch_;
  for (double v : s1) m.stage1_mean += v;
  if (!s1.empty()) m.stage1_mean /= static_cast<double>(s1.size());
  for (const LossBreakdown& bd : s2) {
    m.stage2_mean += bd.stage2;
    m.gap_fraction_mean += bd.gap_fraction;
  }
  if (!s2.empty()) {
    m.stage2_mean /= static_cast<double>(s2.size());
    m.gap_fraction_mean /= static_cast<double>(s2.size());
  }
  m.mean_uncertainty = epoch_mean_u_;
  m.target_accuracy = evaluate(model_, data_).accuracy;
  m.teacher_accuracy = argmax_accuracy(bank_->vil_store().cast<double>(), data_.labels);

  append_snapshots();
  history_.push_back(m);
  ++epoch_;

  if (!config_.out_dir.empty()) {
    TensorArchive checkpoint;
    save_checkpoint(checkpoint);
    checkpoint.write(config_.out_dir + "/checkpoint_epoch_" + std::to_string(m.epoch) + ".bin");
    write_outputs();
  }
  return m;
}

void AdaptationRun::save_checkpoint(TensorArchive& archive) const {
  archive.put_i64("run.epoch", {epoch_});
  const_cast<TargetModel&>(model_).save(archive, "model.");
  archive.put("prompt.context", context_.context);
  target_opt_.save(archive, "opt_target.");
  prompt_opt_.save(archive, "opt_prompt.");
  archive.put_f32("bank.target", bank_->target_store());
  archive.put_f32("bank.vil", bank_->vil_store());
  archive.put("ref.rho", reference_.rho);
  archive.put_i64("ref.epoch", {reference_.epoch});
  archive.put_bytes("rng.state", rng_.save_state());
  archive.put_bytes("log.csv", csv_);

  Mat hist(static_cast<Eigen::Index>(history_.size()), 7);
  for (std::size_t i = 0; i < history_.size(); ++i) {
    const EpochMetrics& m = history_[i];
    hist.row(static_cast<Eigen::Index>(i)) << static_cast<double>(m.epoch), m.stage1_mean,
        m.stage2_mean, m.gap_fraction_mean, m.mean_uncertainty, m.target_accuracy,
        m.teacher_accuracy;
  }
  archive.put("log.history", hist);

  std::vector<std::int64_t> snap_idx(snap_indices_.begin(), snap_indices_.end());
  archive.put_i64("snap.indices", snap_idx);
  archive.put_i64("snap.count", {static_cast<std::int64_t>(target_snaps_.size())});
  for (std::size_t i = 0; i < target_snaps_.size(); ++i) {
    archive.put("snap.target." + std::to_string(i), target_snaps_[i]);
    archive.put("snap.teacher." + std::to_string(i), teacher_snaps_[i]);
  }
}

void AdaptationRun::load_checkpoint(const TensorArchive& archive) {
  epoch_ = static_cast<int>(archive.get_i64("run.epoch").at(0));
  model_.load(archive, "model.");
  context_.context = archive.get_mat("prompt.context");
  context_.zero_grad();
  target_opt_.load(archive, "opt_target.");
  prompt_opt_.load(archive, "opt_prompt.");
  bank_ = std::make_unique<PredictionBank>(archive.get_f32("bank.target").cast<double>(),
                                           archive.get_f32("bank.vil").cast<double>());
  reference_.rho = archive.get_vec("ref.rho");
  reference_.epoch = static_cast<int>(archive.get_i64("ref.epoch").at(0));
  reference_.delta = config_.delta;
  reference_.mode = config_.reference_mode;
  rng_.load_state(archive.get_bytes("rng.state"));
  csv_ = archive.get_bytes("log.csv");

  const Mat hist = archive.get_mat("log.history");
  history_.clear();
  for (Eigen::Index i = 0; i < hist.rows(); ++i) {
    EpochMetrics m;
    m.epoch = static_cast<int>(hist(i, 0));
    m.stage1_mean = hist(i, 1);
    m.stage2_mean = hist(i, 2);
    m.gap_fraction_mean = hist(i, 3);
    m.mean_uncertainty = hist(i, 4);
    m.target_accuracy = hist(i, 5);
    m.teacher_accuracy = hist(i, 6);
    history_.push_back(m);
  }

  const auto snap_idx = archive.get_i64("snap.indices");
  snap_indices_.assign(snap_idx.begin(), snap_idx.end());
  const auto count = static_cast<std::size_t>(archive.get_i64("snap.count").at(0));
  target_snaps_.clear();
  teacher_snaps_.clear();
  for (std::size_t i = 0; i < count; ++i) {
    target_snaps_.push_back(archive.get_mat("snap.target." + std::to_string(i)));
    teacher_snaps_.push_back(archive.get_mat("snap.teacher." + std::to_string(i)));
  }
}

std::string adapt_summary_json(const AdaptOutcome& out) {
  nlohmann::ordered_json j;
  j["baseline_accuracy"] = out.baseline_accuracy;
  j["final"] = nlohmann::ordered_json::parse(eval_report_json(out.final_report));
  nlohmann::ordered_json curves;
  for (const EpochMetrics& m : out.history) {
    curves["stage1_mean"].push_back(m.stage1_mean);
    curves["stage2_mean"].push_back(m.stage2_mean);
    curves["gap_fraction_mean"].push_back(m.gap_fraction_mean);
    curves["mean_uncertainty"].push_back(m.mean_uncertainty);
    curves["target_accuracy"].push_back(m.target_accuracy);
    curves["teacher_accuracy"].push_back(m.teacher_accuracy);
  }
  j["curves"] = std::move(curves);
  j["epochs"] = out.history.size();
  return j.dump(2);
}

namespace {

AdaptOutcome finish_run(AdaptationRun& run, double baseline, const AdaptationConfig& config,
                        const FeatureDataset& target) {
  AdaptOutcome out{std::move(run.model()),  run.history(),          baseline,
                   EvalReport{},            run.metrics_csv(),      run.target_snapshots(),
                   run.teacher_snapshots(), run.snapshot_indices()};
  out.final_report = evaluate(out.model, target);
  if (!config.out_dir.empty()) {
    write_text_file(config.out_dir + "/metrics.csv", out.metrics_csv);
    write_text_file(config.out_dir + "/summary.json", adapt_summary_json(out));
  }
  return out;
}

}  // namespace

AdaptOutcome adapt(const AdaptationConfig& config, TargetModel model,
                   const TeacherInterface& teacher, const FeatureDataset& target) {
  const double baseline = evaluate(model, target).accuracy;
  AdaptationRun run(config, std::move(model), teacher, target);
  for (int k = 0; k < config.epochs; ++k) run.run_epoch();
  return finish_run(run, baseline, config, target);
}

std::string latest_checkpoint_path(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::invalid_argument("run directory not found: " + dir);
  }
  const std::string prefix = "checkpoint_epoch_";
  const std::string suffix = ".bin";
  int latest = -1;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= prefix.size() + suffix.size() || name.rfind(prefix, 0) != 0 ||
        !name.ends_with(suffix)) {
      continue;
    }
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (digits.find_first_not_of("0123456789") == std::string::npos) {
      latest = std::max(latest, std::stoi(digits));
    }
  }
  if (latest < 0) throw std::invalid_argument("no epoch checkpoints under " + dir);
  return dir + "/" + prefix + std::to_string(latest) + suffix;
}

AdaptOutcome adapt_resume(const AdaptationConfig& config, TargetModel model,
                          const TeacherInterface& teacher, const FeatureDataset& target) {
  if (config.out_dir.empty()) {
    throw std::invalid_argument("resume needs config.out_dir pointing at an existing run");
  }
  const std::string checkpoint = latest_checkpoint_path(config.out_dir);
  const double baseline = evaluate(model, target).accuracy;
  AdaptationRun run(config, std::move(model), teacher, target);
  run.load_checkpoint(TensorArchive::read_file(checkpoint));
  while (run.epochs_completed() < config.epochs) run.run_epoch();
  return finish_run(run, baseline, config, target);
}

}  // namespace sfda
