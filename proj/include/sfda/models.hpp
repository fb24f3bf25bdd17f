#pragma once

#include "sfda/checkpoint.hpp"
#include "sfda/rng.hpp"
#include "sfda/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sfda {

// Named view over a trainable tensor and its gradient buffer. Everything the
// optimizer and the checkpoint writer touch goes through this.
struct ParamRef {
  std::string name;
  Mat* value;
  Mat* grad;
};

std::uint64_t hash_params(const std::vector<ParamRef>& params);

// ---------------------------------------------------------------------------
// Layers. Each caches what its backward pass needs; backward may be called
// once per forward and accumulates into the grad buffers.

class Linear {
 public:
  Linear(int in_dim, int out_dim, Rng& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& d_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Mat w;  // out x in
  Mat b;  // 1 x out
  Mat w_grad, b_grad;

 private:
  Mat x_cache_;
};

class BatchNorm1d {
 public:
  explicit BatchNorm1d(int dim);
  Mat forward(const Mat& x, bool train);
  Mat backward(const Mat& d_out);  // only after a train-mode forward
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void save_buffers(TensorArchive& archive, const std::string& prefix) const;
  void load_buffers(const TensorArchive& archive, const std::string& prefix);

  Mat gamma, beta;  // 1 x dim
  Mat gamma_grad, beta_grad;
  Mat running_mean, running_var;  // 1 x dim
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  bool train_cached_ = false;
  Mat centered_, xhat_;
  Mat inv_std_;  // 1 x dim
};

// Linear head with per-row direction/magnitude decomposition: row weight
// w_j = g_j * v_j / |v_j|, no bias.
class WeightNormLinear {
 public:
  WeightNormLinear(int in_dim, int out_dim, Rng& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& d_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Mat v;  // out x in
  Mat g;  // 1 x out
  Mat v_grad, g_grad;

 private:
  Mat x_cache_;
};

// 3x3 convolution, stride 1, zero padding 1, over rows flattened as
// [channel][row][col]. Desk-scale direct loops.
class Conv3x3 {
 public:
  Conv3x3(int in_channels, int out_channels, int height, int width, Rng& rng);
  Mat forward(const Mat& x);
  Mat backward(const Mat& d_out);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  int out_size() const { return out_channels_ * height_ * width_; }

  Mat w;  // out_channels x (in_channels*9)
  Mat b;  // 1 x out_channels
  Mat w_grad, b_grad;

 private:
  int in_channels_, out_channels_, height_, width_;
  Mat x_cache_;
};

// ---------------------------------------------------------------------------
// Feature extractors.

class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Mat forward(const Mat& x, bool train) = 0;
  virtual Mat backward(const Mat& d_out) = 0;
  virtual int out_dim() const = 0;
  virtual void collect(std::vector<ParamRef>& out) = 0;
};

// Two ReLU blocks on flat features.
class MlpBackbone : public Backbone {
 public:
  MlpBackbone(int in_dim, int hidden, Rng& rng);
  Mat forward(const Mat& x, bool train) override;
  Mat backward(const Mat& d_out) override;
  int out_dim() const override;
  void collect(std::vector<ParamRef>& out) override;

 private:
  Linear fc1_, fc2_;
  Mat mask1_, mask2_;
};

// Conv + ReLU + 2x2 average pool for tiny single-channel images.
class TinyConvBackbone : public Backbone {
 public:
  TinyConvBackbone(int channels, int height, int width, int filters, Rng& rng);
  Mat forward(const Mat& x, bool train) override;
  Mat backward(const Mat& d_out) override;
  int out_dim() const override;
  void collect(std::vector<ParamRef>& out) override;

 private:
  Conv3x3 conv_;
  int filters_, height_, width_;
  Mat mask_;
};

// ---------------------------------------------------------------------------
// The trainable classifier: backbone -> bottleneck -> batch norm -> weight-
// normalized head.

class TargetModel {
 public:
  TargetModel(std::unique_ptr<Backbone> backbone, int bottleneck_dim, int num_classes, Rng& rng);

  Mat forward(const Mat& x, bool train);  // logits
  void backward(const Mat& d_logits);
  Mat predict_eval(const Mat& x);   // softmax of eval-mode logits
  Mat features_eval(const Mat& x);  // post-normalization bottleneck features

  std::vector<ParamRef> params();  // trainable tensors, stable names
  void zero_grad();
  std::uint64_t weights_hash();

  void save(TensorArchive& archive, const std::string& prefix);
  void load(const TensorArchive& archive, const std::string& prefix);

  int num_classes() const { return num_classes_; }
  int bottleneck_dim() const { return bottleneck_dim_; }

  // Normalization layer, exposed so callers can snapshot/restore the running
  // buffers around forwards that must leave the model bit-identical.
  BatchNorm1d& bn() { return bn_; }

 private:
  std::unique_ptr<Backbone> backbone_;
  Linear bottleneck_;
  BatchNorm1d bn_;
  WeightNormLinear head_;
  int bottleneck_dim_, num_classes_;
};

TargetModel make_mlp_model(int in_dim, int hidden, int bottleneck_dim, int num_classes,
                           Rng& rng);

// Self-describing classifier file: architecture dims alongside weights and
// normalization buffers, so a consumer can rebuild the model without the
// originating configuration.
void save_mlp_model_file(TargetModel& model, int in_dim, int hidden, const std::string& path);
TargetModel load_mlp_model_file(const std::string& path);

// ---------------------------------------------------------------------------
// Prompt context and teachers.

class TeacherInterface;

// The only trainable state on the teacher side. Shared mode keeps one block
// of `tokens` rows; per-class mode keeps one block per class.
struct PromptContext {
  Mat context;  // (tokens or C*tokens) x embed_dim
  Mat context_grad;
  std::vector<std::string> class_names;
  int tokens = 4;
  bool per_class = false;
  const TeacherInterface* teacher = nullptr;

  static PromptContext shared(int tokens, int embed_dim, std::vector<std::string> names);
  static PromptContext split_by_class(int tokens, int embed_dim,
                                      std::vector<std::string> names);

  Vec mean_for_class(int c) const;
  std::vector<ParamRef> params();
  void zero_grad();
};

class TeacherInterface {
 public:
  virtual ~TeacherInterface() = default;
  // Pre-softmax similarity scores; rows align with `indices`.
  virtual Mat score(const Mat& batch, const std::vector<int>& indices,
                    const PromptContext& ctx) const = 0;
  virtual Mat predict(const Mat& batch, const std::vector<int>& indices,
                      const PromptContext& ctx) const = 0;
  // Gradient of sum(d_probs . predict) w.r.t. the context matrix.
  virtual Mat context_grad(const Mat& batch, const std::vector<int>& indices,
                           const PromptContext& ctx, const Mat& d_probs) const = 0;
  virtual std::uint64_t weights_hash() const = 0;
  virtual int embed_dim() const = 0;
  virtual int num_classes() const = 0;
  virtual std::string describe() const = 0;
};

// Deterministic stand-in for a frozen vision-language scorer: a fixed random
// projection embeds inputs, class embeddings plus the prompt mean give the
// text side, cosine similarity over temperature gives scores. An optional
// ground-truth leak blends in the true one-hot at ratio omega, modeling an
// imperfect-but-informative external teacher.
class MockTeacher : public TeacherInterface {
 public:
  MockTeacher(Mat projection, Mat class_embeddings, double temperature = 0.07);
  static MockTeacher seeded(int in_dim, int embed_dim, int num_classes, std::uint64_t seed);

  void set_oracle_leak(std::vector<int> labels, double omega);
  void clear_oracle_leak();

  Mat score(const Mat& batch, const std::vector<int>& indices,
            const PromptContext& ctx) const override;
  Mat predict(const Mat& batch, const std::vector<int>& indices,
              const PromptContext& ctx) const override;
  Mat context_grad(const Mat& batch, const std::vector<int>& indices, const PromptContext& ctx,
                   const Mat& d_probs) const override;
  std::uint64_t weights_hash() const override;
  int embed_dim() const override { return static_cast<int>(class_embeddings_.cols()); }
  int num_classes() const override { return static_cast<int>(class_embeddings_.rows()); }
  std::string describe() const override;

 private:
  Mat embed(const Mat& batch) const;  // unit-norm rows

  Mat projection_;        // embed_dim x in_dim
  Mat class_embeddings_;  // C x embed_dim
  double temperature_;
  std::vector<int> leak_labels_;
  double leak_omega_ = 0.0;
};

// Frozen external scorer fed from an archive of precomputed image features
// (one row per dataset index), class text embeddings, and a logit scale.
// The prompt enters as an additive offset on the class embeddings, so a zero
// context reproduces the archived zero-shot behavior exactly.
class ClipAdapterTeacher : public TeacherInterface {
 public:
  struct Status {
    bool available = false;
    std::string reason;
  };
  // Reports whether `load` would succeed, without throwing.
  static Status probe(const std::string& path);
  static ClipAdapterTeacher load(const std::string& path);

  Mat score(const Mat& batch, const std::vector<int>& indices,
            const PromptContext& ctx) const override;
  Mat predict(const Mat& batch, const std::vector<int>& indices,
              const PromptContext& ctx) const override;
  Mat context_grad(const Mat& batch, const std::vector<int>& indices, const PromptContext& ctx,
                   const Mat& d_probs) const override;
  std::uint64_t weights_hash() const override;
  int embed_dim() const override { return static_cast<int>(class_embeddings_.cols()); }
  int num_classes() const override { return static_cast<int>(class_embeddings_.rows()); }
  int num_samples() const { return static_cast<int>(image_features_.rows()); }
  std::string describe() const override;
  const std::vector<std::string>& class_names() const { return class_names_; }

 private:
  ClipAdapterTeacher() = default;

  Mat image_features_;    // n x embed_dim, unit-normalized at load
  Mat class_embeddings_;  // C x embed_dim
  double logit_scale_ = 1.0;
  std::vector<std::string> class_names_;
};

// ---------------------------------------------------------------------------
// Optimizer and source pretraining.

struct ParamGroup {
  std::vector<ParamRef> params;
  double lr;
};

class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ParamGroup> groups, double momentum);

  void step();  // v <- momentum*v + grad; p <- p - lr*v
  void zero_grad();
  double max_abs_grad() const;

  void save(TensorArchive& archive, const std::string& prefix) const;
  void load(const TensorArchive& archive, const std::string& prefix);

 private:
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Mat>> velocity_;
  double momentum_;
};

struct PretrainOptions {
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-2;
  double momentum = 0.9;
  double label_smoothing = 0.1;
};

struct PretrainReport {
  double final_train_accuracy = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

// Smoothed cross-entropy gradient for a labeled batch; returns mean loss.
double smoothed_ce_loss(const Mat& logits, const std::vector<int>& labels, double smoothing,
                        Mat* d_logits);

PretrainReport pretrain_source(TargetModel& model, const Mat& x, const std::vector<int>& labels,
                               const PretrainOptions& opts, Rng& rng);

}  // namespace sfda
