#include "sfda/models.hpp"

#include "sfda/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sfda {

namespace {

constexpr double kNormGuard = 1e-12;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a_mat(std::uint64_t h, const Mat& m) {
  return fnv1a(h, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

Mat kaiming_uniform(int out_dim, int in_dim, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Mat w(out_dim, in_dim);
  for (int i = 0; i < out_dim; ++i) {
    for (int j = 0; j < in_dim; ++j) w(i, j) = limit * (2.0 * rng.uniform() - 1.0);
  }
  return w;
}

void check_context(const PromptContext& ctx, int embed_dim, int num_classes) {
  if (ctx.tokens < 1) throw std::invalid_argument("prompt context: tokens must be >= 1");
  if (ctx.context.cols() != embed_dim) {
    throw std::invalid_argument("prompt context: embed dim mismatch");
  }
  const Eigen::Index want =
      ctx.per_class ? static_cast<Eigen::Index>(num_classes) * ctx.tokens : ctx.tokens;
  if (ctx.context.rows() != want) {
    throw std::invalid_argument("prompt context: row count does not match token layout");
  }
}

// Text-side features: class embedding plus the class's prompt mean, then the
// cosine-similarity score table against unit image embeddings.
struct CosineScores {
  Mat f;      // C x d, raw
  Mat fhat;   // C x d, unit rows
  Mat scores; // B x C
};

CosineScores cosine_scores(const Mat& ehat, const Mat& class_embeds, const PromptContext& ctx,
                           double factor) {
  const int c = static_cast<int>(class_embeds.rows());
  CosineScores out;
  out.f.resize(c, class_embeds.cols());
  out.fhat.resize(c, class_embeds.cols());
  for (int k = 0; k < c; ++k) {
    out.f.row(k) = class_embeds.row(k) + ctx.mean_for_class(k).transpose();
    const double n = std::max(out.f.row(k).norm(), kNormGuard);
    out.fhat.row(k) = out.f.row(k) / n;
  }
  out.scores = factor * (ehat * out.fhat.transpose());
  return out;
}

Mat cosine_context_grad(const CosineScores& cs, const Mat& ehat, const PromptContext& ctx,
                        double factor, const Mat& d_scores) {
  Mat d_ctx = Mat::Zero(ctx.context.rows(), ctx.context.cols());
  const int c = static_cast<int>(cs.f.rows());
  for (int k = 0; k < c; ++k) {
    // d(scores.col(k))/d fhat_k, then back through the normalization.
    Vec d_fhat = factor * (ehat.transpose() * d_scores.col(k));
    const double n = std::max(cs.f.row(k).norm(), kNormGuard);
    Vec fhat = cs.fhat.row(k).transpose();
    Vec d_f = (d_fhat - fhat * fhat.dot(d_fhat)) / n;
    if (ctx.per_class) {
      for (int t = 0; t < ctx.tokens; ++t) {
        d_ctx.row(static_cast<Eigen::Index>(k) * ctx.tokens + t) +=
            d_f.transpose() / static_cast<double>(ctx.tokens);
      }
    } else {
      for (Eigen::Index t = 0; t < d_ctx.rows(); ++t) {
        d_ctx.row(t) += d_f.transpose() / static_cast<double>(d_ctx.rows());
      }
    }
  }
  return d_ctx;
}

}  // namespace

std::uint64_t hash_params(const std::vector<ParamRef>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const ParamRef& p : params) {
    h = fnv1a(h, p.name.data(), p.name.size());
    h = fnv1a_mat(h, *p.value);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in_dim, int out_dim, Rng& rng)
    : w(kaiming_uniform(out_dim, in_dim, in_dim, rng)),
      b(Mat::Zero(1, out_dim)),
      w_grad(Mat::Zero(out_dim, in_dim)),
      b_grad(Mat::Zero(1, out_dim)) {}

Mat Linear::forward(const Mat& x) {
  x_cache_ = x;
  Mat y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

Mat Linear::backward(const Mat& d_out) {
  w_grad += d_out.transpose() * x_cache_;
  b_grad.row(0) += d_out.colwise().sum();
  return d_out * w;
}

void Linear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "w", &w, &w_grad});
  out.push_back({prefix + "b", &b, &b_grad});
}

// ---------------------------------------------------------------------------
// BatchNorm1d

BatchNorm1d::BatchNorm1d(int dim)
    : gamma(Mat::Ones(1, dim)),
      beta(Mat::Zero(1, dim)),
      gamma_grad(Mat::Zero(1, dim)),
      beta_grad(Mat::Zero(1, dim)),
      running_mean(Mat::Zero(1, dim)),
      running_var(Mat::Ones(1, dim)) {}

Mat BatchNorm1d::forward(const Mat& x, bool train) {
  const Eigen::Index bsz = x.rows(), d = x.cols();
  if (d != gamma.cols()) throw std::invalid_argument("batch norm: feature dim mismatch");
  if (bsz == 0) throw std::invalid_argument("batch norm: empty batch");
  train_cached_ = train;
  Mat y(bsz, d);
  if (train) {
    inv_std_.resize(1, d);
    centered_.resize(bsz, d);
    xhat_.resize(bsz, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mu = x.col(j).mean();
      centered_.col(j) = x.col(j).array() - mu;
      const double var = centered_.col(j).squaredNorm() / static_cast<double>(bsz);
      inv_std_(0, j) = 1.0 / std::sqrt(var + eps);
      xhat_.col(j) = centered_.col(j) * inv_std_(0, j);
      y.col(j) = xhat_.col(j) * gamma(0, j) + Mat::Constant(bsz, 1, beta(0, j));
      // Unbiased variance in the running buffer, as is conventional.
      const double unbiased =
          bsz > 1 ? var * static_cast<double>(bsz) / static_cast<double>(bsz - 1) : var;
      running_mean(0, j) = (1.0 - momentum) * running_mean(0, j) + momentum * mu;
      running_var(0, j) = (1.0 - momentum) * running_var(0, j) + momentum * unbiased;
    }
  } else {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double scale = gamma(0, j) / std::sqrt(running_var(0, j) + eps);
      y.col(j) = (x.col(j).array() - running_mean(0, j)) * scale + beta(0, j);
    }
  }
  return y;
}

Mat BatchNorm1d::backward(const Mat& d_out) {
  if (!train_cached_) throw std::logic_error("batch norm: backward needs a train-mode forward");
  const Eigen::Index bsz = d_out.rows(), d = d_out.cols();
  const double n = static_cast<double>(bsz);
  Mat d_x(bsz, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    gamma_grad(0, j) += d_out.col(j).dot(xhat_.col(j));
    beta_grad(0, j) += d_out.col(j).sum();
    const Vec d_xhat = d_out.col(j) * gamma(0, j);
    const double istd = inv_std_(0, j);
    const double d_var = d_xhat.dot(centered_.col(j)) * (-0.5) * istd * istd * istd;
    const double d_mu = -istd * d_xhat.sum();
    d_x.col(j) =
        d_xhat * istd + centered_.col(j) * (2.0 * d_var / n) + Vec::Constant(bsz, d_mu / n);
  }
  return d_x;
}

void BatchNorm1d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "gamma", &gamma, &gamma_grad});
  out.push_back({prefix + "beta", &beta, &beta_grad});
}

void BatchNorm1d::save_buffers(TensorArchive& archive, const std::string& prefix) const {
  archive.put(prefix + "running_mean", running_mean);
  archive.put(prefix + "running_var", running_var);
}

void BatchNorm1d::load_buffers(const TensorArchive& archive, const std::string& prefix) {
  Mat mean = archive.get_mat(prefix + "running_mean");
  Mat var = archive.get_mat(prefix + "running_var");
  if (mean.cols() != running_mean.cols() || var.cols() != running_var.cols()) {
    throw std::invalid_argument("batch norm: checkpoint buffer dim mismatch");
  }
  running_mean = mean;
  running_var = var;
}

// ---------------------------------------------------------------------------
// WeightNormLinear

WeightNormLinear::WeightNormLinear(int in_dim, int out_dim, Rng& rng)
    : v(out_dim, in_dim),
      g(Mat::Zero(1, out_dim)),
      v_grad(Mat::Zero(out_dim, in_dim)),
      g_grad(Mat::Zero(1, out_dim)) {
  for (int i = 0; i < out_dim; ++i) {
    for (int j = 0; j < in_dim; ++j) v(i, j) = 0.02 * rng.normal();
    g(0, i) = std::max(v.row(i).norm(), kNormGuard);
  }
}

Mat WeightNormLinear::forward(const Mat& x) {
  x_cache_ = x;
  Mat y(x.rows(), v.rows());
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    const double n = std::max(v.row(j).norm(), kNormGuard);
    y.col(j) = (x * v.row(j).transpose()) * (g(0, j) / n);
  }
  return y;
}

Mat WeightNormLinear::backward(const Mat& d_out) {
  Mat d_x = Mat::Zero(x_cache_.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.rows(); ++j) {
    const double n = std::max(v.row(j).norm(), kNormGuard);
    const Vec vhat = v.row(j).transpose() / n;
    const Vec u = x_cache_.transpose() * d_out.col(j);  // d(sum y.col(j))/d w_j
    g_grad(0, j) += vhat.dot(u);
    const Vec d_vhat = g(0, j) * u;
    v_grad.row(j) += ((d_vhat - vhat * vhat.dot(d_vhat)) / n).transpose();
    d_x += d_out.col(j) * (g(0, j) * vhat).transpose();
  }
  return d_x;
}

void WeightNormLinear::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "v", &v, &v_grad});
  out.push_back({prefix + "g", &g, &g_grad});
}

// ---------------------------------------------------------------------------
// Conv3x3

Conv3x3::Conv3x3(int in_channels, int out_channels, int height, int width, Rng& rng)
    : w(kaiming_uniform(out_channels, in_channels * 9, in_channels * 9, rng)),
      b(Mat::Zero(1, out_channels)),
      w_grad(Mat::Zero(out_channels, in_channels * 9)),
      b_grad(Mat::Zero(1, out_channels)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      height_(height),
      width_(width) {}

Mat Conv3x3::forward(const Mat& x) {
  const Eigen::Index bsz = x.rows();
  if (x.cols() != static_cast<Eigen::Index>(in_channels_) * height_ * width_) {
    throw std::invalid_argument("conv: flattened input size mismatch");
  }
  x_cache_ = x;
  const int hw = height_ * width_;
  Mat y(bsz, static_cast<Eigen::Index>(out_channels_) * hw);
  for (Eigen::Index n = 0; n < bsz; ++n) {
    for (int o = 0; o < out_channels_; ++o) {
      for (int i = 0; i < height_; ++i) {
        for (int j = 0; j < width_; ++j) {
          double acc = b(0, o);
          for (int c = 0; c < in_channels_; ++c) {
            for (int di = -1; di <= 1; ++di) {
              const int ii = i + di;
              if (ii < 0 || ii >= height_) continue;
              for (int dj = -1; dj <= 1; ++dj) {
                const int jj = j + dj;
                if (jj < 0 || jj >= width_) continue;
                acc += x(n, c * hw + ii * width_ + jj) *
                       w(o, c * 9 + (di + 1) * 3 + (dj + 1));
              }
            }
          }
          y(n, o * hw + i * width_ + j) = acc;
        }
      }
    }
  }
  return y;
}

Mat Conv3x3::backward(const Mat& d_out) {
  const Eigen::Index bsz = d_out.rows();
  const int hw = height_ * width_;
  Mat d_x = Mat::Zero(bsz, static_cast<Eigen::Index>(in_channels_) * hw);
  for (Eigen::Index n = 0; n < bsz; ++n) {
    for (int o = 0; o < out_channels_; ++o) {
      for (int i = 0; i < height_; ++i) {
        for (int j = 0; j < width_; ++j) {
          const double d = d_out(n, o * hw + i * width_ + j);
          b_grad(0, o) += d;
          for (int c = 0; c < in_channels_; ++c) {
            for (int di = -1; di <= 1; ++di) {
              const int ii = i + di;
              if (ii < 0 || ii >= height_) continue;
              for (int dj = -1; dj <= 1; ++dj) {
                const int jj = j + dj;
                if (jj < 0 || jj >= width_) continue;
                const int wi = c * 9 + (di + 1) * 3 + (dj + 1);
                w_grad(o, wi) += d * x_cache_(n, c * hw + ii * width_ + jj);
                d_x(n, c * hw + ii * width_ + jj) += d * w(o, wi);
              }
            }
          }
        }
      }
    }
  }
  return d_x;
}

void Conv3x3::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + "w", &w, &w_grad});
  out.push_back({prefix + "b", &b, &b_grad});
}

// ---------------------------------------------------------------------------
// Backbones

MlpBackbone::MlpBackbone(int in_dim, int hidden, Rng& rng)
    : fc1_(in_dim, hidden, rng), fc2_(hidden, hidden, rng) {}

Mat MlpBackbone::forward(const Mat& x, bool /*train*/) {
  Mat a1 = fc1_.forward(x);
  mask1_ = (a1.array() > 0.0).cast<double>();
  Mat a2 = fc2_.forward((a1.array() * mask1_.array()).matrix());
  mask2_ = (a2.array() > 0.0).cast<double>();
  return (a2.array() * mask2_.array()).matrix();
}

Mat MlpBackbone::backward(const Mat& d_out) {
  Mat d_a2 = (d_out.array() * mask2_.array()).matrix();
  Mat d_h1 = fc2_.backward(d_a2);
  Mat d_a1 = (d_h1.array() * mask1_.array()).matrix();
  return fc1_.backward(d_a1);
}

int MlpBackbone::out_dim() const { return static_cast<int>(fc2_.w.rows()); }

void MlpBackbone::collect(std::vector<ParamRef>& out) {
  fc1_.collect("backbone.fc1.", out);
  fc2_.collect("backbone.fc2.", out);
}

TinyConvBackbone::TinyConvBackbone(int channels, int height, int width, int filters, Rng& rng)
    : conv_(channels, filters, height, width, rng),
      filters_(filters),
      height_(height),
      width_(width) {
  if (height % 2 != 0 || width % 2 != 0) {
    throw std::invalid_argument("conv backbone: height/width must be even for 2x2 pooling");
  }
}

Mat TinyConvBackbone::forward(const Mat& x, bool /*train*/) {
  Mat a = conv_.forward(x);
  mask_ = (a.array() > 0.0).cast<double>();
  Mat h = (a.array() * mask_.array()).matrix();
  const int oh = height_ / 2, ow = width_ / 2;
  Mat pooled(x.rows(), static_cast<Eigen::Index>(filters_) * oh * ow);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (int f = 0; f < filters_; ++f) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              acc += h(n, f * height_ * width_ + (2 * i + di) * width_ + (2 * j + dj));
            }
          }
          pooled(n, f * oh * ow + i * ow + j) = acc / 4.0;
        }
      }
    }
  }
  return pooled;
}

Mat TinyConvBackbone::backward(const Mat& d_out) {
  const int oh = height_ / 2, ow = width_ / 2;
  Mat d_h = Mat::Zero(d_out.rows(), static_cast<Eigen::Index>(filters_) * height_ * width_);
  for (Eigen::Index n = 0; n < d_out.rows(); ++n) {
    for (int f = 0; f < filters_; ++f) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const double d = d_out(n, f * oh * ow + i * ow + j) / 4.0;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              d_h(n, f * height_ * width_ + (2 * i + di) * width_ + (2 * j + dj)) = d;
            }
          }
        }
      }
    }
  }
  return conv_.backward((d_h.array() * mask_.array()).matrix());
}

int TinyConvBackbone::out_dim() const { return filters_ * (height_ / 2) * (width_ / 2); }

void TinyConvBackbone::collect(std::vector<ParamRef>& out) {
  conv_.collect("backbone.conv.", out);
}

// ---------------------------------------------------------------------------
// TargetModel

TargetModel::TargetModel(std::unique_ptr<Backbone> backbone, int bottleneck_dim, int num_classes,
                         Rng& rng)
    : backbone_(std::move(backbone)),
      bottleneck_(backbone_->out_dim(), bottleneck_dim, rng),
      bn_(bottleneck_dim),
      head_(bottleneck_dim, num_classes, rng),
      bottleneck_dim_(bottleneck_dim),
      num_classes_(num_classes) {}

Mat TargetModel::forward(const Mat& x, bool train) {
  Mat feats = backbone_->forward(x, train);
  Mat z = bottleneck_.forward(feats);
  Mat zn = bn_.forward(z, train);
  return head_.forward(zn);
}

void TargetModel::backward(const Mat& d_logits) {
  Mat d_zn = head_.backward(d_logits);
  Mat d_z = bn_.backward(d_zn);
  Mat d_f = bottleneck_.backward(d_z);
  backbone_->backward(d_f);
}

Mat TargetModel::predict_eval(const Mat& x) { return softmax_rows(forward(x, false)); }

Mat TargetModel::features_eval(const Mat& x) {
  Mat feats = backbone_->forward(x, false);
  Mat z = bottleneck_.forward(feats);
  return bn_.forward(z, false);
}

std::vector<ParamRef> TargetModel::params() {
  std::vector<ParamRef> out;
  backbone_->collect(out);
  bottleneck_.collect("bottleneck.", out);
  bn_.collect("bn.", out);
  head_.collect("head.", out);
  return out;
}

void TargetModel::zero_grad() {
  for (ParamRef& p : params()) p.grad->setZero();
}

std::uint64_t TargetModel::weights_hash() {
  std::uint64_t h = hash_params(params());
  h = fnv1a_mat(h, bn_.running_mean);
  h = fnv1a_mat(h, bn_.running_var);
  return h;
}

void TargetModel::save(TensorArchive& archive, const std::string& prefix) {
  for (ParamRef& p : params()) archive.put(prefix + p.name, *p.value);
  bn_.save_buffers(archive, prefix + "bn.");
}

void TargetModel::load(const TensorArchive& archive, const std::string& prefix) {
  for (ParamRef& p : params()) {
    Mat stored = archive.get_mat(prefix + p.name);
    if (stored.rows() != p.value->rows() || stored.cols() != p.value->cols()) {
      throw std::invalid_argument("checkpoint: shape mismatch for " + p.name);
    }
    *p.value = stored;
  }
  bn_.load_buffers(archive, prefix + "bn.");
}

TargetModel make_mlp_model(int in_dim, int hidden, int bottleneck_dim, int num_classes,
                           Rng& rng) {
  return TargetModel(std::make_unique<MlpBackbone>(in_dim, hidden, rng), bottleneck_dim,
                     num_classes, rng);
}

void save_mlp_model_file(TargetModel& model, int in_dim, int hidden, const std::string& path) {
  TensorArchive archive;
  archive.put_bytes("arch.kind", "mlp");
  archive.put_i64("arch.dims", {in_dim, hidden, model.bottleneck_dim(), model.num_classes()});
  model.save(archive, "model.");
  archive.write(path);
}

TargetModel load_mlp_model_file(const std::string& path) {
  const TensorArchive archive = TensorArchive::read_file(path);
  if (!archive.has("arch.kind") || archive.get_bytes("arch.kind") != "mlp") {
    throw std::invalid_argument("not an mlp classifier file: " + path);
  }
  const std::vector<std::int64_t> dims = archive.get_i64("arch.dims");
  if (dims.size() != 4) throw std::invalid_argument("malformed arch.dims in " + path);
  Rng rng(0);
  TargetModel model = make_mlp_model(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                                     static_cast<int>(dims[2]), static_cast<int>(dims[3]), rng);
  model.load(archive, "model.");
  return model;
}

// ---------------------------------------------------------------------------
// PromptContext

PromptContext PromptContext::shared(int tokens, int embed_dim, std::vector<std::string> names) {
  PromptContext ctx;
  ctx.tokens = tokens;
  ctx.per_class = false;
  ctx.class_names = std::move(names);
  ctx.context = Mat::Zero(tokens, embed_dim);
  ctx.context_grad = Mat::Zero(tokens, embed_dim);
  return ctx;
}

PromptContext PromptContext::split_by_class(int tokens, int embed_dim,
                                            std::vector<std::string> names) {
  PromptContext ctx;
  ctx.tokens = tokens;
  ctx.per_class = true;
  const auto c = static_cast<Eigen::Index>(names.size());
  ctx.class_names = std::move(names);
  ctx.context = Mat::Zero(c * tokens, embed_dim);
  ctx.context_grad = Mat::Zero(c * tokens, embed_dim);
  return ctx;
}

Vec PromptContext::mean_for_class(int c) const {
  if (!per_class) return context.colwise().mean().transpose();
  const Eigen::Index start = static_cast<Eigen::Index>(c) * tokens;
  if (c < 0 || start + tokens > context.rows()) {
    throw std::out_of_range("prompt context: class index out of range");
  }
  return context.middleRows(start, tokens).colwise().mean().transpose();
}

std::vector<ParamRef> PromptContext::params() {
  return {{"prompt.context", &context, &context_grad}};
}

void PromptContext::zero_grad() { context_grad.setZero(); }

// ---------------------------------------------------------------------------
// MockTeacher

MockTeacher::MockTeacher(Mat projection, Mat class_embeddings, double temperature)
    : projection_(std::move(projection)),
      class_embeddings_(std::move(class_embeddings)),
      temperature_(temperature) {
  if (projection_.rows() != class_embeddings_.cols()) {
    throw std::invalid_argument("mock teacher: projection/embedding dim mismatch");
  }
  if (temperature_ <= 0.0) throw std::invalid_argument("mock teacher: temperature must be > 0");
}

MockTeacher MockTeacher::seeded(int in_dim, int embed_dim, int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  Mat projection(embed_dim, in_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < embed_dim; ++i) {
    for (int j = 0; j < in_dim; ++j) projection(i, j) = scale * rng.normal();
  }
  Mat embeds(num_classes, embed_dim);
  for (int c = 0; c < num_classes; ++c) {
    for (int j = 0; j < embed_dim; ++j) embeds(c, j) = rng.normal();
    embeds.row(c) /= std::max(embeds.row(c).norm(), kNormGuard);
  }
  return MockTeacher(std::move(projection), std::move(embeds));
}

void MockTeacher::set_oracle_leak(std::vector<int> labels, double omega) {
  if (omega < 0.0 || omega > 1.0) throw std::invalid_argument("oracle leak: omega out of [0,1]");
  for (int y : labels) {
    if (y < 0 || y >= num_classes()) throw std::invalid_argument("oracle leak: bad label");
  }
  leak_labels_ = std::move(labels);
  leak_omega_ = omega;
}

void MockTeacher::clear_oracle_leak() {
  leak_labels_.clear();
  leak_omega_ = 0.0;
}

Mat MockTeacher::embed(const Mat& batch) const {
  if (batch.cols() != projection_.cols()) {
    throw std::invalid_argument("mock teacher: input dim mismatch");
  }
  Mat e = batch * projection_.transpose();
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    e.row(i) /= std::max(e.row(i).norm(), kNormGuard);
  }
  return e;
}

Mat MockTeacher::score(const Mat& batch, const std::vector<int>& /*indices*/,
                       const PromptContext& ctx) const {
  check_context(ctx, embed_dim(), num_classes());
  return cosine_scores(embed(batch), class_embeddings_, ctx, 1.0 / temperature_).scores;
}

Mat MockTeacher::predict(const Mat& batch, const std::vector<int>& indices,
                         const PromptContext& ctx) const {
  Mat probs = softmax_rows(score(batch, indices, ctx));
  if (leak_omega_ > 0.0) {
    if (static_cast<Eigen::Index>(indices.size()) != batch.rows()) {
      throw std::invalid_argument("mock teacher: leak needs one dataset index per row");
    }
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      const int label = leak_labels_.at(static_cast<std::size_t>(indices[i]));
      probs.row(i) *= 1.0 - leak_omega_;
      probs(i, label) += leak_omega_;
    }
  }
  return probs;
}

Mat MockTeacher::context_grad(const Mat& batch, const std::vector<int>& /*indices*/,
                              const PromptContext& ctx, const Mat& d_probs) const {
  check_context(ctx, embed_dim(), num_classes());
  const Mat ehat = embed(batch);
  const double factor = 1.0 / temperature_;
  const CosineScores cs = cosine_scores(ehat, class_embeddings_, ctx, factor);
  const Mat pure = softmax_rows(cs.scores);
  const Mat d_eff = leak_omega_ > 0.0 ? Mat((1.0 - leak_omega_) * d_probs) : d_probs;
  const Mat d_scores = softmax_backward_rows(pure, d_eff);
  return cosine_context_grad(cs, ehat, ctx, factor, d_scores);
}

std::uint64_t MockTeacher::weights_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  h = fnv1a_mat(h, projection_);
  h = fnv1a_mat(h, class_embeddings_);
  h = fnv1a(h, &temperature_, sizeof(temperature_));
  return h;
}

std::string MockTeacher::describe() const {
  std::ostringstream os;
  os << "mock-teacher(embed=" << embed_dim() << ", classes=" << num_classes()
     << ", temperature=" << temperature_ << ", leak=" << leak_omega_ << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// ClipAdapterTeacher

ClipAdapterTeacher::Status ClipAdapterTeacher::probe(const std::string& path) {
  try {
    load(path);
    return {true, "ok"};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

ClipAdapterTeacher ClipAdapterTeacher::load(const std::string& path) {
  const TensorArchive archive = TensorArchive::read_file(path);
  for (const char* key : {"image_features", "class_embeddings", "logit_scale"}) {
    if (!archive.has(key)) {
      throw std::runtime_error("adapter archive: missing required entry '" + std::string(key) +
                               "'");
    }
  }
  ClipAdapterTeacher t;
  t.image_features_ = archive.get_f32("image_features").cast<double>();
  t.class_embeddings_ = archive.get_f32("class_embeddings").cast<double>();
  t.logit_scale_ = archive.get_scalar("logit_scale");
  if (t.image_features_.cols() != t.class_embeddings_.cols()) {
    throw std::runtime_error("adapter archive: feature/embedding dim mismatch");
  }
  if (t.class_embeddings_.rows() < 2) {
    throw std::runtime_error("adapter archive: need at least two classes");
  }
  if (!std::isfinite(t.logit_scale_) || t.logit_scale_ <= 0.0) {
    throw std::runtime_error("adapter archive: logit scale must be finite and positive");
  }
  for (Eigen::Index i = 0; i < t.image_features_.rows(); ++i) {
    t.image_features_.row(i) /= std::max(t.image_features_.row(i).norm(), kNormGuard);
  }
  if (archive.has("class_names")) {
    std::istringstream is(archive.get_bytes("class_names"));
    std::string line;
    while (std::getline(is, line)) t.class_names_.push_back(line);
    if (static_cast<Eigen::Index>(t.class_names_.size()) != t.class_embeddings_.rows()) {
      throw std::runtime_error("adapter archive: class name count mismatch");
    }
  }
  return t;
}

Mat ClipAdapterTeacher::score(const Mat& batch, const std::vector<int>& indices,
                              const PromptContext& ctx) const {
  check_context(ctx, embed_dim(), num_classes());
  if (batch.rows() > 0 && batch.rows() != static_cast<Eigen::Index>(indices.size())) {
    throw std::invalid_argument("adapter teacher: one dataset index per batch row");
  }
  Mat ehat(static_cast<Eigen::Index>(indices.size()), embed_dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= num_samples()) {
      throw std::out_of_range("adapter teacher: dataset index out of range");
    }
    ehat.row(static_cast<Eigen::Index>(i)) = image_features_.row(indices[i]);
  }
  return cosine_scores(ehat, class_embeddings_, ctx, logit_scale_).scores;
}

Mat ClipAdapterTeacher::predict(const Mat& batch, const std::vector<int>& indices,
                                const PromptContext& ctx) const {
  return softmax_rows(score(batch, indices, ctx));
}

Mat ClipAdapterTeacher::context_grad(const Mat& batch, const std::vector<int>& indices,
                                     const PromptContext& ctx, const Mat& d_probs) const {
  (void)batch;  // features come from the archive, keyed by index
  check_context(ctx, embed_dim(), num_classes());
  Mat ehat(static_cast<Eigen::Index>(indices.size()), embed_dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    ehat.row(static_cast<Eigen::Index>(i)) = image_features_.row(indices.at(i));
  }
  const CosineScores cs = cosine_scores(ehat, class_embeddings_, ctx, logit_scale_);
  const Mat pure = softmax_rows(cs.scores);
  const Mat d_scores = softmax_backward_rows(pure, d_probs);
  return cosine_context_grad(cs, ehat, ctx, logit_scale_, d_scores);
}

std::uint64_t ClipAdapterTeacher::weights_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  h = fnv1a_mat(h, image_features_);
  h = fnv1a_mat(h, class_embeddings_);
  h = fnv1a(h, &logit_scale_, sizeof(logit_scale_));
  return h;
}

std::string ClipAdapterTeacher::describe() const {
  std::ostringstream os;
  os << "clip-adapter(samples=" << num_samples() << ", embed=" << embed_dim()
     << ", classes=" << num_classes() << ", scale=" << logit_scale_ << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// SgdOptimizer

SgdOptimizer::SgdOptimizer(std::vector<ParamGroup> groups, double momentum)
    : groups_(std::move(groups)), momentum_(momentum) {
  velocity_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (const ParamRef& p : groups_[g].params) {
      velocity_[g].push_back(Mat::Zero(p.value->rows(), p.value->cols()));
    }
  }
}

void SgdOptimizer::step() {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t k = 0; k < groups_[g].params.size(); ++k) {
      const ParamRef& p = groups_[g].params[k];
      velocity_[g][k] = momentum_ * velocity_[g][k] + *p.grad;
      *p.value -= groups_[g].lr * velocity_[g][k];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& group : groups_) {
    for (ParamRef& p : group.params) p.grad->setZero();
  }
}

double SgdOptimizer::max_abs_grad() const {
  double worst = 0.0;
  for (const auto& group : groups_) {
    for (const ParamRef& p : group.params) {
      if (p.grad->size() > 0) worst = std::max(worst, p.grad->cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

void SgdOptimizer::save(TensorArchive& archive, const std::string& prefix) const {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t k = 0; k < groups_[g].params.size(); ++k) {
      archive.put(prefix + "v." + groups_[g].params[k].name, velocity_[g][k]);
    }
  }
}

void SgdOptimizer::load(const TensorArchive& archive, const std::string& prefix) {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (std::size_t k = 0; k < groups_[g].params.size(); ++k) {
      Mat stored = archive.get_mat(prefix + "v." + groups_[g].params[k].name);
      if (stored.rows() != velocity_[g][k].rows() || stored.cols() != velocity_[g][k].cols()) {
        throw std::invalid_argument("optimizer checkpoint: shape mismatch for " +
                                    groups_[g].params[k].name);
      }
      velocity_[g][k] = stored;
    }
  }
}

// ---------------------------------------------------------------------------
// Source pretraining

double smoothed_ce_loss(const Mat& logits, const std::vector<int>& labels, double smoothing,
                        Mat* d_logits) {
  const Eigen::Index bsz = logits.rows(), c = logits.cols();
  if (bsz == 0) throw std::invalid_argument("cross entropy: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != bsz) {
    throw std::invalid_argument("cross entropy: one label per row");
  }
  const Mat probs = softmax_rows(logits);
  const double off = smoothing / static_cast<double>(c);
  const double on = 1.0 - smoothing + off;
  double loss = 0.0;
  if (d_logits != nullptr) *d_logits = probs / static_cast<double>(bsz);
  for (Eigen::Index i = 0; i < bsz; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw std::invalid_argument("cross entropy: label out of range");
    for (Eigen::Index j = 0; j < c; ++j) {
      const double t = (j == y) ? on : off;
      loss -= t * std::log(probs(i, j));
      if (d_logits != nullptr) (*d_logits)(i, j) -= t / static_cast<double>(bsz);
    }
  }
  return loss / static_cast<double>(bsz);
}

PretrainReport pretrain_source(TargetModel& model, const Mat& x, const std::vector<int>& labels,
                               const PretrainOptions& opts, Rng& rng) {
  const Eigen::Index n = x.rows();
  if (n == 0) throw std::invalid_argument("pretrain: empty dataset");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("pretrain: one label per sample");
  }

  SgdOptimizer opt({ParamGroup{model.params(), opts.lr}}, opts.momentum);
  PretrainReport report;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const auto batches = make_batches(static_cast<int>(n), opts.batch_size, rng);
    for (const auto& batch : batches) {
      Mat xb(static_cast<Eigen::Index>(batch.size()), x.cols());
      std::vector<int> yb(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        xb.row(static_cast<Eigen::Index>(k)) = x.row(batch[k]);
        yb[k] = labels[static_cast<std::size_t>(batch[k])];
      }
      opt.zero_grad();
      Mat logits = model.forward(xb, true);
      Mat d_logits;
      report.final_loss = smoothed_ce_loss(logits, yb, opts.label_smoothing, &d_logits);
      model.backward(d_logits);
      opt.step();
      ++report.steps;
    }
  }

  int correct = 0;
  for (Eigen::Index start = 0; start < n; start += 256) {
    const Eigen::Index len = std::min<Eigen::Index>(256, n - start);
    Mat probs = model.predict_eval(x.middleRows(start, len));
    for (Eigen::Index i = 0; i < len; ++i) {
      Eigen::Index argmax = 0;
      probs.row(i).maxCoeff(&argmax);
      if (static_cast<int>(argmax) == labels[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  report.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return report;
}

}  // namespace sfda
