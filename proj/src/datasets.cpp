#include "sfda/datasets.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sfda/rng.hpp"

namespace sfda {

namespace {

[[noreturn]] void line_error(const std::string& file, int line_no, const std::string& what) {
  throw std::runtime_error(file + ": line " + std::to_string(line_no) + ": " + what);
}

bool is_blank(const std::string& s) {
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

// Class means equally spaced on a circle in dims (0,1); extra dims are zero.
Mat class_means(int num_classes, int dim, double radius) {
  Mat means = Mat::Zero(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * M_PI * c / num_classes;
    means(c, 0) = radius * std::cos(angle);
    means(c, 1) = radius * std::sin(angle);
  }
  return means;
}

FeatureDataset draw_clusters(const Mat& means, int per_class, double sigma, Rng& rng) {
  const int num_classes = static_cast<int>(means.rows());
  const int dim = static_cast<int>(means.cols());
  const int n = num_classes * per_class;
  FeatureDataset ds;
  ds.x.resize(n, dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.num_classes = num_classes;
  int row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int j = 0; j < dim; ++j) ds.x(row, j) = means(c, j) + sigma * rng.normal();
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  // Deterministic interleave so consecutive batches are class-mixed.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  Mat xs(n, dim);
  std::vector<int> ls(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    xs.row(i) = ds.x.row(order[static_cast<std::size_t>(i)]);
    ls[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }
  ds.x = std::move(xs);
  ds.labels = std::move(ls);
  return ds;
}

// 12x12 icon patterns; label picks the pattern family.
void render_icon(int label, double* px, Rng& rng) {
  constexpr int kSide = 12;
  for (int r = 0; r < kSide; ++r) {
    for (int c = 0; c < kSide; ++c) {
      double v = 0.0;
      switch (label) {
        case 0:  // horizontal stripes
          v = (r / 2) % 2 == 0 ? 1.0 : 0.0;
          break;
        case 1:  // vertical stripes
          v = (c / 2) % 2 == 0 ? 1.0 : 0.0;
          break;
        case 2: {  // centered disc
          const double dr = r - 5.5, dc = c - 5.5;
          v = dr * dr + dc * dc <= 16.0 ? 1.0 : 0.0;
          break;
        }
        default:  // checkerboard
          v = ((r / 2) + (c / 2)) % 2 == 0 ? 1.0 : 0.0;
          break;
      }
      px[r * kSide + c] = v + 0.1 * rng.normal();
    }
  }
}

}  // namespace

ImageListDataset load_image_list(const std::string& list_file, const std::string& root) {
  std::ifstream in(list_file);
  if (!in) throw std::runtime_error("cannot open list file: " + list_file);
  if (!root.empty() && !std::filesystem::is_directory(root)) {
    throw std::runtime_error("root is not a readable directory: " + root);
  }

  ImageListDataset ds;
  ds.root = root;
  std::string line;
  int line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    const std::size_t split = line.find_last_of(' ');
    if (split == std::string::npos || split == 0) {
      line_error(list_file, line_no, "expected `relative/path<space>label`");
    }
    const std::string path = line.substr(0, split);
    const std::string label_text = line.substr(split + 1);
    std::size_t consumed = 0;
    long label = 0;
    try {
      label = std::stol(label_text, &consumed);
    } catch (const std::exception&) {
      line_error(list_file, line_no, "label is not an integer: `" + label_text + "`");
    }
    if (consumed != label_text.size()) {
      line_error(list_file, line_no, "label is not an integer: `" + label_text + "`");
    }
    if (label < 0) line_error(list_file, line_no, "label must be non-negative");
    ds.entries.push_back(ImageListEntry{path, static_cast<int>(label)});
    max_label = std::max(max_label, static_cast<int>(label));
  }
  ds.num_classes = max_label + 1;

  if (!root.empty()) {
    for (int i = 0; i < ds.size(); ++i) {
      const auto resolved = std::filesystem::path(root) / ds.entries[static_cast<std::size_t>(i)].path;
      if (!std::filesystem::exists(resolved)) ds.missing.push_back(i);
    }
  }
  return ds;
}

SyntheticPair generate_synthetic_pair(const SyntheticShiftSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (spec.per_class < 1) throw std::invalid_argument("per_class must be positive");
  if (spec.dim < 2 || spec.dim > 16) throw std::invalid_argument("dim must be in [2, 16]");
  if (!(spec.cluster_sigma > 0.0)) throw std::invalid_argument("degenerate covariance");
  if (!(spec.cluster_radius > 0.0)) throw std::invalid_argument("cluster_radius must be positive");
  if (!(spec.scale > 0.0)) throw std::invalid_argument("scale must be positive");
  if (spec.translation.size() != 0 && spec.translation.size() != spec.dim) {
    throw std::invalid_argument("translation dimension mismatch");
  }

  Rng rng(spec.seed);
  const Mat means = class_means(spec.num_classes, spec.dim, spec.cluster_radius);
  SyntheticPair pair;
  pair.source = draw_clusters(means, spec.per_class, spec.cluster_sigma, rng);
  pair.target = draw_clusters(means, spec.per_class, spec.cluster_sigma, rng);

  // Label-preserving shift operator on the fresh target draws.
  const double theta = spec.rotation_deg * M_PI / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  Mat rot = Mat::Identity(spec.dim, spec.dim);
  rot(0, 0) = ct;
  rot(0, 1) = -st;
  rot(1, 0) = st;
  rot(1, 1) = ct;
  pair.target.x = spec.scale * (pair.target.x * rot.transpose());
  if (spec.translation.size() == spec.dim) {
    pair.target.x.rowwise() += spec.translation.transpose();
  }
  return pair;
}

SyntheticPair generate_icon_pair(int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("per_class must be positive");
  constexpr int kClasses = 3;
  constexpr int kDim = 144;
  Rng rng(seed);

  auto draw = [&](bool shifted) {
    FeatureDataset ds;
    const int n = kClasses * per_class;
    ds.x.resize(n, kDim);
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.num_classes = kClasses;
    int row = 0;
    double px[kDim];
    for (int c = 0; c < kClasses; ++c) {
      for (int s = 0; s < per_class; ++s, ++row) {
        render_icon(c, px, rng);
        ds.x.row(row) = Eigen::Map<const Eigen::RowVectorXd>(px, kDim);
        ds.labels[static_cast<std::size_t>(row)] = c;
      }
    }
    if (shifted) ds.x = 0.8 * ds.x.array() + 0.35;  // contrast + brightness shift
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    Mat xs(n, kDim);
    std::vector<int> ls(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      xs.row(i) = ds.x.row(order[static_cast<std::size_t>(i)]);
      ls[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
    ds.x = std::move(xs);
    ds.labels = std::move(ls);
    return ds;
  };

  SyntheticPair pair;
  pair.source = draw(false);
  pair.target = draw(true);
  return pair;
}

void export_feature_csv(const FeatureDataset& ds, const std::string& features_path,
                        const std::string& labels_path) {
  std::ofstream fx(features_path);
  if (!fx) throw std::runtime_error("cannot write " + features_path);
  char buf[64];
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.x(i, j));
      fx << (j ? "," : "") << buf;
    }
    fx << '\n';
  }
  std::ofstream fy(labels_path);
  if (!fy) throw std::runtime_error("cannot write " + labels_path);
  for (int label : ds.labels) fy << label << '\n';
}

FeatureDataset import_feature_csv(const std::string& features_path,
                                  const std::string& labels_path) {
  std::ifstream fx(features_path);
  if (!fx) throw std::runtime_error("cannot open " + features_path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(fx, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t consumed = 0;
        row.push_back(std::stod(cell, &consumed));
        if (consumed != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        line_error(features_path, line_no, "not a number: `" + cell + "`");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      line_error(features_path, line_no, "inconsistent column count");
    }
    rows.push_back(std::move(row));
  }

  FeatureDataset ds;
  ds.x.resize(static_cast<Eigen::Index>(rows.size()),
              rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      ds.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }

  std::ifstream fy(labels_path);
  if (!fy) throw std::runtime_error("cannot open " + labels_path);
  line_no = 0;
  int max_label = -1;
  while (std::getline(fy, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      std::size_t consumed = 0;
      const int label = std::stoi(line, &consumed);
      if (consumed != line.size() || label < 0) throw std::invalid_argument(line);
      ds.labels.push_back(label);
      max_label = std::max(max_label, label);
    } catch (const std::exception&) {
      line_error(labels_path, line_no, "label is not a non-negative integer: `" + line + "`");
    }
  }
  if (static_cast<Eigen::Index>(ds.labels.size()) != ds.x.rows()) {
    throw std::runtime_error("feature/label row count mismatch");
  }
  ds.num_classes = max_label + 1;
  return ds;
}

}  // namespace sfda
