#pragma once
// Data ingestion: benchmark-convention image list files, a procedural icon
// set for the conv path, and a parameterized synthetic domain-shift generator.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sfda/types.hpp"

namespace sfda {

// Preprocessing constants carried alongside a list dataset. The loader does
// not decode pixels; the values document the pipeline a consumer must apply.
struct TransformSpec {
  int resize = 256;
  int crop = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

struct ImageListEntry {
  std::string path;  // relative to root
  int label = 0;
};

// One `relative/path<space>label` line per sample. Sample index == line order
// and is the stable identity consumed by the reference state and the bank.
struct ImageListDataset {
  std::string root;
  std::vector<ImageListEntry> entries;
  TransformSpec transform;
  int num_classes = 0;           // 1 + max label
  std::vector<int> missing;      // indices whose resolved path did not exist

  int size() const { return static_cast<int>(entries.size()); }
};

// Parses `list_file`. Malformed lines (missing label, non-integer or negative
// label) raise std::runtime_error naming the 1-based line number. A non-empty
// root must be an existing directory; entries that do not resolve under it
// are reported in `missing` rather than rejected.
ImageListDataset load_image_list(const std::string& list_file, const std::string& root);

// In-memory feature dataset used by the engine and the synthetic benchmark.
// Labels are ground truth, consumed only by evaluation and the oracle leak.
struct FeatureDataset {
  Mat x;  // n x d
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(x.rows()); }
};

// Label-preserving affine shift applied to fresh target-domain draws:
// x_target = scale * R(rotation) * x + translation, rotation in dims (0,1).
struct SyntheticShiftSpec {
  int num_classes = 4;
  int per_class = 500;  // per domain
  int dim = 2;          // 2..16
  double cluster_radius = 2.0;  // class means equally spaced on this circle
  double cluster_sigma = 0.5;   // isotropic; must be positive
  double rotation_deg = 35.0;
  Vec translation;  // empty -> zero
  double scale = 1.0;
  std::uint64_t seed = 7;
};

struct SyntheticPair {
  FeatureDataset source;
  FeatureDataset target;
};

SyntheticPair generate_synthetic_pair(const SyntheticShiftSpec& spec);

// Procedural 12x12 single-channel icons (stripes / checkers / disc), flattened
// row-major to 144 features. The target domain keeps the patterns but shifts
// brightness and contrast. Same index<->label layout as the synthetic pair.
SyntheticPair generate_icon_pair(int per_class, std::uint64_t seed);

// Two-file CSV export: features one row per sample (%.17g), labels one
// integer per line. import reverses it exactly.
void export_feature_csv(const FeatureDataset& ds, const std::string& features_path,
                        const std::string& labels_path);
FeatureDataset import_feature_csv(const std::string& features_path,
                                  const std::string& labels_path);

}  // namespace sfda
