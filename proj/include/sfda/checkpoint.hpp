#pragma once

#include "sfda/types.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace sfda {

// Named-tensor container behind every on-disk state file (model weights,
// optimizer velocities, bank stores, run bookkeeping). Binary layout:
// 8-byte magic, u32 format version, u32 entry count, then per entry
// name / dtype / rank / dims / raw little-endian payload.
class TensorArchive {
 public:
  enum class Type : std::uint8_t { kF64 = 0, kF32 = 1, kI64 = 2, kBytes = 3 };

  void put(const std::string& name, const Mat& value);
  void put(const std::string& name, const Vec& value);
  void put_scalar(const std::string& name, double value);
  void put_f32(const std::string& name, const Eigen::MatrixXf& value);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& value);
  void put_bytes(const std::string& name, const std::string& value);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;  // insertion order

  Mat get_mat(const std::string& name) const;
  Vec get_vec(const std::string& name) const;
  double get_scalar(const std::string& name) const;
  Eigen::MatrixXf get_f32(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  std::string get_bytes(const std::string& name) const;

  void write(const std::string& path) const;
  static TensorArchive read_file(const std::string& path);

 private:
  struct Entry {
    std::string name;
    Type type;
    std::uint8_t rank;
    std::uint64_t d0, d1;
    std::vector<unsigned char> data;
  };

  Entry& upsert(const std::string& name);
  const Entry& find(const std::string& name, Type type, std::uint8_t rank) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sfda
