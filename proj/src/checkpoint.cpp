#include "sfda/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sfda {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'D', 'A', 'R', 'C', 'H', '\x01'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::runtime_error(std::string("archive truncated reading ") + what);
  }
  return v;
}

std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw std::runtime_error(std::string("archive truncated reading ") + what);
  }
  return v;
}

const char* type_name(TensorArchive::Type t) {
  switch (t) {
    case TensorArchive::Type::kF64: return "f64";
    case TensorArchive::Type::kF32: return "f32";
    case TensorArchive::Type::kI64: return "i64";
    case TensorArchive::Type::kBytes: return "bytes";
  }
  return "?";
}

}  // namespace

TensorArchive::Entry& TensorArchive::upsert(const std::string& name) {
  auto it = index_.find(name);
  if (it != index_.end()) return entries_[it->second];
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, Type::kF64, 0, 0, 0, {}});
  return entries_.back();
}

const TensorArchive::Entry& TensorArchive::find(const std::string& name, Type type,
                                                std::uint8_t rank) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("archive: no entry named '" + name + "'");
  const Entry& e = entries_[it->second];
  if (e.type != type || e.rank != rank) {
    throw std::invalid_argument("archive: entry '" + name + "' is " + type_name(e.type) +
                                " rank " + std::to_string(e.rank) + ", requested " +
                                type_name(type) + " rank " + std::to_string(rank));
  }
  return e;
}

void TensorArchive::put(const std::string& name, const Mat& value) {
  Entry& e = upsert(name);
  e.type = Type::kF64;
  e.rank = 2;
  e.d0 = static_cast<std::uint64_t>(value.rows());
  e.d1 = static_cast<std::uint64_t>(value.cols());
  e.data.resize(sizeof(double) * value.size());
  // Row-major on disk regardless of in-memory layout.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = value;
  std::memcpy(e.data.data(), rm.data(), e.data.size());
}

void TensorArchive::put(const std::string& name, const Vec& value) {
  Entry& e = upsert(name);
  e.type = Type::kF64;
  e.rank = 1;
  e.d0 = static_cast<std::uint64_t>(value.size());
  e.d1 = 1;
  e.data.resize(sizeof(double) * value.size());
  std::memcpy(e.data.data(), value.data(), e.data.size());
}

void TensorArchive::put_scalar(const std::string& name, double value) {
  Vec v(1);
  v[0] = value;
  put(name, v);
}

void TensorArchive::put_f32(const std::string& name, const Eigen::MatrixXf& value) {
  Entry& e = upsert(name);
  e.type = Type::kF32;
  e.rank = 2;
  e.d0 = static_cast<std::uint64_t>(value.rows());
  e.d1 = static_cast<std::uint64_t>(value.cols());
  e.data.resize(sizeof(float) * value.size());
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = value;
  std::memcpy(e.data.data(), rm.data(), e.data.size());
}

void TensorArchive::put_i64(const std::string& name, const std::vector<std::int64_t>& value) {
  Entry& e = upsert(name);
  e.type = Type::kI64;
  e.rank = 1;
  e.d0 = static_cast<std::uint64_t>(value.size());
  e.d1 = 1;
  e.data.resize(sizeof(std::int64_t) * value.size());
  std::memcpy(e.data.data(), value.data(), e.data.size());
}

void TensorArchive::put_bytes(const std::string& name, const std::string& value) {
  Entry& e = upsert(name);
  e.type = Type::kBytes;
  e.rank = 1;
  e.d0 = static_cast<std::uint64_t>(value.size());
  e.d1 = 1;
  e.data.assign(value.begin(), value.end());
}

bool TensorArchive::has(const std::string& name) const { return index_.count(name) > 0; }

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.name);
  return out;
}

Mat TensorArchive::get_mat(const std::string& name) const {
  const Entry& e = find(name, Type::kF64, 2);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Eigen::Index>(e.d0), static_cast<Eigen::Index>(e.d1));
  std::memcpy(rm.data(), e.data.data(), e.data.size());
  return rm;
}

Vec TensorArchive::get_vec(const std::string& name) const {
  const Entry& e = find(name, Type::kF64, 1);
  Vec v(static_cast<Eigen::Index>(e.d0));
  std::memcpy(v.data(), e.data.data(), e.data.size());
  return v;
}

double TensorArchive::get_scalar(const std::string& name) const {
  Vec v = get_vec(name);
  if (v.size() != 1) {
    throw std::invalid_argument("archive: entry '" + name + "' is not a scalar");
  }
  return v[0];
}

Eigen::MatrixXf TensorArchive::get_f32(const std::string& name) const {
  const Entry& e = find(name, Type::kF32, 2);
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Eigen::Index>(e.d0), static_cast<Eigen::Index>(e.d1));
  std::memcpy(rm.data(), e.data.data(), e.data.size());
  return rm;
}

std::vector<std::int64_t> TensorArchive::get_i64(const std::string& name) const {
  const Entry& e = find(name, Type::kI64, 1);
  std::vector<std::int64_t> v(static_cast<std::size_t>(e.d0));
  std::memcpy(v.data(), e.data.data(), e.data.size());
  return v;
}

std::string TensorArchive::get_bytes(const std::string& name) const {
  const Entry& e = find(name, Type::kBytes, 1);
  return std::string(e.data.begin(), e.data.end());
}

void TensorArchive::write(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("archive: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(entries_.size()));
  for (const Entry& e : entries_) {
    write_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const std::uint8_t type = static_cast<std::uint8_t>(e.type);
    os.write(reinterpret_cast<const char*>(&type), 1);
    os.write(reinterpret_cast<const char*>(&e.rank), 1);
    write_u64(os, e.d0);
    write_u64(os, e.d1);
    write_u64(os, static_cast<std::uint64_t>(e.data.size()));
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size()));
  }
  if (!os) throw std::runtime_error("archive: write to '" + path + "' failed");
}

TensorArchive TensorArchive::read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("archive: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("archive: '" + path + "' has wrong magic bytes");
  }
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion) {
    throw std::runtime_error("archive: unsupported format version " + std::to_string(version));
  }
  const std::uint32_t count = read_u32(is, "entry count");
  TensorArchive out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, "name length");
    if (name_len > (1u << 20)) throw std::runtime_error("archive: unreasonable name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("archive: truncated name");
    std::uint8_t type = 0, rank = 0;
    if (!is.read(reinterpret_cast<char*>(&type), 1) ||
        !is.read(reinterpret_cast<char*>(&rank), 1)) {
      throw std::runtime_error("archive: truncated header for '" + name + "'");
    }
    if (type > 3 || rank > 2) {
      throw std::runtime_error("archive: bad dtype/rank for '" + name + "'");
    }
    Entry e;
    e.name = name;
    e.type = static_cast<Type>(type);
    e.rank = rank;
    e.d0 = read_u64(is, "dim 0");
    e.d1 = read_u64(is, "dim 1");
    const std::uint64_t len = read_u64(is, "payload length");
    std::uint64_t elem = 1;
    switch (e.type) {
      case Type::kF64: elem = 8; break;
      case Type::kF32: elem = 4; break;
      case Type::kI64: elem = 8; break;
      case Type::kBytes: elem = 1; break;
    }
    const std::uint64_t expect = (e.rank == 2 ? e.d0 * e.d1 : e.d0) * elem;
    if (len != expect) {
      throw std::runtime_error("archive: payload size mismatch for '" + name + "'");
    }
    e.data.resize(static_cast<std::size_t>(len));
    if (len > 0 && !is.read(reinterpret_cast<char*>(e.data.data()),
                            static_cast<std::streamsize>(len))) {
      throw std::runtime_error("archive: truncated payload for '" + name + "'");
    }
    out.index_[e.name] = out.entries_.size();
    out.entries_.push_back(std::move(e));
  }
  return out;
}

}  // namespace sfda
