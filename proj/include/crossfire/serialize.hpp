#pragma once

// Versioned little-endian binary containers for models, ledgers, honeypot
// registries and baseline state. Layout of every file:
//   8-byte magic | u32 version | payload | 8-byte Blake2b digest of all prior bytes

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crossfire/baselines.hpp"
#include "crossfire/blake2b.hpp"
#include "crossfire/crossfire.hpp"
#include "crossfire/gin.hpp"
#include "crossfire/quant.hpp"

namespace crossfire {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kFileChecksumBytes = 8;

using Magic = std::array<char, 8>;
inline constexpr Magic kModelMagic{'C', 'F', 'M', 'O', 'D', 'E', 'L', '\0'};
inline constexpr Magic kLedgerMagic{'C', 'F', 'L', 'E', 'D', 'G', 'R', '\0'};
inline constexpr Magic kRegistryMagic{'C', 'F', 'H', 'O', 'N', 'E', 'Y', '\0'};
inline constexpr Magic kRadarMagic{'C', 'F', 'R', 'A', 'D', 'A', 'R', '\0'};
inline constexpr Magic kNeuropotsMagic{'C', 'F', 'N', 'P', 'O', 'T', 'S', '\0'};

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void put_magic(const Magic& m) { put_bytes({reinterpret_cast<const std::uint8_t*>(m.data()), m.size()}); }
  void put_vector(const Vector& v) {
    put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(v(i));
  }

  std::vector<std::uint8_t> seal() && {
    const auto d = Blake2b::digest(buf_, kFileChecksumBytes);
    buf_.insert(buf_.end(), d.begin(), d.end());
    return std::move(buf_);
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  /// Verifies the trailing checksum, magic and version.
  ByteReader(std::span<const std::uint8_t> data, const Magic& magic) {
    if (data.size() < magic.size() + sizeof(std::uint32_t) + kFileChecksumBytes) throw FormatError("file truncated");
    const auto body = data.first(data.size() - kFileChecksumBytes);
    const auto d = Blake2b::digest(body, kFileChecksumBytes);
    if (!std::equal(d.begin(), d.end(), data.end() - static_cast<std::ptrdiff_t>(kFileChecksumBytes))) {
      throw FormatError("file checksum mismatch");
    }
    data_ = body;
    if (std::memcmp(data_.data(), magic.data(), magic.size()) != 0) throw FormatError("bad magic");
    pos_ = magic.size();
    const auto version = get<std::uint32_t>();
    if (version != kFormatVersion) throw FormatError("unsupported format version " + std::to_string(version));
  }

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  Vector get_vector() {
    const auto n = get<std::uint32_t>();
    Vector v(n);
    for (std::uint32_t i = 0; i < n; ++i) v(i) = get<double>();
    return v;
  }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError("trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("unexpected end of data");
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline ByteWriter begin_file(const Magic& m) {
  ByteWriter w;
  w.put_magic(m);
  w.put<std::uint32_t>(kFormatVersion);
  return w;
}

// ---------------------------------------------------------------------------
// Files

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Model

inline void put_tensor(ByteWriter& w, const QuantTensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
  w.put<double>(t.scale());
  w.put<std::int8_t>(static_cast<std::int8_t>(t.qmin()));
  w.put<std::int8_t>(static_cast<std::int8_t>(t.qmax()));
  w.put_bytes(t.bytes());
}

inline QuantTensor get_tensor(ByteReader& r) {
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  const auto scale = r.get<double>();
  const auto qmin = r.get<std::int8_t>();
  const auto qmax = r.get<std::int8_t>();
  QuantTensor t;
  try {
    t = QuantTensor(rows, cols, scale, qmin, qmax);
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  const auto bytes = r.get_bytes(static_cast<std::size_t>(rows) * cols);
  std::memcpy(t.values().data(), bytes.data(), bytes.size());
  return t;
}

inline std::vector<std::uint8_t> encode_model(const GinModel& m) {
  ByteWriter w = begin_file(kModelMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.depth()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.num_layers()));
  for (double e : m.eps) w.put<double>(e);
  for (const auto& l : m.layers) {
    put_tensor(w, l.weight);
    w.put_vector(l.bias);
    w.put_vector(l.input_scale);
  }
  w.put<std::uint64_t>(m.seed);
  return std::move(w).seal();
}

inline GinModel decode_model(std::span<const std::uint8_t> data) {
  ByteReader r(data, kModelMagic);
  GinModel m;
  const auto depth = r.get<std::uint32_t>();
  const auto layers = r.get<std::uint32_t>();
  if (layers != 2 * depth + 1) throw FormatError("layer count does not match depth");
  for (std::uint32_t i = 0; i < depth; ++i) m.eps.push_back(r.get<double>());
  for (std::uint32_t i = 0; i < layers; ++i) {
    QuantLinear l;
    l.weight = get_tensor(r);
    l.bias = r.get_vector();
    l.input_scale = r.get_vector();
    m.layers.push_back(std::move(l));
  }
  m.seed = r.get<std::uint64_t>();
  r.expect_end();
  try {
    validate_shapes(m.dense());
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return m;
}

/// Human-readable summary written next to a model file.
inline nlohmann::json model_sidecar(const GinModel& m) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["depth"] = m.depth();
  j["input_dim"] = m.input_dim();
  j["tasks"] = m.num_tasks();
  j["seed"] = m.seed;
  j["eps"] = m.eps;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"scale", l.weight.scale()}});
  }
  return j;
}

inline void save_model(const std::filesystem::path& path, const GinModel& m) {
  write_file(path, encode_model(m));
  auto side = path;
  side += ".json";
  write_text(side, model_sidecar(m).dump(2) + "\n");
}

inline GinModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

// ---------------------------------------------------------------------------
// Ledger and registry

inline std::vector<std::uint8_t> encode_ledger(const HashLedger& ledger) {
  ByteWriter w = begin_file(kLedgerMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ledger.layers.size()));
  for (const auto& l : ledger.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.cols));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.digest_size));
    w.put_bytes(l.row_digests);
    w.put_bytes(l.col_digests);
    w.put_bytes(l.layer_digest);
    w.put<std::int8_t>(l.bounds.lower);
    w.put<std::int8_t>(l.bounds.upper);
  }
  return std::move(w).seal();
}

inline HashLedger decode_ledger(std::span<const std::uint8_t> data) {
  ByteReader r(data, kLedgerMagic);
  HashLedger ledger;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerLedger l;
    l.rows = r.get<std::uint32_t>();
    l.cols = r.get<std::uint32_t>();
    l.digest_size = r.get<std::uint8_t>();
    if (l.digest_size == 0 || l.digest_size > Blake2b::kMaxDigest) throw FormatError("invalid digest size");
    const auto rd = r.get_bytes(l.rows * l.digest_size);
    const auto cd = r.get_bytes(l.cols * l.digest_size);
    l.row_digests.assign(rd.begin(), rd.end());
    l.col_digests.assign(cd.begin(), cd.end());
    const auto ld = r.get_bytes(kLayerDigestBytes);
    std::copy(ld.begin(), ld.end(), l.layer_digest.begin());
    l.bounds.lower = r.get<std::int8_t>();
    l.bounds.upper = r.get<std::int8_t>();
    ledger.layers.push_back(std::move(l));
  }
  r.expect_end();
  return ledger;
}

inline std::vector<std::uint8_t> encode_registry(const HoneypotRegistry& reg) {
  ByteWriter w = begin_file(kRegistryMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(reg.layers.size()));
  for (const auto& l : reg.layers) {
    w.put<double>(l.gamma_l);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.indices.size()));
    for (std::size_t i = 0; i < l.indices.size(); ++i) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(l.indices[i]));
      w.put<double>(l.saliency(static_cast<Eigen::Index>(i)));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.sealed.size()));
    for (const auto& e : l.sealed) {
      w.put<std::uint32_t>(e.row);
      w.put<std::uint32_t>(e.col);
      w.put<std::int8_t>(e.value);
    }
  }
  return std::move(w).seal();
}

inline HoneypotRegistry decode_registry(std::span<const std::uint8_t> data) {
  ByteReader r(data, kRegistryMagic);
  HoneypotRegistry reg;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    HoneypotLayer l;
    l.gamma_l = r.get<double>();
    const auto k = r.get<std::uint32_t>();
    l.saliency.resize(k);
    for (std::uint32_t j = 0; j < k; ++j) {
      l.indices.push_back(r.get<std::uint32_t>());
      l.saliency(j) = r.get<double>();
    }
    const auto s = r.get<std::uint32_t>();
    for (std::uint32_t j = 0; j < s; ++j) {
      SealedEntry e;
      e.row = r.get<std::uint32_t>();
      e.col = r.get<std::uint32_t>();
      e.value = r.get<std::int8_t>();
      l.sealed.push_back(e);
    }
    reg.layers.push_back(std::move(l));
  }
  r.expect_end();
  return reg;
}

// ---------------------------------------------------------------------------
// Baseline state

inline std::vector<std::uint8_t> encode_radar(const RadarState& s) {
  ByteWriter w = begin_file(kRadarMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.group_size));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(s.sig_bits));
  w.put<std::uint8_t>(s.checksum == RadarChecksum::kFold ? 0 : 1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.layers.size()));
  for (const auto& l : s.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.signatures.size()));
    w.put_bytes(l.signatures);
  }
  return std::move(w).seal();
}

inline RadarState decode_radar(std::span<const std::uint8_t> data) {
  ByteReader r(data, kRadarMagic);
  RadarState s;
  s.group_size = r.get<std::uint32_t>();
  s.sig_bits = r.get<std::uint8_t>();
  const auto kind = r.get<std::uint8_t>();
  if (kind > 1 || s.group_size == 0) throw FormatError("invalid radar header");
  s.checksum = kind == 0 ? RadarChecksum::kFold : RadarChecksum::kAdditive;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto g = r.get<std::uint32_t>();
    const auto b = r.get_bytes(g);
    s.layers.push_back({{b.begin(), b.end()}});
  }
  r.expect_end();
  return s;
}

inline std::vector<std::uint8_t> encode_neuropots(const NeuropotsState& s) {
  ByteWriter w = begin_file(kNeuropotsMagic);
  w.put<double>(s.gamma);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.indices.size()));
  for (const auto& idx : s.indices) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(idx.size()));
    for (auto i : idx) w.put<std::uint32_t>(static_cast<std::uint32_t>(i));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.honeypots.size()));
  for (const auto& hp : s.honeypots) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hp.layer));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hp.neuron));
    w.put<std::uint8_t>(hp.checksum);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(hp.cells.size()));
    for (std::size_t i = 0; i < hp.cells.size(); ++i) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(hp.cells[i].layer));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(hp.cells[i].row));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(hp.cells[i].col));
      w.put<std::int8_t>(hp.sealed[i]);
    }
  }
  return std::move(w).seal();
}

inline NeuropotsState decode_neuropots(std::span<const std::uint8_t> data) {
  ByteReader r(data, kNeuropotsMagic);
  NeuropotsState s;
  s.gamma = r.get<double>();
  const auto layers = r.get<std::uint32_t>();
  for (std::uint32_t l = 0; l < layers; ++l) {
    std::vector<std::size_t> idx(r.get<std::uint32_t>());
    for (auto& i : idx) i = r.get<std::uint32_t>();
    s.indices.push_back(std::move(idx));
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NeuropotsHoneypot hp;
    hp.layer = r.get<std::uint32_t>();
    hp.neuron = r.get<std::uint32_t>();
    hp.checksum = r.get<std::uint8_t>();
    const auto cells = r.get<std::uint32_t>();
    for (std::uint32_t j = 0; j < cells; ++j) {
      CellRef c;
      c.layer = r.get<std::uint32_t>();
      c.row = r.get<std::uint32_t>();
      c.col = r.get<std::uint32_t>();
      hp.cells.push_back(c);
      hp.sealed.push_back(r.get<std::int8_t>());
    }
    s.honeypots.push_back(std::move(hp));
  }
  r.expect_end();
  return s;
}

}  // namespace crossfire
