#include "fedcyc/codec.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <type_traits>

#include <zlib.h>

namespace fedcyc {

static_assert(std::endian::native == std::endian::little,
              "codec writes host floats directly; big-endian hosts need byte swaps");

std::string_view step_kind_name(StepKind k) {
  switch (k) {
    case StepKind::combined: return "combined";
    case StepKind::d_step: return "d-step";
    case StepKind::g_step: return "g-step";
  }
  return "?";
}

std::string_view codec_error_name(CodecErrorKind kind) {
  switch (kind) {
    case CodecErrorKind::bad_crc: return "bad_crc";
    case CodecErrorKind::truncated: return "truncated";
    case CodecErrorKind::unknown_version: return "unknown_version";
    case CodecErrorKind::length_overflow: return "length_overflow";
    case CodecErrorKind::trailing_bytes: return "trailing_bytes";
    case CodecErrorKind::bad_field: return "bad_field";
  }
  return "?";
}

bool bitwise_equal(const GradientMessage& a, const GradientMessage& b) {
  if (a.version != b.version || a.round != b.round || a.client != b.client ||
      a.domain != b.domain || a.step != b.step || a.groups.size() != b.groups.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.groups.size(); ++i)
    if (!bitwise_equal(a.groups[i], b.groups[i])) return false;
  return true;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  constexpr std::size_t chunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += chunk) {
    const std::size_t n = std::min(chunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get(const char* what) {
    if (remaining() < sizeof(U)) {
      throw CodecError(CodecErrorKind::truncated, std::string("truncated while reading ") + what);
    }
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw CodecError(CodecErrorKind::length_overflow,
                       std::string(what) + " declares " + std::to_string(n) + " bytes, " +
                           std::to_string(remaining()) + " remain");
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t entry_size(const NamedTensor& e) {
  return 4 + e.name.size() + 1 + 4 * e.value.rank() + 4 * e.value.size();
}

}  // namespace

std::size_t message_size(std::span<const ParamGroup> groups) {
  std::size_t n = kHeaderBytes + kCrcBytes;
  for (const auto& g : groups) {
    n += 1 + 4;
    for (const auto& e : g.entries()) n += entry_size(e);
  }
  return n;
}

std::vector<std::uint8_t> encode(const GradientMessage& m) {
  Writer w(message_size(m.groups));
  w.put<std::uint16_t>(m.version);
  w.put<std::uint32_t>(m.round);
  w.put<std::uint32_t>(m.client);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.domain));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.step));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.groups.size()));
  for (const auto& g : m.groups) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(g.role()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.size()));
    for (const auto& e : g.entries()) {
      require_finite<float>(e.value.data(), "gradient " + e.name);
      if (e.value.rank() > std::numeric_limits<std::uint8_t>::max()) {
        throw CodecError(CodecErrorKind::bad_field, "rank of " + e.name + " exceeds 255");
      }
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
      w.bytes(e.name.data(), e.name.size());
      w.put<std::uint8_t>(static_cast<std::uint8_t>(e.value.rank()));
      for (auto x : e.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(x));
      w.bytes(e.value.data().data(), 4 * e.value.size());
    }
  }
  const std::uint32_t crc = crc32(w.buffer());
  w.put<std::uint32_t>(crc);
  return std::move(w.buffer());
}

GradientMessage decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + kCrcBytes) {
    throw CodecError(CodecErrorKind::truncated,
                     "message of " + std::to_string(bytes.size()) + " bytes is shorter than " +
                         std::to_string(kHeaderBytes + kCrcBytes));
  }
  const auto body = bytes.first(bytes.size() - kCrcBytes);
  Reader tail(bytes.last(kCrcBytes));
  if (crc32(body) != tail.get<std::uint32_t>("crc")) {
    throw CodecError(CodecErrorKind::bad_crc, "CRC mismatch");
  }

  Reader r(body);
  GradientMessage m;
  m.version = r.get<std::uint16_t>("version");
  if (m.version != kProtocolVersion) {
    throw CodecError(CodecErrorKind::unknown_version,
                     "unknown protocol version " + std::to_string(m.version));
  }
  m.round = r.get<std::uint32_t>("round");
  m.client = r.get<std::uint32_t>("client");
  const auto domain = r.get<std::uint8_t>("domain");
  if (domain > 1) throw CodecError(CodecErrorKind::bad_field, "domain tag " + std::to_string(domain));
  m.domain = static_cast<Domain>(domain);
  const auto step = r.get<std::uint8_t>("step kind");
  if (step > 2) throw CodecError(CodecErrorKind::bad_field, "step kind " + std::to_string(step));
  m.step = static_cast<StepKind>(step);

  const auto group_count = r.get<std::uint32_t>("group count");
  // each group needs at least 5 bytes
  if (group_count > r.remaining() / 5) {
    throw CodecError(CodecErrorKind::length_overflow,
                     "group count " + std::to_string(group_count) + " exceeds buffer");
  }
  for (std::uint32_t gi = 0; gi < group_count; ++gi) {
    const auto role_byte = r.get<std::uint8_t>("role");
    const auto role = role_from_byte(role_byte);
    if (!role) throw CodecError(CodecErrorKind::bad_field, "role byte " + std::to_string(role_byte));
    ParamGroup g(*role);
    const auto entries = r.get<std::uint32_t>("entry count");
    // each entry needs at least 4 + 1 bytes
    if (entries > r.remaining() / 5) {
      throw CodecError(CodecErrorKind::length_overflow,
                       "entry count " + std::to_string(entries) + " exceeds buffer");
    }
    for (std::uint32_t ei = 0; ei < entries; ++ei) {
      const auto name_len = r.get<std::uint32_t>("name length");
      auto name_bytes = r.take(name_len, "name");
      std::string name(name_bytes.begin(), name_bytes.end());
      const auto rank = r.get<std::uint8_t>("rank");
      if (rank == 0) throw CodecError(CodecErrorKind::bad_field, "rank 0 for " + name);
      Shape shape;
      std::size_t count = 1;
      for (std::uint8_t k = 0; k < rank; ++k) {
        const auto extent = r.get<std::uint32_t>("extent");
        if (extent == 0) throw CodecError(CodecErrorKind::bad_field, "zero extent in " + name);
        if (count > r.remaining() / 4 / extent) {
          throw CodecError(CodecErrorKind::length_overflow,
                           "extents of " + name + " exceed buffer");
        }
        count *= extent;
        shape.push_back(extent);
      }
      auto payload = r.take(4 * count, "payload");
      std::vector<float> data(count);
      std::memcpy(data.data(), payload.data(), payload.size());
      try {
        g.add(std::move(name), Tensor(std::move(shape), std::move(data)));
      } catch (const NumericError& e) {
        throw CodecError(CodecErrorKind::bad_field, e.what());
      } catch (const ModelError& e) {
        throw CodecError(CodecErrorKind::bad_field, e.what());
      }
    }
    m.groups.push_back(std::move(g));
  }
  if (r.remaining() != 0) {
    throw CodecError(CodecErrorKind::trailing_bytes,
                     std::to_string(r.remaining()) + " bytes after last group");
  }
  return m;
}

}  // namespace fedcyc
