#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fedcyc/nn.hpp"
#include "fedcyc/objectives.hpp"

namespace fedcyc {

inline constexpr std::uint16_t kProtocolVersion = 1;
/// version u16, round u32, client u32, domain u8, step u8, group count u32
inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::size_t kCrcBytes = 4;

enum class StepKind : std::uint8_t { combined = 0, d_step = 1, g_step = 2 };

std::string_view step_kind_name(StepKind k);

/// Wire unit sent by a client.
///
/// Layout (little-endian): header, then per group: role u8, entry count u32,
/// per entry: name length u32, name bytes, rank u8, extents u32 x rank,
/// payload f32 x product(extents). A CRC32 of everything before it closes
/// the message.
struct GradientMessage {
  std::uint16_t version = kProtocolVersion;
  std::uint32_t round = 0;
  std::uint32_t client = 0;
  Domain domain = Domain::X;
  StepKind step = StepKind::combined;
  std::vector<ParamGroup> groups;
};

/// Field-for-field equality with bitwise payload comparison.
bool bitwise_equal(const GradientMessage& a, const GradientMessage& b);

enum class CodecErrorKind {
  bad_crc,
  truncated,
  unknown_version,
  length_overflow,
  trailing_bytes,
  bad_field,
};

std::string_view codec_error_name(CodecErrorKind kind);

class CodecError : public std::runtime_error {
 public:
  CodecError(CodecErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  CodecErrorKind kind() const { return kind_; }

 private:
  CodecErrorKind kind_;
};

/// Deterministic: equal messages give equal bytes. Throws NumericError on
/// non-finite payloads.
std::vector<std::uint8_t> encode(const GradientMessage& message);

/// Verifies the CRC before reading any field; every length is checked
/// against the remaining buffer before use.
GradientMessage decode(std::span<const std::uint8_t> bytes);

/// Encoded size of a message carrying `groups`, computed from the layout
/// without encoding.
std::size_t message_size(std::span<const ParamGroup> groups);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace fedcyc
