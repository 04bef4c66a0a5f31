#pragma once

// VPRF binary container.
//
//   "VPRF" | u16 version | u16 section count | sections...
//   section: u32 tag | u64 byte length | payload
//
// Everything little-endian; tensors are row-major f32.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "vpr/types.hpp"

namespace vpr {

inline constexpr std::uint16_t kContainerVersion = 1;

enum class SectionTag : std::uint32_t {
  kMeta = 0x01,
  kPatchTokens = 0x02,
  kClassToken = 0x03,
  kAssignment = 0x04,
  kSalienceMask = 0x05,
  kReliability = 0x06,
  kGlobalDescriptor = 0x07,
  kLocalPositions = 0x08,
  kLocalDescriptors = 0x09,
  kLocalReliability = 0x0A,
  kFusedMask = 0x0B,
  kClusterWeights = 0x10,
  kClusterBiases = 0x11,
  kProjection = 0x12,
  kClassProjection = 0x13,
  kDustbinScore = 0x14,
};

/// Serialize a record. Validates invariants first; returns bytes written.
std::size_t write_record(const ImageRecord& record, std::ostream& sink);
/// Parse and validate a record. Throws DataError naming the failing field.
ImageRecord read_record(std::istream& source);

void save_record(const ImageRecord& record, const std::filesystem::path& path);
ImageRecord load_record(const std::filesystem::path& path);

std::size_t write_cluster_params(const ClusterParams& params, std::ostream& sink);
ClusterParams read_cluster_params(std::istream& source);
ClusterParams load_cluster_params(const std::filesystem::path& path);
void save_cluster_params(const ClusterParams& params, const std::filesystem::path& path);

}  // namespace vpr
