#pragma once

#include <string>

#include "fedirm/numerics.hpp"

namespace fedirm {

// Checkpoint layout (all multi-byte fields little-endian):
//   bytes 0..3   magic "FIRM"
//   bytes 4..7   format version, uint32 (currently 1)
//   bytes 8..11  layer count L, uint32
//   then L pairs (out, in), each uint32
//   then per layer: out*in float32 weights (row-major), then out float32 biases
//
// Values are stored as IEEE-754 binary32. Saving truncates doubles to floats;
// a loaded set round-trips bit-exactly through a further save/load cycle.

void save_checkpoint(const ParameterSet& params, const std::string& path);

/// Throws FormatError on bad magic, bad version, truncation, trailing bytes,
/// or non-finite stored values. Throws IoError if the file cannot be opened.
ParameterSet load_checkpoint(const std::string& path);

}  // namespace fedirm
