#pragma once

#include <string>

#include "msurv/graph.hpp"

namespace msurv {

/// Single-file parameter archive. Layout (all integers and floats
/// little-endian):
///   magic "MSRVCKP1"
///   u64 entry count
///   per entry: u32 name length, name bytes, u8 trainable flag,
///              u32 rows, u32 cols, rows*cols f64 values
void save_checkpoint(const Params& params, const std::string& path);

Params load_checkpoint(const std::string& path);

/// Replaces the values of entries whose names exist in the archive; shapes
/// must match. Entries absent from the archive are left untouched.
void load_checkpoint_into(Params& params, const std::string& path);

}  // namespace msurv
