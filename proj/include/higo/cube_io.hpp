#pragma once

#include <string>

#include "higo/datagen.hpp"

namespace higo {

/// HGC1 cube file: magic "HGC1", u32 little-endian JSON header length, the
/// UTF-8 JSON header, per-sample payload (drivers f32, indices f32, ba u8),
/// trailing CRC32 of the payload.
void write_cube(const std::string& path, const Dataset& dataset);
Dataset read_cube(const std::string& path);

}  // namespace higo
