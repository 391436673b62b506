#pragma once

#include <cstdint>
#include <string>

#include "langlab/model.hpp"

namespace langlab {

// Checkpoint directory layout:
//   manifest.json  format tag, step, model config, adapter config, and a
//                  tensor table (name, dtype f32, shape, byte offset into the
//                  blob, FNV-1a checksum)
//   weights.bin    little-endian IEEE-754 f32, row-major, concatenated in
//                  manifest order
// Round-trips are bitwise. Writes go to a temp directory renamed into place.
void save_checkpoint(const Model& model, int64_t step, const std::string& dir);

struct LoadedCheckpoint {
    Model model;
    int64_t step = 0;
};

// Rejects unknown format tags, unknown/missing tensor names, shape or size
// mismatches, truncated blobs, and checksum failures — each as FormatError
// naming the offending tensor.
LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace langlab
