#pragma once

#include <string>

#include "whitenseq/model.hpp"

namespace whitenseq {

struct Checkpoint {
  EncoderVariant variant;
  ModelParams params;
};

// Binary checkpoint: "WSEQCKPT" magic, format version, variant and
// dimension header, then every trainable tensor (name, shape, raw
// little-endian doubles) in the optimizer's declaration order, followed
// by the frozen text matrix when the variant carries one. Save/load
// round-trips are bit-exact.
void save_checkpoint(const std::string& path, const EncoderVariant& variant,
                     const ModelParams& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace whitenseq
