#pragma once

#include <optional>
#include <string>

#include "upet/model.hpp"

namespace upet {

/// Versioned JSON checkpoint: dims, PEL config, init seed, and every
/// parameter array in row-major order.
void save_checkpoint(const std::string& path, const ModelParams& params, const PELConfig& pel);

struct Checkpoint {
  ModelParams params;
  PELConfig pel;
};

/// Loads and validates a checkpoint. When `expected` is given, the stored
/// PEL config must match it exactly.
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<PELConfig>& expected = std::nullopt);

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);
std::string paradigm_name(Paradigm p);
Paradigm paradigm_from_name(const std::string& s);

}  // namespace upet
