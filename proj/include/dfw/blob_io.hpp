#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"

namespace dfw {

/// Container used for datasets and checkpoints:
///   bytes 0..7   magic "DFWBLOB1"
///   bytes 8..15  header length L, little-endian uint64
///   next L bytes UTF-8 JSON header
///   remainder    little-endian IEEE-754 float64 payload
void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                std::span<const double> payload);

struct Blob {
  nlohmann::json header;
  std::vector<double> payload;
};

Blob read_blob(const std::filesystem::path& path);

}  // namespace dfw
