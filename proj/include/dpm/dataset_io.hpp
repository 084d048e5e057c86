#pragma once

#include <filesystem>
#include <iosfwd>

#include "dpm/core.hpp"

namespace dpm {

struct DatasetReadOptions {
  std::size_t class_count = 2;
  // Additive smoothing applied when a record carries raw annotations.
  double epsilon = 0.0;
};

// JSON Lines: {"id", "context", "text", and exactly one of "annotations" or "prior"}.
// Unknown fields are ignored; blank lines are skipped. Errors name the line.
Dataset read_dataset(std::istream& in, const DatasetReadOptions& options = {});
Dataset read_dataset(const std::filesystem::path& path, const DatasetReadOptions& options = {});

void write_dataset(std::ostream& out, const Dataset& dataset);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

// Shared file helpers; both throw IoError.
std::ifstream open_input(const std::filesystem::path& path, bool binary = false);
std::ofstream open_output(const std::filesystem::path& path, bool binary = false);

}  // namespace dpm
