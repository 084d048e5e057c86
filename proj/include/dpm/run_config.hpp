#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dpm/calibrate.hpp"
#include "dpm/dataset_io.hpp"
#include "dpm/ingest.hpp"
#include "dpm/preference.hpp"
#include "dpm/seqgen.hpp"

namespace dpm {

enum class ValueKind { Real, Integer, Unsigned, String, RealList, UnsignedList };

// Seeds used for aggregate reports when no list is configured.
inline const std::vector<std::uint64_t> kDefaultSeeds = {0, 1, 13, 42, 1024};

/// Key/value run configuration. Files hold one `key = value` per line; `#`
/// starts a comment; lists are comma separated. Every key is checked against
/// schema() and unknown keys are rejected.
class RunConfig {
 public:
  static const std::map<std::string, ValueKind>& schema();

  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);

  // Validates key and value; later calls override earlier ones.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  double real(const std::string& key, double fallback) const;
  long long integer(const std::string& key, long long fallback) const;
  std::uint64_t unsigned_value(const std::string& key, std::uint64_t fallback) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<double> reals(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::uint64_t> unsigned_list(const std::string& key, std::vector<std::uint64_t> fallback) const;

  RngSeed seed() const { return RngSeed{unsigned_value("seed", 0)}; }
  DatasetReadOptions read_options() const;
  TrainConfig train_config() const;
  GenTrainConfig gen_config() const;
  CalibConfig calib_config() const;
  SimulationConfig simulation_config() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dpm
