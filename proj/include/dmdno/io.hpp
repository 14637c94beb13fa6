#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "dmdno/model.hpp"
#include "dmdno/pde.hpp"

namespace dmdno::io {

inline constexpr char kDatasetMagic[8] = {'D', 'M', 'D', 'N', 'O', 'D', 'S', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'D', 'N', 'O', 'M', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian container: magic, u32 version, u8 equation tag, u32-length
/// JSON params, u32 array count, then named float64 arrays.
void write_dataset(std::ostream& os, const pde::Dataset& d);
pde::Dataset read_dataset(std::istream& is);

void save_dataset(const pde::Dataset& d, const std::filesystem::path& path);
pde::Dataset load_dataset(const std::filesystem::path& path);

struct Checkpoint {
  model::OperatorSpec spec;
  model::ModelParams params;
};

void write_checkpoint(std::ostream& os, const model::OperatorSpec& spec, const model::ModelParams& params);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const model::OperatorSpec& spec, const model::ModelParams& params,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace dmdno::io
