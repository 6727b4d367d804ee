// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cfdiff/config.hpp"
#include "cfdiff/dataset.hpp"
#include "cfdiff/graph.hpp"

namespace cfdiff::pipeline {

/// File names inside a prepared directory.
std::filesystem::path matrix_path(const std::filesystem::path& dir);
std::filesystem::path contexts_path(const std::filesystem::path& dir, int hops);
std::filesystem::path summary_path(const std::filesystem::path& dir);

struct PrepareSummary {
  std::size_t raw_lines = 0;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  std::size_t excluded_users = 0;
  std::size_t train = 0, val = 0, test = 0;
  std::uint64_t matrix_digest = 0;
  std::uint64_t contexts_digest = 0;
  std::string to_json(const RunConfig& config) const;
};

/// Parse, split and precompute contexts; writes the matrix, the context
/// cache and a JSON summary into `out_dir`. Output bytes depend only on the
/// input file and the data keys of `config`.
PrepareSummary prepare(const std::filesystem::path& input, const RunConfig& config,
                       const std::filesystem::path& out_dir);

struct Prepared {
  data::InteractionMatrix matrix;
  graph::ContextStore contexts;
};

/// Loads a prepared directory. A missing context cache for `config.hops` is
/// rebuilt from the matrix and written back.
Prepared load_prepared(const std::filesystem::path& dir, const RunConfig& config);

}  // namespace cfdiff::pipeline
