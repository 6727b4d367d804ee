// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cfdiff/dataset.hpp"
#include "cfdiff/rng.hpp"

namespace cfdiff::test {

/// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cfdiff-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

/// Users split into `groups` communities; each user draws most of its items
/// from its community's block and a few uniformly.
inline data::InteractionLog clustered_log(std::size_t users, std::size_t items, std::size_t groups,
                                          std::size_t per_user, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t block = items / groups;
  std::vector<data::Interaction> recs;
  for (std::uint32_t u = 0; u < users; ++u) {
    const std::size_t g = u % groups;
    for (std::size_t j = 0; j < per_user; ++j) {
      const auto item = rng.uniform01() < 0.85 ? g * block + rng.uniform_index(block) : rng.uniform_index(items);
      recs.push_back({u, static_cast<std::uint32_t>(item), std::nullopt});
    }
  }
  return data::make_log(users, items, std::move(recs));
}

}  // namespace cfdiff::test
