// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cfdiff::data {

enum class Format { auto_detect, tsv, csv, movielens_dat };

Format parse_format(const std::string& name);

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Deduplicated interactions over contiguous user/item index spaces.
/// `user_ids[u]` / `item_ids[i]` map indices back to the raw file ids.
struct InteractionLog {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Interaction> records;  // sorted by (user, item), unique
  std::vector<std::int64_t> user_ids;
  std::vector<std::int64_t> item_ids;
  std::size_t raw_lines = 0;         // data lines read, before dedup/filter
};

struct ParseOptions {
  Format format = Format::auto_detect;
  /// When set, rows whose rating column is below this value are dropped.
  std::optional<double> min_rating;
};

/// Reads `user item [rating [timestamp]]` rows. Delimiter is auto-detected
/// among "::", tab and comma (plain whitespace is accepted as well). A
/// non-numeric first line is treated as a header.
InteractionLog parse_interactions(const std::filesystem::path& path, const ParseOptions& opts = {});
InteractionLog parse_interactions(std::istream& in, const ParseOptions& opts = {});

/// Builds a log from already-indexed pairs (dedups and sorts).
InteractionLog make_log(std::size_t num_users, std::size_t num_items,
                        std::vector<Interaction> records);

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

/// Bit set of splits, used to select which interactions a query sees.
enum SplitMask : std::uint8_t {
  kTrain = 1u << 0,
  kVal = 1u << 1,
  kTest = 1u << 2,
  kAll = kTrain | kVal | kTest,
};

inline bool in_mask(Split s, std::uint8_t mask) {
  return (mask >> static_cast<std::uint8_t>(s)) & 1u;
}

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

SplitRatios parse_ratios(const std::string& text);  // "0.7,0.1,0.2"

/// Binary user x item matrix in CSR form; every stored pair carries exactly
/// one split tag. Immutable after construction.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  InteractionMatrix(std::size_t num_users, std::size_t num_items,
                    std::vector<std::uint64_t> offsets, std::vector<std::uint32_t> items,
                    std::vector<Split> tags);

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t nnz() const { return items_.size(); }
  std::size_t count(Split s) const;

  std::span<const std::uint32_t> row(std::size_t user) const;
  std::span<const Split> row_tags(std::size_t user) const;

  /// Sorted item indices of `user` whose tag is in `mask`.
  std::vector<std::uint32_t> items(std::size_t user, std::uint8_t mask) const;
  std::size_t row_count(std::size_t user, std::uint8_t mask) const;

  /// Writes the binary row vector (1 for each selected interaction).
  void dense_row(std::size_t user, std::uint8_t mask, std::span<float> out) const;

  /// Users present in the source log that had no interactions at all.
  std::size_t excluded_users() const { return excluded_users_; }
  void set_excluded_users(std::size_t n) { excluded_users_ = n; }

  InteractionLog to_log() const;

  std::string serialize() const;
  static InteractionMatrix deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static InteractionMatrix load(const std::filesystem::path& path);

  friend bool operator==(const InteractionMatrix&, const InteractionMatrix&) = default;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<std::uint64_t> offsets_{0};
  std::vector<std::uint32_t> items_;
  std::vector<Split> tags_;
  std::size_t excluded_users_ = 0;
};

/// Per-user random holdout. Counts are rounded per user; at least one train
/// interaction is kept for every user that has any.
InteractionMatrix split_holdout(const InteractionLog& log, const SplitRatios& ratios,
                                std::uint64_t seed);

/// Every interaction tagged train.
InteractionMatrix all_train(const InteractionLog& log);

}  // namespace cfdiff::data
