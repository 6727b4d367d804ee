// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>

#include "cfdiff/binary_io.hpp"
#include "cfdiff/errors.hpp"
#include "cfdiff/rng.hpp"

namespace cfdiff::data {

namespace {

constexpr std::uint16_t kMatrixVersion = 1;

std::vector<std::string_view> split_fields(std::string_view line, Format fmt) {
  std::vector<std::string_view> out;
  auto push = [&](std::string_view f) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\r')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.remove_suffix(1);
    out.push_back(f);
  };
  if (fmt == Format::movielens_dat) {
    std::size_t start = 0;
    for (;;) {
      const auto pos = line.find("::", start);
      if (pos == std::string_view::npos) {
        push(line.substr(start));
        break;
      }
      push(line.substr(start, pos - start));
      start = pos + 2;
    }
    return out;
  }
  if (fmt == Format::csv) {
    std::size_t start = 0;
    for (;;) {
      const auto pos = line.find(',', start);
      if (pos == std::string_view::npos) {
        push(line.substr(start));
        break;
      }
      push(line.substr(start, pos - start));
      start = pos + 1;
    }
    return out;
  }
  // tsv: tabs or runs of blanks
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const auto start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

Format detect_format(std::string_view line) {
  if (line.find("::") != std::string_view::npos) return Format::movielens_dat;
  if (line.find('\t') != std::string_view::npos) return Format::tsv;
  if (line.find(',') != std::string_view::npos) return Format::csv;
  return Format::tsv;
}

bool parse_int(std::string_view s, std::int64_t& v) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && p == end;
}

bool parse_double(std::string_view s, double& v) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && p == end;
}

struct RawRecord {
  std::int64_t user;
  std::int64_t item;
  std::optional<std::int64_t> timestamp;
};

std::vector<std::int64_t> sorted_unique(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::uint32_t index_of(const std::vector<std::int64_t>& table, std::int64_t id) {
  return static_cast<std::uint32_t>(std::lower_bound(table.begin(), table.end(), id) - table.begin());
}

}  // namespace

Format parse_format(const std::string& name) {
  if (name == "auto") return Format::auto_detect;
  if (name == "tsv") return Format::tsv;
  if (name == "csv") return Format::csv;
  if (name == "movielens-dat" || name == "dat") return Format::movielens_dat;
  throw ContractError("unknown input format '" + name + "' (auto|tsv|csv|movielens-dat)");
}

InteractionLog parse_interactions(const std::filesystem::path& path, const ParseOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open interaction file '" + path.string() + "'");
  return parse_interactions(in, opts);
}

InteractionLog parse_interactions(std::istream& in, const ParseOptions& opts) {
  std::vector<RawRecord> raw;
  Format fmt = opts.format;
  std::string line;
  std::size_t line_no = 0;
  std::size_t data_lines = 0;
  bool seen_first = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (view.find_first_not_of(" \t") == std::string_view::npos) continue;
    if (fmt == Format::auto_detect) fmt = detect_format(view);
    const auto fields = split_fields(view, fmt);
    std::int64_t user = 0;
    std::int64_t item = 0;
    const bool ok = fields.size() >= 2 && parse_int(fields[0], user) && parse_int(fields[1], item);
    if (!ok) {
      if (!seen_first && !fields.empty() && !parse_int(fields[0], user)) {
        seen_first = true;  // header row
        continue;
      }
      throw ParseError(line_no, "expected at least two integer fields (user, item)");
    }
    seen_first = true;
    ++data_lines;
    if (opts.min_rating) {
      double rating = 0.0;
      if (fields.size() < 3 || !parse_double(fields[2], rating)) {
        throw ParseError(line_no, "rating filter enabled but rating column missing or invalid");
      }
      if (rating < *opts.min_rating) continue;
    }
    RawRecord rec{user, item, std::nullopt};
    if (fields.size() >= 4) {
      std::int64_t ts = 0;
      if (!parse_int(fields[3], ts)) throw ParseError(line_no, "timestamp is not an integer");
      rec.timestamp = ts;
    }
    raw.push_back(rec);
  }
  if (data_lines == 0) throw EmptyInputError("interaction input is empty");

  std::vector<std::int64_t> users;
  std::vector<std::int64_t> items;
  users.reserve(raw.size());
  items.reserve(raw.size());
  for (const auto& r : raw) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  InteractionLog log;
  log.user_ids = sorted_unique(std::move(users));
  log.item_ids = sorted_unique(std::move(items));
  std::vector<Interaction> recs;
  recs.reserve(raw.size());
  for (const auto& r : raw) {
    recs.push_back({index_of(log.user_ids, r.user), index_of(log.item_ids, r.item), r.timestamp});
  }
  auto built = make_log(log.user_ids.size(), log.item_ids.size(), std::move(recs));
  built.user_ids = std::move(log.user_ids);
  built.item_ids = std::move(log.item_ids);
  built.raw_lines = data_lines;
  return built;
}

InteractionLog make_log(std::size_t num_users, std::size_t num_items,
                        std::vector<Interaction> records) {
  for (const auto& r : records) {
    if (r.user >= num_users || r.item >= num_items) {
      throw ContractError("interaction index out of range");
    }
  }
  // Stable sort keeps the first occurrence's timestamp for duplicates.
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.user != b.user ? a.user < b.user : a.item < b.item;
  });
  records.erase(std::unique(records.begin(), records.end(),
                            [](const auto& a, const auto& b) {
                              return a.user == b.user && a.item == b.item;
                            }),
                records.end());
  InteractionLog log;
  log.num_users = num_users;
  log.num_items = num_items;
  log.raw_lines = records.size();
  log.records = std::move(records);
  return log;
}

SplitRatios parse_ratios(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    double v = 0.0;
    if (!parse_double(tok, v)) throw ContractError("bad split ratio '" + tok + "'");
    parts.push_back(v);
  }
  if (parts.size() != 3) throw ContractError("split ratios need three values train,val,test");
  return {parts[0], parts[1], parts[2]};
}

InteractionMatrix::InteractionMatrix(std::size_t num_users, std::size_t num_items,
                                     std::vector<std::uint64_t> offsets,
                                     std::vector<std::uint32_t> items, std::vector<Split> tags)
    : num_users_(num_users),
      num_items_(num_items),
      offsets_(std::move(offsets)),
      items_(std::move(items)),
      tags_(std::move(tags)) {
  if (offsets_.size() != num_users_ + 1 || offsets_.front() != 0 ||
      offsets_.back() != items_.size() || tags_.size() != items_.size()) {
    throw ContractError("inconsistent CSR arrays for interaction matrix");
  }
  for (std::size_t u = 0; u < num_users_; ++u) {
    if (offsets_[u] > offsets_[u + 1]) throw ContractError("CSR offsets not monotone");
    for (auto p = offsets_[u]; p < offsets_[u + 1]; ++p) {
      if (items_[p] >= num_items_) throw ContractError("item index out of range");
      if (p > offsets_[u] && items_[p] <= items_[p - 1]) {
        throw ContractError("row items must be strictly increasing");
      }
      if (static_cast<std::uint8_t>(tags_[p]) > 2) throw ContractError("bad split tag");
    }
  }
}

std::size_t InteractionMatrix::count(Split s) const {
  return static_cast<std::size_t>(std::count(tags_.begin(), tags_.end(), s));
}

std::span<const std::uint32_t> InteractionMatrix::row(std::size_t user) const {
  return {items_.data() + offsets_[user], static_cast<std::size_t>(offsets_[user + 1] - offsets_[user])};
}

std::span<const Split> InteractionMatrix::row_tags(std::size_t user) const {
  return {tags_.data() + offsets_[user], static_cast<std::size_t>(offsets_[user + 1] - offsets_[user])};
}

std::vector<std::uint32_t> InteractionMatrix::items(std::size_t user, std::uint8_t mask) const {
  std::vector<std::uint32_t> out;
  const auto r = row(user);
  const auto t = row_tags(user);
  for (std::size_t p = 0; p < r.size(); ++p) {
    if (in_mask(t[p], mask)) out.push_back(r[p]);
  }
  return out;
}

std::size_t InteractionMatrix::row_count(std::size_t user, std::uint8_t mask) const {
  const auto t = row_tags(user);
  return static_cast<std::size_t>(
      std::count_if(t.begin(), t.end(), [mask](Split s) { return in_mask(s, mask); }));
}

void InteractionMatrix::dense_row(std::size_t user, std::uint8_t mask, std::span<float> out) const {
  if (out.size() != num_items_) throw ShapeError("dense_row: output length != num_items");
  std::fill(out.begin(), out.end(), 0.0f);
  const auto r = row(user);
  const auto t = row_tags(user);
  for (std::size_t p = 0; p < r.size(); ++p) {
    if (in_mask(t[p], mask)) out[r[p]] = 1.0f;
  }
}

InteractionLog InteractionMatrix::to_log() const {
  std::vector<Interaction> recs;
  recs.reserve(nnz());
  for (std::size_t u = 0; u < num_users_; ++u) {
    for (auto i : row(u)) recs.push_back({static_cast<std::uint32_t>(u), i, std::nullopt});
  }
  return make_log(num_users_, num_items_, std::move(recs));
}

std::string InteractionMatrix::serialize() const {
  std::ostringstream out(std::ios::binary);
  io::LeWriter w(out);
  w.magic("CFDM");
  w.u16(kMatrixVersion);
  w.u64(num_users_);
  w.u64(num_items_);
  w.u64_array(offsets_);
  w.u32_array(items_);
  for (auto t : tags_) w.u8(static_cast<std::uint8_t>(t));
  return out.str();
}

InteractionMatrix InteractionMatrix::deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  io::LeReader r(in);
  r.expect_magic("CFDM");
  const auto version = r.u16();
  if (version != kMatrixVersion) throw IoError("unsupported CFDM version " + std::to_string(version));
  const auto users = r.u64();
  const auto items = r.u64();
  if (users > (1ull << 32) || items > (1ull << 32)) throw IoError("CFDM header dimensions implausible");
  std::vector<std::uint64_t> offsets(users + 1);
  r.u64_array(offsets);
  const auto nnz = offsets.back();
  if (nnz > bytes.size()) throw IoError("CFDM offsets exceed file size");
  std::vector<std::uint32_t> idx(nnz);
  r.u32_array(idx);
  std::vector<Split> tags(nnz);
  for (auto& t : tags) {
    const auto v = r.u8();
    if (v > 2) throw IoError("CFDM split tag out of range");
    t = static_cast<Split>(v);
  }
  try {
    return InteractionMatrix(users, items, std::move(offsets), std::move(idx), std::move(tags));
  } catch (const ContractError& e) {
    throw IoError(std::string("corrupt CFDM file: ") + e.what());
  }
}

void InteractionMatrix::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

InteractionMatrix InteractionMatrix::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

InteractionMatrix split_holdout(const InteractionLog& log, const SplitRatios& ratios,
                                std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ContractError("split ratios must be positive and sum to 1");
  }
  std::vector<std::uint64_t> offsets(log.num_users + 1, 0);
  for (const auto& r : log.records) ++offsets[r.user + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<std::uint32_t> items(log.records.size());
  std::vector<Split> tags(log.records.size(), Split::train);
  {
    auto cursor = offsets;
    for (const auto& r : log.records) items[cursor[r.user]++] = r.item;
  }
  std::size_t excluded = 0;
  std::vector<std::uint32_t> order;
  for (std::size_t u = 0; u < log.num_users; ++u) {
    const auto begin = offsets[u];
    const auto n = static_cast<std::int64_t>(offsets[u + 1] - begin);
    if (n == 0) {
      ++excluded;
      continue;
    }
    auto n_val = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * ratios.val));
    auto n_test = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * ratios.test));
    while (n - n_val - n_test < 1) {
      if (n_test > 0) {
        --n_test;
      } else {
        --n_val;
      }
    }
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(mix_seed(seed, u));
    rng.shuffle(std::span<std::uint32_t>(order));
    const auto n_train = n - n_val - n_test;
    for (std::int64_t p = 0; p < n; ++p) {
      const Split tag = p < n_train ? Split::train : (p < n_train + n_val ? Split::val : Split::test);
      tags[begin + order[static_cast<std::size_t>(p)]] = tag;
    }
  }
  InteractionMatrix m(log.num_users, log.num_items, std::move(offsets), std::move(items), std::move(tags));
  m.set_excluded_users(excluded);
  return m;
}

InteractionMatrix all_train(const InteractionLog& log) {
  std::vector<std::uint64_t> offsets(log.num_users + 1, 0);
  for (const auto& r : log.records) ++offsets[r.user + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<std::uint32_t> items(log.records.size());
  auto cursor = offsets;
  for (const auto& r : log.records) items[cursor[r.user]++] = r.item;
  std::vector<Split> tags(items.size(), Split::train);
  return InteractionMatrix(log.num_users, log.num_items, std::move(offsets), std::move(items), std::move(tags));
}

}  // namespace cfdiff::data
