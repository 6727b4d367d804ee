// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/pipeline.hpp"

#include <nlohmann/json.hpp>

#include "cfdiff/binary_io.hpp"
#include "cfdiff/errors.hpp"

namespace cfdiff::pipeline {

namespace fs = std::filesystem;

fs::path matrix_path(const fs::path& dir) { return dir / "matrix.cfdm"; }

fs::path contexts_path(const fs::path& dir, int hops) {
  return dir / ("contexts-h" + std::to_string(hops) + ".cfhc");
}

fs::path summary_path(const fs::path& dir) { return dir / "prepare.json"; }

std::string PrepareSummary::to_json(const RunConfig& config) const {
  nlohmann::ordered_json j;
  j["raw_lines"] = raw_lines;
  j["users"] = users;
  j["items"] = items;
  j["interactions"] = interactions;
  j["excluded_users"] = excluded_users;
  j["train"] = train;
  j["val"] = val;
  j["test"] = test;
  j["matrix_digest"] = matrix_digest;
  j["contexts_digest"] = contexts_digest;
  j["config"] = canonical_text(config);
  return j.dump(2) + "\n";
}

PrepareSummary prepare(const fs::path& input, const RunConfig& config, const fs::path& out_dir) {
  data::ParseOptions opts;
  opts.format = data::parse_format(config.format);
  opts.min_rating = config.min_rating;
  const auto log = data::parse_interactions(input, opts);
  const auto matrix = data::split_holdout(log, config.split_ratios, config.split_seed);
  const auto store = graph::ContextStore::build(graph::build_bipartite(matrix), config.hops);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const auto matrix_bytes = matrix.serialize();
  const auto store_bytes = store.serialize();
  io::write_file_atomic(matrix_path(out_dir), matrix_bytes);
  io::write_file_atomic(contexts_path(out_dir, config.hops), store_bytes);

  PrepareSummary s;
  s.raw_lines = log.raw_lines;
  s.users = matrix.num_users();
  s.items = matrix.num_items();
  s.interactions = matrix.nnz();
  s.excluded_users = matrix.excluded_users();
  s.train = matrix.count(data::Split::train);
  s.val = matrix.count(data::Split::val);
  s.test = matrix.count(data::Split::test);
  s.matrix_digest = io::fnv1a(matrix_bytes);
  s.contexts_digest = io::fnv1a(store_bytes);
  io::write_file_atomic(summary_path(out_dir), s.to_json(config));
  return s;
}

Prepared load_prepared(const fs::path& dir, const RunConfig& config) {
  Prepared p;
  p.matrix = data::InteractionMatrix::load(matrix_path(dir));
  const auto cache = contexts_path(dir, config.hops);
  if (fs::exists(cache)) {
    p.contexts = graph::ContextStore::load(cache);
    if (p.contexts.num_users() != p.matrix.num_users() || p.contexts.num_items() != p.matrix.num_items()) {
      throw IoError(cache.string() + " does not match " + matrix_path(dir).string());
    }
  } else {
    p.contexts = graph::ContextStore::build(graph::build_bipartite(p.matrix), config.hops);
    p.contexts.save(cache);
  }
  return p;
}

}  // namespace cfdiff::pipeline
