// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/checkpoint.hpp"

#include <bit>
#include <sstream>

#include "cfdiff/binary_io.hpp"
#include "cfdiff/errors.hpp"

namespace cfdiff::ckpt {

namespace {

constexpr std::uint16_t kVersion = 1;
const std::string kStepName = std::string(kAdamPrefix) + "step";

bool is_adam(const std::string& name) { return name.rfind(kAdamPrefix, 0) == 0; }

}  // namespace

const nd::Tensorf* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

std::string Checkpoint::serialize() const {
  std::ostringstream os;
  io::LeWriter w(os);
  w.magic("CFCK");
  w.u16(kVersion);
  w.u64(io::fnv1a(config_text));
  w.string(config_text);
  w.string(meta_text);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.string(t.name);
    w.u64(t.value.rows());
    w.u64(t.value.cols());
    w.f32_array(t.value.data());
  }
  return os.str();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  std::istringstream is(bytes);
  io::LeReader r(is);
  r.expect_magic("CFCK");
  if (const auto v = r.u16(); v != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(v));
  const auto digest = r.u64();
  Checkpoint ck;
  ck.config_text = r.string();
  if (io::fnv1a(ck.config_text) != digest) throw IoError("checkpoint: config digest mismatch");
  ck.meta_text = r.string();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.string();
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (cols != 0 && rows > bytes.size() / 4 / cols) throw IoError("checkpoint: truncated tensor payload");
    t.value = nd::Tensorf(rows, cols);
    r.f32_array(t.value.data());
    ck.tensors.push_back(std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

std::string meta_value(const std::string& meta_text, const std::string& key) {
  std::istringstream in(meta_text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos && line.substr(0, eq) == key) return line.substr(eq + 3);
  }
  throw IoError("checkpoint: missing meta key '" + key + "'");
}

void store_params(Checkpoint& ck, const camae::CamAeParameters<float>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) ck.tensors.push_back({params.name(i), params.tensor(i)});
}

camae::CamAeParameters<float> restore_params(const Checkpoint& ck) {
  camae::CamAeParameters<float> params;
  for (const auto& t : ck.tensors) {
    if (!is_adam(t.name)) params.add(t.name, t.value);
  }
  return params;
}

void store_adam(Checkpoint& ck, const camae::CamAeParameters<float>& params, const nd::AdamState<float>& state) {
  if (state.m.size() != params.size()) throw ShapeError("store_adam: state does not match parameters");
  nd::Tensorf step(1, 2);
  step(0, 0) = std::bit_cast<float>(static_cast<std::uint32_t>(state.step & 0xffffffffu));
  step(0, 1) = std::bit_cast<float>(static_cast<std::uint32_t>(state.step >> 32));
  ck.tensors.push_back({kStepName, step});
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.tensors.push_back({std::string(kAdamPrefix) + "m." + params.name(i), state.m[i]});
    ck.tensors.push_back({std::string(kAdamPrefix) + "v." + params.name(i), state.v[i]});
  }
}

bool has_adam(const Checkpoint& ck) { return ck.find(kStepName) != nullptr; }

nd::AdamState<float> restore_adam(const Checkpoint& ck, const camae::CamAeParameters<float>& params,
                                  nd::AdamConfig config) {
  const auto* step = ck.find(kStepName);
  if (step == nullptr || step->shape() != nd::Shape{1, 2}) throw IoError("checkpoint: no optimizer state");
  nd::AdamState<float> state;
  state.config = config;
  state.step = std::uint64_t{std::bit_cast<std::uint32_t>((*step)(0, 0))} |
               (std::uint64_t{std::bit_cast<std::uint32_t>((*step)(0, 1))} << 32);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* m = ck.find(std::string(kAdamPrefix) + "m." + params.name(i));
    const auto* v = ck.find(std::string(kAdamPrefix) + "v." + params.name(i));
    if (m == nullptr || v == nullptr || m->shape() != params.tensor(i).shape() ||
        v->shape() != params.tensor(i).shape()) {
      throw IoError("checkpoint: optimizer state missing or mis-shaped for " + params.name(i));
    }
    state.m.push_back(*m);
    state.v.push_back(*v);
  }
  return state;
}

}  // namespace cfdiff::ckpt
