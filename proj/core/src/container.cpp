// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchwork/error.hpp"

namespace patchwork {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

struct TensorRef {
  std::vector<int> shape;
  std::vector<float> values;
};

// Flat list of (name, shape, values) in canonical write order.
std::vector<std::pair<std::string, TensorRef>> flatten(const Weights& w) {
  const auto& c = w.config;
  std::vector<std::pair<std::string, TensorRef>> out;
  auto add_matrix = [&](const std::string& name, const Matrix& m) {
    out.push_back({name, {{m.rows(), m.cols()}, {m.data().begin(), m.data().end()}}});
  };
  auto add_vector = [&](const std::string& name, const std::vector<float>& v) {
    out.push_back({name, {{static_cast<int>(v.size())}, v}});
  };
  auto add_heads = [&](const std::string& name, const std::vector<Matrix>& heads) {
    TensorRef ref;
    ref.shape = {static_cast<int>(heads.size()), heads.empty() ? 0 : heads[0].rows(),
                 heads.empty() ? 0 : heads[0].cols()};
    for (const auto& m : heads) ref.values.insert(ref.values.end(), m.data().begin(), m.data().end());
    out.push_back({name, std::move(ref)});
  };

  add_matrix("embed.W_E", w.token_embedding);
  if (c.positional_kind == PositionalKind::kLearned) add_matrix("embed.W_pos", w.positional);
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& b = w.blocks[l];
    const auto p = fmt::format("blocks.{}.", l);
    add_vector(p + "ln1.w", b.ln1);
    add_heads(p + "attn.W_Q", b.attn.W_Q);
    add_heads(p + "attn.W_K", b.attn.W_K);
    add_heads(p + "attn.W_V", b.attn.W_V);
    add_heads(p + "attn.W_O", b.attn.W_O);
    add_vector(p + "ln2.w", b.ln2);
    add_matrix(p + "mlp.W_in", b.mlp.W_in);
    add_vector(p + "mlp.b_in", b.mlp.b_in);
    add_matrix(p + "mlp.W_out", b.mlp.W_out);
    add_vector(p + "mlp.b_out", b.mlp.b_out);
  }
  add_vector("ln_final.w", w.ln_final);
  add_matrix("unembed.W_U", w.unembedding);
  return out;
}

std::string norm_name(NormKind k) { return k == NormKind::kRms ? "rms" : "layer"; }

std::string positional_name(PositionalKind k) {
  switch (k) {
    case PositionalKind::kLearned: return "learned";
    case PositionalKind::kRotary: return "rotary";
    case PositionalKind::kNone: return "none";
  }
  return "none";
}

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::kMalformedHeader, "malformed container header: " + what);
}

ModelConfig parse_config(const json& j) {
  if (!j.is_object()) malformed("missing __config__ object");
  ModelConfig c;
  auto dim = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer()) {
      malformed(fmt::format("__config__.{} missing or not an integer", key));
    }
    return j[key].get<int>();
  };
  c.n_layers = dim("n_layers");
  c.n_heads = dim("n_heads");
  c.d_model = dim("d_model");
  c.d_head = dim("d_head");
  c.d_mlp = dim("d_mlp");
  c.vocab_size = dim("vocab_size");
  c.max_seq = dim("max_seq");
  const auto norm = j.value("norm_kind", std::string("rms"));
  if (norm == "rms") c.norm_kind = NormKind::kRms;
  else if (norm == "layer") c.norm_kind = NormKind::kLayer;
  else malformed("unknown norm_kind \"" + norm + "\"");
  const auto pos = j.value("positional_kind", std::string("none"));
  if (pos == "learned") c.positional_kind = PositionalKind::kLearned;
  else if (pos == "rotary") c.positional_kind = PositionalKind::kRotary;
  else if (pos == "none") c.positional_kind = PositionalKind::kNone;
  else malformed("unknown positional_kind \"" + pos + "\"");
  try {
    c.validate();
  } catch (const Error& e) {
    malformed(e.what());
  }
  return c;
}

class TensorTable {
 public:
  TensorTable(const json& header, const std::uint8_t* data, std::size_t data_size)
      : header_(header), data_(data), data_size_(data_size) {}

  std::vector<float> take(const std::string& name, const std::vector<int>& expected) {
    if (!header_.contains(name)) {
      throw Error(ErrorCode::kShapeMismatch, fmt::format("tensor {} is missing", name));
    }
    const auto& entry = header_[name];
    if (!entry.is_object() || entry.value("dtype", std::string()) != "f32") {
      malformed(fmt::format("{}: dtype must be \"f32\"", name));
    }
    if (!entry.contains("shape") || !entry["shape"].is_array() || !entry.contains("offset") ||
        !entry["offset"].is_number_unsigned() || !entry.contains("length") ||
        !entry["length"].is_number_unsigned()) {
      malformed(fmt::format("{}: needs shape, offset and length", name));
    }
    std::vector<int> shape;
    std::size_t count = 1;
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned()) malformed(fmt::format("{}: bad shape entry", name));
      shape.push_back(d.get<int>());
      count *= d.get<std::size_t>();
    }
    const auto offset = entry["offset"].get<std::size_t>();
    const auto length = entry["length"].get<std::size_t>();
    if (length != count * sizeof(float)) {
      malformed(fmt::format("{}: length {} does not match shape", name, length));
    }
    if (offset > data_size_ || length > data_size_ - offset) {
      malformed(fmt::format("{}: byte range exceeds data section", name));
    }
    if (shape != expected) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("tensor {} has shape [{}], expected [{}]", name,
                              fmt::join(shape, ", "), fmt::join(expected, ", ")));
    }
    std::vector<float> values(count);
    std::memcpy(values.data(), data_ + offset, length);
    for (float v : values) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kNonFinite, fmt::format("tensor {} contains a non-finite value", name));
      }
    }
    return values;
  }

  Matrix matrix(const std::string& name, int rows, int cols) {
    auto values = take(name, {rows, cols});
    Matrix m(rows, cols);
    std::copy(values.begin(), values.end(), m.data().begin());
    return m;
  }

  std::vector<Matrix> heads(const std::string& name, int n, int rows, int cols) {
    auto values = take(name, {n, rows, cols});
    std::vector<Matrix> out;
    const std::size_t stride = static_cast<std::size_t>(rows) * cols;
    for (int h = 0; h < n; ++h) {
      Matrix m(rows, cols);
      std::copy(values.begin() + h * stride, values.begin() + (h + 1) * stride, m.data().begin());
      out.push_back(std::move(m));
    }
    return out;
  }

  std::vector<float> vector(const std::string& name, int size) { return take(name, {size}); }

 private:
  const json& header_;
  const std::uint8_t* data_;
  std::size_t data_size_;
};

}  // namespace

Weights parse_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) malformed("file shorter than the length prefix");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), sizeof(header_len));
  if (header_len > bytes.size() - 8) malformed("header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    malformed(e.what());
  }
  if (!header.is_object()) malformed("header is not a JSON object");
  if (!header.contains("__config__")) malformed("missing __config__ object");

  Weights w;
  w.config = parse_config(header["__config__"]);
  const auto& c = w.config;
  TensorTable table(header, bytes.data() + 8 + header_len, bytes.size() - 8 - header_len);

  w.token_embedding = table.matrix("embed.W_E", c.vocab_size, c.d_model);
  if (c.positional_kind == PositionalKind::kLearned) {
    w.positional = table.matrix("embed.W_pos", c.max_seq, c.d_model);
  }
  for (int l = 0; l < c.n_layers; ++l) {
    const auto p = fmt::format("blocks.{}.", l);
    BlockWeights b;
    b.ln1 = table.vector(p + "ln1.w", c.d_model);
    b.attn.W_Q = table.heads(p + "attn.W_Q", c.n_heads, c.d_model, c.d_head);
    b.attn.W_K = table.heads(p + "attn.W_K", c.n_heads, c.d_model, c.d_head);
    b.attn.W_V = table.heads(p + "attn.W_V", c.n_heads, c.d_model, c.d_head);
    b.attn.W_O = table.heads(p + "attn.W_O", c.n_heads, c.d_head, c.d_model);
    b.ln2 = table.vector(p + "ln2.w", c.d_model);
    b.mlp.W_in = table.matrix(p + "mlp.W_in", c.d_model, c.d_mlp);
    b.mlp.b_in = table.vector(p + "mlp.b_in", c.d_mlp);
    b.mlp.W_out = table.matrix(p + "mlp.W_out", c.d_mlp, c.d_model);
    b.mlp.b_out = table.vector(p + "mlp.b_out", c.d_model);
    w.blocks.push_back(std::move(b));
  }
  w.ln_final = table.vector("ln_final.w", c.d_model);
  w.unembedding = table.matrix("unembed.W_U", c.d_model, c.vocab_size);
  w.validate();
  return w;
}

Weights load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open container {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_model(bytes);
}

std::vector<std::uint8_t> serialize_model(const Weights& weights) {
  weights.validate();
  const auto& c = weights.config;
  json header = json::object();
  header["__config__"] = {
      {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
      {"d_model", c.d_model},       {"d_head", c.d_head},
      {"d_mlp", c.d_mlp},           {"vocab_size", c.vocab_size},
      {"max_seq", c.max_seq},       {"norm_kind", norm_name(c.norm_kind)},
      {"positional_kind", positional_name(c.positional_kind)},
  };

  std::vector<std::uint8_t> data;
  for (const auto& [name, ref] : flatten(weights)) {
    const std::size_t length = ref.values.size() * sizeof(float);
    header[name] = {{"dtype", "f32"},
                    {"shape", ref.shape},
                    {"offset", data.size()},
                    {"length", length}};
    const auto* raw = reinterpret_cast<const std::uint8_t*>(ref.values.data());
    data.insert(data.end(), raw, raw + length);
  }

  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();
  std::vector<std::uint8_t> bytes(8);
  std::memcpy(bytes.data(), &header_len, sizeof(header_len));
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), data.begin(), data.end());
  return bytes;
}

void save_model(const Weights& weights, const std::filesystem::path& path) {
  const auto bytes = serialize_model(weights);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace patchwork
