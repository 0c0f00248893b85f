#include "geofuse/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "geofuse/fsio.hpp"

namespace geofuse {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts unsupported");

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open file: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_file_atomic(const std::string& path, const std::string& data) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write file: " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    require(out.good(), "short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

void append_f64(std::string& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void append_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void append_u64(std::string& out, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

double BinReader::read_f64() {
  require(pos_ + 8 <= data_.size(), "binary read past end of file");
  double v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

float BinReader::read_f32() {
  require(pos_ + 4 <= data_.size(), "binary read past end of file");
  float v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

uint64_t BinReader::read_u64() {
  require(pos_ + 8 <= data_.size(), "binary read past end of file");
  uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

uint8_t BinReader::read_u8() {
  require(pos_ + 1 <= data_.size(), "binary read past end of file");
  return static_cast<uint8_t>(data_[pos_++]);
}

size_t BinReader::remaining() const { return data_.size() - pos_; }

// ---------------------------------------------------------------------------

Tensor ParamSet::add(const std::string& name, Shape shape, std::vector<double> value) {
  require(!by_name_.count(name), "duplicate parameter name: " + name);
  Tensor t = Tensor::param(std::move(shape), std::move(value));
  by_name_.emplace(name, t);
  return t;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = by_name_.find(name);
  require(it != by_name_.end(), "unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = by_name_.find(name);
  require(it != by_name_.end(), "unknown parameter: " + name);
  return it->second;
}

void ParamSet::zero_grads() {
  for (auto& [_, t] : by_name_) t.zero_grad();
}

bool ParamSet::all_finite() const {
  for (const auto& [_, t] : by_name_)
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& [_, t] : by_name_) n += t.numel();
  return n;
}

namespace {

// Weights and biases both uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)). Zero
// biases would park every dead-input rectifier exactly on its kink.
LinearParams add_affine(ParamSet& ps, const std::string& prefix, int64_t fan_in, int64_t fan_out,
                        Shape wshape, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(shape_numel(wshape));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  std::vector<double> b(fan_out);
  for (auto& v : b) v = rng.uniform(-bound, bound);
  LinearParams p;
  p.W = ps.add(prefix + ".weight", std::move(wshape), std::move(w));
  p.b = ps.add(prefix + ".bias", {fan_out}, std::move(b));
  return p;
}

}  // namespace

LinearParams add_linear(ParamSet& ps, const std::string& prefix, int64_t in, int64_t out,
                        Rng& rng) {
  return add_affine(ps, prefix, in, out, {out, in}, rng);
}

LinearParams add_conv3(ParamSet& ps, const std::string& prefix, int64_t cin, int64_t cout,
                       Rng& rng) {
  return add_affine(ps, prefix, 27 * cin, cout, {cout, 27 * cin}, rng);
}

LayerNormParams add_layer_norm(ParamSet& ps, const std::string& prefix, int64_t c) {
  LayerNormParams p;
  p.gamma = ps.add(prefix + ".gamma", {c}, std::vector<double>(c, 1.0));
  p.beta = ps.add(prefix + ".beta", {c}, std::vector<double>(c, 0.0));
  return p;
}

TransformerParams add_transformer(ParamSet& ps, const std::string& prefix, int64_t channels,
                                  int heads, Rng& rng) {
  require(heads > 0 && channels % heads == 0,
          "transformer: channels must be divisible by head count");
  TransformerParams p;
  p.heads = heads;
  p.ln1 = add_layer_norm(ps, prefix + ".ln1", channels);
  p.wq = add_linear(ps, prefix + ".q", channels, channels, rng);
  p.wk = add_linear(ps, prefix + ".k", channels, channels, rng);
  p.wv = add_linear(ps, prefix + ".v", channels, channels, rng);
  p.wo = add_linear(ps, prefix + ".out", channels, channels, rng);
  p.ln2 = add_layer_norm(ps, prefix + ".ln2", channels);
  p.ff1 = add_linear(ps, prefix + ".ff1", channels, 2 * channels, rng);
  p.ff2 = add_linear(ps, prefix + ".ff2", 2 * channels, channels, rng);
  return p;
}

Tensor mlp_forward(const Tensor& x, const std::vector<LinearParams>& layers,
                   bool relu_after_last) {
  require(!layers.empty(), "mlp_forward: no layers");
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = ops::linear(h, layers[i].W, layers[i].b);
    if (i + 1 < layers.size() || relu_after_last) h = ops::relu(h);
  }
  return h;
}

TransformerOut transformer_block(const Tensor& x, const TransformerParams& p,
                                 const ViewMask& mask) {
  require(x.shape().size() == 3, "transformer_block: expected [T, N, C]");
  require(x.dim(2) % p.heads == 0, "transformer_block: channels not divisible by heads");

  const Tensor xn = ops::layer_norm(x, p.ln1.gamma, p.ln1.beta);
  const Tensor q = ops::linear(xn, p.wq.W, p.wq.b);
  const Tensor k = ops::linear(xn, p.wk.W, p.wk.b);
  const Tensor v = ops::linear(xn, p.wv.W, p.wv.b);
  const Tensor scores = ops::attention_scores(q, k, p.heads);
  const Tensor attn = ops::attention_softmax(scores, mask);
  const Tensor ctx = ops::attention_apply(attn, v, p.heads);
  const Tensor proj = ops::linear(ctx, p.wo.W, p.wo.b);
  Tensor h = ops::mask_rows(ops::add(x, proj), mask);

  const Tensor hn = ops::layer_norm(h, p.ln2.gamma, p.ln2.beta);
  const Tensor ff = ops::linear(ops::relu(ops::linear(hn, p.ff1.W, p.ff1.b)), p.ff2.W, p.ff2.b);
  Tensor y = ops::mask_rows(ops::add(h, ff), mask);

  TransformerOut out;
  out.output = y;
  out.attn_heads = attn;
  out.attn = ops::head_average(attn);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints: one-line JSON manifest + concatenated f64 little-endian blobs
// in manifest order.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const ParamSet& ps, uint64_t seed, int64_t step) {
  json manifest;
  manifest["format"] = "geofuse-checkpoint-v1";
  manifest["endianness"] = "little";
  manifest["seed"] = seed;
  manifest["step"] = step;
  json params = json::array();
  for (const auto& [name, t] : ps) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    params.push_back(e);
  }
  manifest["params"] = params;

  std::string out = manifest.dump();
  out.push_back('\n');
  for (const auto& [name, t] : ps)
    for (double v : t.values()) append_f64(out, v);
  write_file_atomic(path, out);
}

CheckpointInfo load_checkpoint(const std::string& path, ParamSet& ps) {
  const std::string data = read_file(path);
  const size_t nl = data.find('\n');
  require(nl != std::string::npos, "checkpoint: missing manifest line");
  json manifest;
  try {
    manifest = json::parse(data.substr(0, nl));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  require(manifest.value("format", "") == "geofuse-checkpoint-v1", "checkpoint: unknown format");
  require(manifest.value("endianness", "") == "little", "checkpoint: unsupported endianness");

  BinReader rd(data, nl + 1);
  for (const auto& e : manifest.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    Tensor& t = ps.at(name);
    require(shape_equal(t.shape(), shape),
            "checkpoint: shape mismatch for " + name + ": file has " + shape_str(shape) +
                ", model has " + shape_str(t.shape()));
    auto& vals = t.raw_values();
    for (auto& v : vals) v = rd.read_f64();
  }
  require(rd.remaining() == 0, "checkpoint: trailing bytes");

  CheckpointInfo info;
  info.seed = manifest.value("seed", 0ull);
  info.step = manifest.value("step", int64_t{0});
  return info;
}

}  // namespace geofuse
