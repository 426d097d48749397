#include "customkd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "customkd/errors.hpp"

namespace customkd {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'K', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw SchemaError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  if (has(name)) throw ContractViolation("duplicate checkpoint entry " + name);
  NamedArray a;
  a.name = name;
  for (auto d : t.shape()) a.shape.push_back(d);
  a.values.assign(t.values().begin(), t.values().end());
  arrays_.push_back(std::move(a));
}

void Checkpoint::add(const ParameterList& params) {
  for (const auto& p : params) add(p.name, p.tensor);
}

void Checkpoint::add_encoder(const std::string& prefix, const Encoder& e) { add(e.parameters(prefix)); }
void Checkpoint::add_head(const std::string& prefix, const HeadClassifier& h) { add(h.parameters(prefix)); }

void Checkpoint::add_projection(const std::string& prefix, const ProjectionHead& p) {
  add(prefix + ".linear.weight", p.linear.weight);
  add(prefix + ".linear.bias", p.linear.bias);
  if (p.use_bn) {
    add(prefix + ".bn.gamma", p.bn.gamma);
    add(prefix + ".bn.beta", p.bn.beta);
    add(prefix + ".bn.running_mean", Tensor::vector(p.bn.running_mean));
    add(prefix + ".bn.running_var", Tensor::vector(p.bn.running_var));
  }
}

void Checkpoint::add_model(const std::string& prefix, const Model& m) {
  add_encoder(prefix + ".encoder", m.encoder);
  add_head(prefix + ".head", m.head);
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(arrays_.begin(), arrays_.end(), [&](const NamedArray& a) { return a.name == name; });
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  return std::any_of(arrays_.begin(), arrays_.end(),
                     [&](const NamedArray& a) { return a.name.rfind(prefix + ".", 0) == 0; });
}

const NamedArray& Checkpoint::get(const std::string& name) const {
  auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const NamedArray& a) { return a.name == name; });
  if (it == arrays_.end()) throw SchemaError("checkpoint has no entry " + name);
  return *it;
}

Tensor Checkpoint::tensor(const std::string& name, bool requires_grad) const {
  const auto& a = get(name);
  Shape shape(a.shape.begin(), a.shape.end());
  return Tensor::from(std::move(shape), a.values, requires_grad);
}

Encoder Checkpoint::encoder(const std::string& prefix) const {
  Encoder e;
  for (std::size_t i = 0;; ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    if (!has(base + ".weight")) break;
    e.layers.push_back({tensor(base + ".weight"), tensor(base + ".bias")});
  }
  if (e.layers.empty()) throw SchemaError("checkpoint has no encoder under " + prefix);
  e.validate();
  return e;
}

HeadClassifier Checkpoint::head(const std::string& prefix) const {
  return {{tensor(prefix + ".weight"), tensor(prefix + ".bias")}};
}

ProjectionHead Checkpoint::projection(const std::string& prefix) const {
  ProjectionHead p;
  p.linear = {tensor(prefix + ".linear.weight"), tensor(prefix + ".linear.bias")};
  p.use_bn = has(prefix + ".bn.gamma");
  p.bn = BatchNormState::create(p.out_dim());
  if (p.use_bn) {
    p.bn.gamma = tensor(prefix + ".bn.gamma");
    p.bn.beta = tensor(prefix + ".bn.beta");
    p.bn.running_mean = get(prefix + ".bn.running_mean").values;
    p.bn.running_var = get(prefix + ".bn.running_var").values;
  }
  return p;
}

Model Checkpoint::model(const std::string& prefix) const {
  Model m{encoder(prefix + ".encoder"), head(prefix + ".head")};
  if (m.head.embed_dim() != m.encoder.output_dim()) throw SchemaError("head does not match encoder under " + prefix);
  return m;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& a : arrays_) {
    write_pod(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_pod(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) write_pod(os, d);
    os.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 8));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw SchemaError("not a checkpoint: " + path.string());
  Checkpoint ck;
  const auto count = read_pod<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto len = read_pod<std::uint32_t>(is, path);
    a.name.resize(len);
    is.read(a.name.data(), len);
    const auto rank = read_pod<std::uint32_t>(is, path);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      a.shape.push_back(read_pod<std::uint64_t>(is, path));
      n *= a.shape.back();
    }
    if (n > (std::uint64_t{1} << 32)) throw SchemaError("implausible array size in " + path.string());
    a.values.resize(n);
    is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(n * 8));
    if (!is) throw SchemaError("truncated checkpoint " + path.string());
    ck.arrays_.push_back(std::move(a));
  }
  return ck;
}

}  // namespace customkd
