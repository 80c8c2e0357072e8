#include "scoresync/params.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>

namespace scoresync {

namespace {

struct Entry {
  std::string name;
  Shape shape;
  std::span<const double> values;
  std::span<double> target;
  std::string kind;
};

void put_f64_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

Tensor ParameterSet::add(const std::string& name, Tensor tensor) {
  for (const auto& b : buffers_) {
    if (b.name == name) throw ConfigError("duplicate parameter name: " + name);
  }
  if (index_.count(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  index_[name] = params_.size();
  tensor.set_requires_grad(true);
  params_.push_back({name, std::move(tensor)});
  return params_.back().tensor;
}

void ParameterSet::add_buffer(const std::string& name, std::vector<double>* storage) {
  if (index_.count(name) || std::any_of(buffers_.begin(), buffers_.end(),
                                        [&](const Buffer& b) { return b.name == name; })) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  buffers_.push_back({name, storage});
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].tensor;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].tensor;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<double> ParameterSet::snapshot() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& p : params_) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  for (const auto& b : buffers_) out.insert(out.end(), b.storage->begin(), b.storage->end());
  return out;
}

void ParameterSet::restore(const std::vector<double>& values) {
  std::size_t expected = parameter_count();
  for (const auto& b : buffers_) expected += b.storage->size();
  if (values.size() != expected) throw DimensionError("restore: snapshot size mismatch");
  auto src = values.begin();
  for (auto& p : params_) {
    auto dst = p.tensor.mutable_data();
    std::copy_n(src, dst.size(), dst.begin());
    src += static_cast<std::ptrdiff_t>(dst.size());
  }
  for (auto& b : buffers_) {
    std::copy_n(src, b.storage->size(), b.storage->begin());
    src += static_cast<std::ptrdiff_t>(b.storage->size());
  }
}

nlohmann::json ParameterSet::write_binary(const std::filesystem::path& bin_path) const {
  std::vector<std::pair<std::string, std::pair<Shape, std::span<const double>>>> items;
  std::vector<std::string> kinds;
  for (const auto& p : params_) items.push_back({p.name, {p.tensor.shape(), p.tensor.data()}});
  for (const auto& b : buffers_) {
    items.push_back({b.name, {Shape{b.storage->size()}, std::span<const double>(*b.storage)}});
  }
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].first < items[b].first; });

  std::ofstream os(bin_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + bin_path.string() + " for writing");
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i : order) {
    const auto& [name, payload] = items[i];
    for (double v : payload.second) put_f64_le(os, v);
    entries.push_back({{"name", name},
                       {"shape", payload.first},
                       {"offset", offset},
                       {"kind", i < params_.size() ? "param" : "buffer"}});
    offset += payload.second.size() * sizeof(double);
  }
  if (!os) throw IoError("write failed: " + bin_path.string());
  return entries;
}

void ParameterSet::read_binary(const std::filesystem::path& bin_path, const nlohmann::json& entries) {
  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw IoError("cannot open " + bin_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : entries) by_name[e.at("name").get<std::string>()] = &e;

  auto load = [&](const std::string& name, const Shape& shape, std::span<double> dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint is missing tensor " + name);
    const auto& e = *it->second;
    if (e.at("shape").get<Shape>() != shape) {
      throw DimensionError("checkpoint tensor " + name + " has shape " +
                           shape_to_string(e.at("shape").get<Shape>()) + ", expected " + shape_to_string(shape));
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (offset + dst.size() * sizeof(double) > bytes.size()) throw IoError("checkpoint truncated at " + name);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f64_le(bytes.data() + offset + 8 * i);
  };
  for (auto& p : params_) load(p.name, p.tensor.shape(), p.tensor.mutable_data());
  for (auto& b : buffers_) load(b.name, Shape{b.storage->size()}, std::span<double>(*b.storage));
  if (by_name.size() != params_.size() + buffers_.size()) throw IoError("checkpoint has unexpected tensors");
}

}  // namespace scoresync
