#include <winmix/checkpoint.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace winmix {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::size_t dtype_size(DType d) { return d == DType::float64 ? 8 : 4; }

template <typename U> void put(std::ostream &out, U v) { out.write(reinterpret_cast<const char *>(&v), sizeof v); }

template <typename U> U get(std::istream &in) {
  U v{};
  if (!in.read(reinterpret_cast<char *>(&v), sizeof v))
    throw std::runtime_error("checkpoint truncated");
  return v;
}

std::string get_string(std::istream &in, std::size_t n) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), std::streamsize(n)))
    throw std::runtime_error("checkpoint truncated");
  return s;
}

} // namespace

template <typename T> TensorRecord TensorRecord::from(std::string name, const Tensor<T> &t) {
  TensorRecord r{std::move(name), dtype_of<T>(), t.shape(), std::vector<std::uint8_t>(t.size() * sizeof(T))};
  if (t.size() > 0)
    std::memcpy(r.bytes.data(), t.ptr(), r.bytes.size());
  return r;
}

template <typename T> Tensor<T> TensorRecord::to() const {
  if (dtype != dtype_of<T>())
    throw DimensionError("tensor '" + name + "' has a different dtype than requested");
  std::vector<T> values(numel(shape));
  if (values.size() * sizeof(T) != bytes.size())
    throw DimensionError("tensor '" + name + "' payload does not match its shape " + to_string(shape));
  if (!values.empty())
    std::memcpy(values.data(), bytes.data(), bytes.size());
  return Tensor<T>(shape, std::move(values));
}

const TensorRecord &Checkpoint::find(const std::string &name) const {
  for (const auto &t : tensors)
    if (t.name == name)
      return t;
  throw std::runtime_error("checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::string &path, const Checkpoint &ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot write " + tmp);
    out.write("WMIX", 4);
    put<std::uint32_t>(out, checkpoint_version);
    const std::string header = nlohmann::json{{"config", ckpt.config}, {"state", ckpt.state}}.dump();
    put<std::uint32_t>(out, std::uint32_t(header.size()));
    out.write(header.data(), std::streamsize(header.size()));
    for (const auto &t : ckpt.tensors) {
      put<std::uint32_t>(out, std::uint32_t(t.name.size()));
      out.write(t.name.data(), std::streamsize(t.name.size()));
      put<std::uint8_t>(out, std::uint8_t(t.dtype));
      put<std::uint8_t>(out, std::uint8_t(t.shape.size()));
      for (auto d : t.shape)
        put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char *>(t.bytes.data()), std::streamsize(t.bytes.size()));
    }
    if (!out)
      throw std::runtime_error("write failed: " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open checkpoint " + path);
  if (get_string(in, 4) != "WMIX")
    throw std::runtime_error(path + " is not a WMIX checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != checkpoint_version)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint32_t>(in);
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(get_string(in, header_len));
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.state = header.value("state", nlohmann::json::object());
  } catch (const nlohmann::json::exception &e) {
    throw std::runtime_error(std::string("bad checkpoint header: ") + e.what());
  }
  while (in.peek() != std::char_traits<char>::eof()) {
    TensorRecord t;
    t.name = get_string(in, get<std::uint32_t>(in));
    const auto dtype = get<std::uint8_t>(in);
    if (dtype > 1)
      throw std::runtime_error("tensor '" + t.name + "' has unknown dtype " + std::to_string(dtype));
    t.dtype = DType(dtype);
    const auto rank = get<std::uint8_t>(in);
    for (std::size_t i = 0; i < rank; ++i)
      t.shape.push_back(get<std::uint64_t>(in));
    t.bytes.resize(numel(t.shape) * dtype_size(t.dtype));
    if (!t.bytes.empty() && !in.read(reinterpret_cast<char *>(t.bytes.data()), std::streamsize(t.bytes.size())))
      throw std::runtime_error("checkpoint truncated in tensor '" + t.name + "'");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

template <typename T> void append_params(Checkpoint &ckpt, const ParamTable<T> &table, const std::string &prefix) {
  for (const auto &p : table)
    ckpt.tensors.push_back(TensorRecord::from(prefix + p.name, p.value));
}

template <typename T>
ParamTable<T> read_params(const Checkpoint &ckpt, const std::vector<ParamShape> &shapes, const std::string &prefix) {
  ParamTable<T> out;
  for (const auto &s : shapes) {
    Tensor<T> t = ckpt.find(prefix + s.name).to<T>();
    if (t.shape() != s.shape)
      throw DimensionError("checkpoint tensor '" + prefix + s.name + "' has shape " + to_string(t.shape()) +
                           ", expected " + to_string(s.shape));
    out.push_back({s.name, std::move(t)});
  }
  return out;
}

#define WINMIX_INSTANTIATE(T)                                                                                          \
  template TensorRecord TensorRecord::from<T>(std::string, const Tensor<T> &);                                         \
  template Tensor<T> TensorRecord::to<T>() const;                                                                      \
  template void append_params(Checkpoint &, const ParamTable<T> &, const std::string &);                               \
  template ParamTable<T> read_params(const Checkpoint &, const std::vector<ParamShape> &, const std::string &);

WINMIX_INSTANTIATE(float)
WINMIX_INSTANTIATE(double)

} // namespace winmix
