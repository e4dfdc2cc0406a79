#include "imotion/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "imotion/error.hpp"

namespace imotion {

namespace {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::size_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

const Tensor& TensorFile::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatVersionMismatch("missing tensor '" + name + "'");
}

void TensorFile::add(std::string name, std::vector<std::size_t> shape, std::vector<double> data) {
  Tensor t{std::move(name), std::move(shape), std::move(data)};
  if (t.numel() != t.data.size()) throw ShapeMismatch("tensor '" + t.name + "' shape does not match data");
  tensors.push_back(std::move(t));
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  nlohmann::ordered_json header = file.header;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& t : file.tensors) list.push_back({{"name", t.name}, {"shape", t.shape}});
  header["tensors"] = std::move(list);
  const std::string text = header.dump(1);

  std::string out(kTensorMagic, 6);
  put_le<std::uint32_t>(out, kTensorSchemaVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& t : file.tensors) {
    for (double d : t.data) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();

  if (n < 6 || std::memcmp(p, kTensorMagic, 6) != 0) {
    throw FormatVersionMismatch("'" + path.string() + "' is not an IMINR1 container");
  }
  if (n < 18) throw IoError("'" + path.string() + "' is truncated");
  const auto version = get_le<std::uint32_t>(p + 6);
  if (version != kTensorSchemaVersion) {
    throw FormatVersionMismatch("schema version " + std::to_string(version) + ", expected " +
                                std::to_string(kTensorSchemaVersion));
  }
  const auto header_len = get_le<std::uint64_t>(p + 10);
  if (header_len > n - 18) throw IoError("'" + path.string() + "' is truncated in header");

  TensorFile file;
  try {
    file.header = nlohmann::ordered_json::parse(bytes.substr(18, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatVersionMismatch(std::string("corrupt header: ") + e.what());
  }
  if (!file.header.contains("tensors") || !file.header["tensors"].is_array()) {
    throw FormatVersionMismatch("header has no tensor list");
  }
  std::size_t pos = 18 + header_len;
  try {
    for (const auto& entry : file.header["tensors"]) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const std::size_t count = t.numel();
      if (count > (n - pos) / 8) throw IoError("'" + path.string() + "' is truncated in tensor " + t.name);
      t.data.resize(count);
      for (std::size_t i = 0; i < count; ++i, pos += 8) {
        t.data[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + pos));
      }
      file.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatVersionMismatch(std::string("corrupt tensor list: ") + e.what());
  }
  if (pos != n) throw FormatVersionMismatch("trailing bytes after declared tensors");
  file.header.erase("tensors");
  return file;
}

}  // namespace imotion
