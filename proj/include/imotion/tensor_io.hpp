#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace imotion {

inline constexpr char kTensorMagic[] = "IMINR1";
inline constexpr std::uint32_t kTensorSchemaVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;  // row-major

  std::size_t numel() const;
};

// Container layout:
//   6 bytes  magic "IMINR1"
//   u32 LE   schema version
//   u64 LE   header byte length
//   header   JSON text; "tensors" lists {name, shape} in payload order
//   payload  f64 LE values of each tensor, row-major, in declared order
struct TensorFile {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::vector<Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  void add(std::string name, std::vector<std::size_t> shape, std::vector<double> data);
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);

// Throws IoError on unreadable or truncated input and FormatVersionMismatch
// on a bad magic string or schema version.
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace imotion
