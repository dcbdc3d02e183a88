#include "lip2us/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lip2us {

namespace {

constexpr const char* kMagic = "lip2us-checkpoint";

void write_le_floats(std::ostream& os, const std::vector<double>& values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ostringstream header;
  header << kMagic << " 1\n" << "tensors " << tensors.size() << '\n';
  std::size_t offset = 0;
  for (const auto& nt : tensors) {
    if (nt.name.empty() || nt.name.find_first_of(" \t\n") != std::string::npos)
      throw UsageError("checkpoint: invalid tensor name '" + nt.name + "'");
    header << nt.name << ' ' << offset << ' ' << nt.tensor.rank();
    for (auto d : nt.tensor.shape()) header << ' ' << d;
    header << '\n';
    offset += nt.tensor.numel();
  }
  header << "data " << offset << '\n';

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  const std::string h = header.str();
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& nt : tensors) write_le_floats(os, nt.tensor.to_vector());
  if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  auto bad = [&](const std::string& why) { return IoError("checkpoint " + path.string() + ": " + why); };

  std::string line;
  std::getline(is, line);
  if (line != std::string(kMagic) + " 1") throw bad("missing or unsupported header");
  std::getline(is, line);
  std::istringstream cs(line);
  std::string word;
  std::size_t count = 0;
  if (!(cs >> word >> count) || word != "tensors") throw bad("expected 'tensors <count>'");

  struct Entry {
    std::string name;
    std::size_t offset;
    Shape shape;
  };
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::getline(is, line)) throw bad("truncated manifest");
    std::istringstream ls(line);
    Entry e;
    std::size_t rank = 0;
    if (!(ls >> e.name >> e.offset >> rank)) throw bad("malformed manifest line: " + line);
    e.shape.resize(rank);
    for (auto& d : e.shape)
      if (!(ls >> d) || d == 0) throw bad("malformed shape in line: " + line);
    entries.push_back(std::move(e));
  }
  std::getline(is, line);
  std::istringstream ds(line);
  std::size_t total = 0;
  if (!(ds >> word >> total) || word != "data") throw bad("expected 'data <total>'");

  std::vector<char> raw(total * 4);
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) throw bad("truncated data section");

  std::vector<NamedTensor> out;
  for (const auto& e : entries) {
    const std::size_t n = numel_of(e.shape);
    if (e.offset + n > total) throw bad("tensor " + e.name + " exceeds data section");
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[(e.offset + i) * 4 + b])) << (8 * b);
      values[i] = std::bit_cast<float>(bits);
    }
    out.push_back({e.name, Tensor::from(e.shape, std::move(values))});
  }
  return out;
}

}  // namespace lip2us
