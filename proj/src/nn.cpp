#include "lauerl/nn.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lauerl/checkpoint.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace lauerl::nn {

Observation random_shift(const Observation& obs, int pad, Rng& rng) {
  const int ox = rng.uniform_int(0, 2 * pad);
  const int oy = rng.uniform_int(0, 2 * pad);
  Observation out;
  shifted_copy(obs.values.data(), out.values.data(), Observation::kSize, ox, oy, pad);
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<TensorView<float>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os << kCheckpointMagic << '\n';
  for (const auto& t : tensors) os << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
  os << "payload\n";
  for (const auto& t : tensors)
    os.write(reinterpret_cast<const char*>(t.data), t.size() * sizeof(float));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace {

struct HeaderEntry {
  std::string name;
  long rows = 0, cols = 0;
};

std::vector<HeaderEntry> parse_header(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::vector<HeaderEntry> entries;
  while (std::getline(is, line)) {
    if (line == "payload") return entries;
    std::istringstream ls(line);
    std::string tag;
    HeaderEntry e;
    if (!(ls >> tag >> e.name >> e.rows >> e.cols) || tag != "tensor" || e.rows < 0 || e.cols < 0)
      throw std::runtime_error("checkpoint: malformed header line '" + line + "' in " + path);
    entries.push_back(std::move(e));
  }
  throw std::runtime_error("checkpoint: missing payload marker in " + path);
}

}  // namespace

void load_checkpoint(const std::string& path, const std::vector<TensorView<float>>& tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  const auto entries = parse_header(is, path);
  if (entries.size() != tensors.size())
    throw std::runtime_error("checkpoint: expected " + std::to_string(tensors.size()) +
                             " tensors, file has " + std::to_string(entries.size()));
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& e = entries[i];
    const auto& t = tensors[i];
    if (e.name != t.name || e.rows != t.rows || e.cols != t.cols)
      throw std::runtime_error("checkpoint: tensor mismatch at index " + std::to_string(i) +
                               " (file has '" + e.name + "', expected '" + t.name + "')");
    is.read(reinterpret_cast<char*>(t.data), t.size() * sizeof(float));
    if (!is) throw std::runtime_error("checkpoint: truncated payload in " + path);
  }
}

std::vector<TensorView<float>> read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  const auto entries = parse_header(is, path);
  std::vector<TensorView<float>> out;
  for (const auto& e : entries) out.push_back({e.name, nullptr, e.rows, e.cols});
  return out;
}

}  // namespace lauerl::nn
