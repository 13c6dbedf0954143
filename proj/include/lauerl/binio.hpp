#pragma once

#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lauerl::binio {

// Raw byte serialization for fixed-layout value types (plain structs and
// Eigen fixed-size matrices). Host byte order; snapshots are not a portable
// interchange format.

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& value) {
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("binio: truncated stream");
}

template <typename T>
void write_vector(std::ostream& os, const std::vector<T>& v) {
  const std::uint64_t n = v.size();
  write_pod(os, n);
  if (n) os.write(reinterpret_cast<const char*>(v.data()), n * sizeof(T));
}

template <typename T>
void read_vector(std::istream& is, std::vector<T>& v) {
  std::uint64_t n = 0;
  read_pod(is, n);
  v.resize(n);
  if (n) {
    is.read(reinterpret_cast<char*>(v.data()), n * sizeof(T));
    if (!is) throw std::runtime_error("binio: truncated stream");
  }
}

inline void write_tag(std::ostream& os, const std::string& tag) {
  os.write(tag.data(), static_cast<std::streamsize>(tag.size()));
}

inline void read_tag(std::istream& is, const std::string& tag) {
  std::string got(tag.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(tag.size()));
  if (!is || got != tag) throw std::runtime_error("binio: expected tag '" + tag + "'");
}

}  // namespace lauerl::binio
