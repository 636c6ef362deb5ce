#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "heat/matrix.hpp"
#include "heat/sha256.hpp"

namespace heat {

using json = nlohmann::json;

// Error raised for malformed artifact files (bad magic, truncated payload,
// checksum mismatch, header/payload size disagreement).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// On-disk artifacts share one envelope: a single JSON header line terminated
// by '\n', followed by raw little-endian 32-bit floats in header-declared
// order. Multi-dimensional arrays are row-major.
//
// Little-endian hosts write payload memory directly; the format is
// byte-exact by construction.

inline void append_f32(std::vector<char>& out, const float* p, std::size_t n) {
  static_assert(sizeof(float) == 4);
  std::size_t off = out.size();
  out.resize(off + 4 * n);
  std::memcpy(out.data() + off, p, 4 * n);
}

template <class S>
void append_mat_f32(std::vector<char>& out, const Mat<S>& m) {
  if constexpr (std::is_same_v<S, float>) {
    append_f32(out, m.data(), static_cast<std::size_t>(m.size()));
  } else {
    Matf f = m.template cast<float>();
    append_f32(out, f.data(), static_cast<std::size_t>(f.size()));
  }
}

inline void read_f32(const std::vector<char>& buf, std::size_t& off, float* p, std::size_t n) {
  if (off + 4 * n > buf.size()) throw FormatError("truncated float payload");
  std::memcpy(p, buf.data() + off, 4 * n);
  off += 4 * n;
}

template <class S>
Mat<S> read_mat_f32(const std::vector<char>& buf, std::size_t& off, Eigen::Index rows,
                    Eigen::Index cols) {
  Matf f(rows, cols);
  read_f32(buf, off, f.data(), static_cast<std::size_t>(f.size()));
  return f.cast<S>();
}

inline void write_file(const std::filesystem::path& path, const std::string& header_line,
                       const std::vector<char>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << header_line << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

struct HeaderAndPayload {
  json header;
  std::vector<char> payload;
};

inline std::vector<char> read_all_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  in.seekg(0, std::ios::end);
  auto n = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> buf(n);
  in.read(buf.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError("read failed: " + path.string());
  return buf;
}

// Splits a header-line + payload file. Validates JSON but nothing else.
inline HeaderAndPayload read_header_file(const std::filesystem::path& path) {
  std::vector<char> buf = read_all_bytes(path);
  auto nl = std::find(buf.begin(), buf.end(), '\n');
  if (nl == buf.end()) throw FormatError("missing header line: " + path.string());
  std::string header_str(buf.begin(), nl);
  HeaderAndPayload hp;
  try {
    hp.header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad header json: ") + e.what());
  }
  hp.payload.assign(nl + 1, buf.end());
  return hp;
}

inline std::string file_sha256(const std::filesystem::path& path) {
  return sha256_hex(read_all_bytes(path));
}

}  // namespace heat
