#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tbfa/common.hpp"
#include "tbfa/dataset.hpp"
#include "tbfa/params.hpp"

namespace tbfa {

// On-disk dataset formats:
//   MDS1 (text):   header "MDS1 n d_c d_r", then n blocks of d_c lines with
//                  d_r numbers each, printed to 17 significant digits.
//   MDSB (binary): magic "MDSB", three little-endian u64 counts, then
//                  n*d_c*d_r little-endian IEEE-754 doubles, observation-
//                  major and row-major within an observation.
// Binary round-trips bit-exactly; text round-trips through the 17-digit
// shortest-exact representation.

// All writes go through a temp file and a rename so readers never observe a
// partial artifact.
inline void write_file_atomic(const std::string& path,
                              const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("short write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " -> " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failure: " + path);
  return ss.str();
}

// Shortest representation that parses back to the identical double.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b)
    out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline void append_f64_le(std::string& out, double v) {
  append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t read_u64_le(const std::string& bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b)
    v |= static_cast<std::uint64_t>(
             static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(b)]))
         << (8 * b);
  return v;
}

inline double read_f64_le(const std::string& bytes, std::size_t pos) {
  return std::bit_cast<double>(read_u64_le(bytes, pos));
}

inline double parse_number(std::istream& in, const char* context) {
  double v;
  if (!(in >> v)) throw UsageError(std::string("malformed number in ") + context);
  return v;
}

}  // namespace detail

inline void write_dataset_text(const std::string& path,
                               const MatrixDataset& ds) {
  ds.validate();
  std::string out = "MDS1 " + std::to_string(ds.n()) + " " +
                    std::to_string(ds.d_c) + " " + std::to_string(ds.d_r) +
                    "\n";
  for (const Matrix& x : ds.observations) {
    for (Index i = 0; i < ds.d_c; ++i) {
      for (Index j = 0; j < ds.d_r; ++j) {
        if (j > 0) out += ' ';
        out += format_g17(x(i, j));
      }
      out += '\n';
    }
  }
  write_file_atomic(path, out);
}

inline void write_dataset_binary(const std::string& path,
                                 const MatrixDataset& ds) {
  ds.validate();
  std::string out = "MDSB";
  out.reserve(4 + 24 + static_cast<std::size_t>(ds.n() * ds.d_c * ds.d_r) * 8);
  detail::append_u64_le(out, static_cast<std::uint64_t>(ds.n()));
  detail::append_u64_le(out, static_cast<std::uint64_t>(ds.d_c));
  detail::append_u64_le(out, static_cast<std::uint64_t>(ds.d_r));
  for (const Matrix& x : ds.observations)
    for (Index i = 0; i < ds.d_c; ++i)
      for (Index j = 0; j < ds.d_r; ++j) detail::append_f64_le(out, x(i, j));
  write_file_atomic(path, out);
}

// Sniffs the magic and parses either format.
inline MatrixDataset read_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 4) throw UsageError("not a dataset file: " + path);
  const std::string magic = bytes.substr(0, 4);
  MatrixDataset ds;
  if (magic == "MDSB") {
    if (bytes.size() < 28) throw UsageError("truncated MDSB header: " + path);
    const std::uint64_t n = detail::read_u64_le(bytes, 4);
    const std::uint64_t d_c = detail::read_u64_le(bytes, 12);
    const std::uint64_t d_r = detail::read_u64_le(bytes, 20);
    if (n == 0 || d_c == 0 || d_r == 0 || n > (1ull << 32) ||
        d_c > (1ull << 24) || d_r > (1ull << 24))
      throw UsageError("implausible MDSB dimensions: " + path);
    const std::uint64_t want = 28 + n * d_c * d_r * 8;
    if (bytes.size() != want)
      throw UsageError("MDSB size mismatch (" + std::to_string(bytes.size()) +
                       " bytes, expected " + std::to_string(want) + "): " +
                       path);
    ds.d_c = static_cast<Index>(d_c);
    ds.d_r = static_cast<Index>(d_r);
    std::size_t pos = 28;
    ds.observations.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      Matrix x(ds.d_c, ds.d_r);
      for (Index i = 0; i < ds.d_c; ++i)
        for (Index j = 0; j < ds.d_r; ++j) {
          x(i, j) = detail::read_f64_le(bytes, pos);
          pos += 8;
        }
      ds.observations.push_back(std::move(x));
    }
  } else if (magic == "MDS1") {
    std::istringstream in(bytes);
    std::string tag;
    long long n = 0, d_c = 0, d_r = 0;
    in >> tag >> n >> d_c >> d_r;
    if (!in || n <= 0 || d_c <= 0 || d_r <= 0)
      throw UsageError("malformed MDS1 header: " + path);
    ds.d_c = static_cast<Index>(d_c);
    ds.d_r = static_cast<Index>(d_r);
    ds.observations.reserve(static_cast<std::size_t>(n));
    for (long long k = 0; k < n; ++k) {
      Matrix x(ds.d_c, ds.d_r);
      for (Index i = 0; i < ds.d_c; ++i)
        for (Index j = 0; j < ds.d_r; ++j)
          x(i, j) = detail::parse_number(in, "MDS1 body");
      ds.observations.push_back(std::move(x));
    }
    double extra;
    if (in >> extra) throw UsageError("trailing data in MDS1 file: " + path);
  } else {
    throw UsageError("unrecognized dataset magic '" + magic + "': " + path);
  }
  ds.validate();
  return ds;
}

inline void write_labels(const std::string& path,
                         const std::vector<std::string>& labels) {
  std::string out;
  for (const std::string& l : labels) out += l + "\n";
  write_file_atomic(path, out);
}

inline std::vector<std::string> read_labels(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) labels.push_back(line);
  return labels;
}

// Key-value parameter file; matrices are written row-major under a
// "name rows cols" heading.  nu is stored as "inf" for gaussian fits.
inline void write_params(const std::string& path, const TbfaParams& p) {
  p.validate();
  std::string out = "TBFA-PARAMS 1\n";
  out += "dims " + std::to_string(p.d_c()) + " " + std::to_string(p.d_r()) +
         " " + std::to_string(p.q_c()) + " " + std::to_string(p.q_r()) + "\n";
  out += std::string("nu ") + (p.gaussian ? "inf" : format_g17(p.nu)) + "\n";
  out += std::string("gaussian ") + (p.gaussian ? "1" : "0") + "\n";
  const auto block = [&out](const char* name, const Matrix& m) {
    out += std::string(name) + " " + std::to_string(m.rows()) + " " +
           std::to_string(m.cols()) + "\n";
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        if (j > 0) out += ' ';
        out += format_g17(m(i, j));
      }
      if (m.cols() > 0) out += '\n';
    }
  };
  block("W", p.W);
  block("C", p.C);
  block("psi_c", p.psi_c.transpose());
  block("R", p.R);
  block("psi_r", p.psi_r.transpose());
  write_file_atomic(path, out);
}

inline TbfaParams read_params(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (!in || tag != "TBFA-PARAMS" || version != 1)
    throw UsageError("not a parameter file: " + path);
  long long d_c = 0, d_r = 0, q_c = 0, q_r = 0;
  in >> tag >> d_c >> d_r >> q_c >> q_r;
  if (!in || tag != "dims" || d_c <= 0 || d_r <= 0 || q_c < 0 || q_r < 0)
    throw UsageError("malformed dims in parameter file: " + path);

  TbfaParams p;
  std::string nu_text;
  in >> tag >> nu_text;
  if (!in || tag != "nu")
    throw UsageError("missing nu in parameter file: " + path);
  int gaussian_flag = 0;
  in >> tag >> gaussian_flag;
  if (!in || tag != "gaussian")
    throw UsageError("missing gaussian flag in parameter file: " + path);
  p.gaussian = gaussian_flag != 0;
  if (nu_text == "inf") {
    if (!p.gaussian)
      throw UsageError("nu=inf requires the gaussian flag: " + path);
    p.nu = 10.0;  // placeholder; unused under the gaussian flag
  } else {
    try {
      p.nu = std::stod(nu_text);
    } catch (const std::exception&) {
      throw UsageError("malformed nu in parameter file: " + path);
    }
  }

  const auto block = [&in, &path](const char* name, Index rows, Index cols) {
    std::string got;
    long long r = 0, c = 0;
    in >> got >> r >> c;
    if (!in || got != name || r != rows || c != cols)
      throw UsageError(std::string("malformed ") + name +
                       " block in parameter file: " + path);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        m(i, j) = detail::parse_number(in, name);
    return m;
  };
  p.W = block("W", d_c, d_r);
  p.C = block("C", d_c, q_c);
  p.psi_c = block("psi_c", 1, d_c).transpose();
  p.R = block("R", d_r, q_r);
  p.psi_r = block("psi_r", 1, d_r).transpose();
  p.validate();
  return p;
}

}  // namespace tbfa
