#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "primfit/error.hpp"

namespace primfit::ply {

enum class Encoding { Ascii, BinaryLittleEndian, BinaryBigEndian };

enum class Type { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline std::size_t type_size(Type t) {
  switch (t) {
    case Type::Int8:
    case Type::UInt8: return 1;
    case Type::Int16:
    case Type::UInt16: return 2;
    case Type::Int32:
    case Type::UInt32:
    case Type::Float32: return 4;
    case Type::Float64: return 8;
  }
  return 0;
}

inline bool parse_type(const std::string& s, Type& out) {
  static const std::pair<const char*, Type> table[] = {
      {"char", Type::Int8},     {"int8", Type::Int8},       {"uchar", Type::UInt8},   {"uint8", Type::UInt8},
      {"short", Type::Int16},   {"int16", Type::Int16},     {"ushort", Type::UInt16}, {"uint16", Type::UInt16},
      {"int", Type::Int32},     {"int32", Type::Int32},     {"uint", Type::UInt32},   {"uint32", Type::UInt32},
      {"float", Type::Float32}, {"float32", Type::Float32}, {"double", Type::Float64}, {"float64", Type::Float64},
  };
  for (const auto& [name, t] : table)
    if (s == name) {
      out = t;
      return true;
    }
  return false;
}

inline const char* type_name(Type t) {
  switch (t) {
    case Type::Int8: return "char";
    case Type::UInt8: return "uchar";
    case Type::Int16: return "short";
    case Type::UInt16: return "ushort";
    case Type::Int32: return "int";
    case Type::UInt32: return "uint";
    case Type::Float32: return "float";
    case Type::Float64: return "double";
  }
  return "?";
}

struct Property {
  std::string name;
  Type type = Type::Float32;
  bool is_list = false;
  Type count_type = Type::UInt8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;

  int index_of(const std::string& prop) const {
    for (std::size_t i = 0; i < properties.size(); ++i)
      if (properties[i].name == prop) return static_cast<int>(i);
    return -1;
  }
};

struct Header {
  Encoding encoding = Encoding::Ascii;
  std::vector<Element> elements;
  std::vector<std::string> comments;

  const Element* find(const std::string& name) const {
    for (const auto& e : elements)
      if (e.name == name) return &e;
    return nullptr;
  }
};

/// One element row: scalar property p in values[p], list property p in lists[p].
struct Row {
  std::vector<double> values;
  std::vector<std::vector<double>> lists;
};

namespace detail {

template <typename T>
T read_raw(std::istream& in, bool swap) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (swap) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline double read_binary(std::istream& in, Type t, bool swap) {
  switch (t) {
    case Type::Int8: return read_raw<std::int8_t>(in, swap);
    case Type::UInt8: return read_raw<std::uint8_t>(in, swap);
    case Type::Int16: return read_raw<std::int16_t>(in, swap);
    case Type::UInt16: return read_raw<std::uint16_t>(in, swap);
    case Type::Int32: return read_raw<std::int32_t>(in, swap);
    case Type::UInt32: return read_raw<std::uint32_t>(in, swap);
    case Type::Float32: return read_raw<float>(in, swap);
    case Type::Float64: return read_raw<double>(in, swap);
  }
  return 0.0;
}

template <typename T>
void write_raw(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "binary PLY writer assumes a little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

}  // namespace detail

/// Shortest decimal text that reads back to the same float.
inline std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Writes one scalar in the given type and encoding (ASCII values are not separated here).
inline void write_value(std::ostream& out, Type t, double v, Encoding enc) {
  if (enc == Encoding::Ascii) {
    switch (t) {
      case Type::Float32: out << format_float(static_cast<float>(v)); break;
      case Type::Float64: out << format_double(v); break;
      default: out << static_cast<long long>(v); break;
    }
    return;
  }
  if (enc != Encoding::BinaryLittleEndian) fail(ErrorCode::InvalidArgument, "only little-endian binary PLY is written");
  switch (t) {
    case Type::Int8: detail::write_raw(out, static_cast<std::int8_t>(v)); break;
    case Type::UInt8: detail::write_raw(out, static_cast<std::uint8_t>(v)); break;
    case Type::Int16: detail::write_raw(out, static_cast<std::int16_t>(v)); break;
    case Type::UInt16: detail::write_raw(out, static_cast<std::uint16_t>(v)); break;
    case Type::Int32: detail::write_raw(out, static_cast<std::int32_t>(v)); break;
    case Type::UInt32: detail::write_raw(out, static_cast<std::uint32_t>(v)); break;
    case Type::Float32: detail::write_raw(out, static_cast<float>(v)); break;
    case Type::Float64: detail::write_raw(out, v); break;
  }
}

inline void write_header(std::ostream& out, const Header& h) {
  out << "ply\n";
  switch (h.encoding) {
    case Encoding::Ascii: out << "format ascii 1.0\n"; break;
    case Encoding::BinaryLittleEndian: out << "format binary_little_endian 1.0\n"; break;
    case Encoding::BinaryBigEndian: out << "format binary_big_endian 1.0\n"; break;
  }
  for (const auto& c : h.comments) out << "comment " << c << "\n";
  for (const auto& e : h.elements) {
    out << "element " << e.name << " " << e.count << "\n";
    for (const auto& p : e.properties) {
      if (p.is_list)
        out << "property list " << type_name(p.count_type) << " " << type_name(p.type) << " " << p.name << "\n";
      else
        out << "property " << type_name(p.type) << " " << p.name << "\n";
    }
  }
  out << "end_header\n";
}

/// Streaming PLY reader. Parse errors carry the source name and either the
/// line number (ASCII) or the element row (binary).
class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) { parse_header(); }

  const Header& header() const { return header_; }

  /// Calls on_row(element_index, row_index, row) for every row in file order.
  void read(const std::function<void(std::size_t, std::size_t, const Row&)>& on_row) {
    const bool swap = header_.encoding == Encoding::BinaryBigEndian;
    Row row;
    for (std::size_t e = 0; e < header_.elements.size(); ++e) {
      const auto& el = header_.elements[e];
      row.values.assign(el.properties.size(), 0.0);
      row.lists.assign(el.properties.size(), {});
      for (std::size_t r = 0; r < el.count; ++r) {
        if (header_.encoding == Encoding::Ascii)
          read_ascii_row(el, r, row);
        else
          read_binary_row(el, r, row, swap);
        on_row(e, r, row);
      }
    }
  }

  [[noreturn]] void error_at_row(const Element& el, std::size_t r, const std::string& what) const {
    std::string where = source_ + ": " + el.name + " " + std::to_string(r);
    if (header_.encoding == Encoding::Ascii) where += " (line " + std::to_string(line_) + ")";
    fail(ErrorCode::ParseError, where + ": " + what);
  }

 private:
  [[noreturn]] void header_error(const std::string& what) const {
    fail(ErrorCode::ParseError, source_ + ":" + std::to_string(line_) + ": " + what);
  }

  bool next_line(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  }

  void parse_header() {
    std::string line;
    if (!next_line(line) || line != "ply") header_error("missing 'ply' magic");
    bool have_format = false;
    while (true) {
      if (!next_line(line)) header_error("unexpected end of header");
      std::istringstream ss(line);
      std::string word;
      ss >> word;
      if (word == "end_header") break;
      if (word == "format") {
        std::string fmt, ver;
        ss >> fmt >> ver;
        if (fmt == "ascii") header_.encoding = Encoding::Ascii;
        else if (fmt == "binary_little_endian") header_.encoding = Encoding::BinaryLittleEndian;
        else if (fmt == "binary_big_endian") header_.encoding = Encoding::BinaryBigEndian;
        else header_error("unknown format '" + fmt + "'");
        have_format = true;
      } else if (word == "comment" || word == "obj_info") {
        std::string rest;
        std::getline(ss >> std::ws, rest);
        if (word == "comment") header_.comments.push_back(rest);
      } else if (word == "element") {
        Element el;
        long long count = -1;
        ss >> el.name >> count;
        if (el.name.empty() || count < 0) header_error("malformed element line");
        el.count = static_cast<std::size_t>(count);
        header_.elements.push_back(std::move(el));
      } else if (word == "property") {
        if (header_.elements.empty()) header_error("property before any element");
        Property p;
        std::string t;
        ss >> t;
        if (t == "list") {
          std::string ct, vt;
          ss >> ct >> vt >> p.name;
          p.is_list = true;
          if (!parse_type(ct, p.count_type) || !parse_type(vt, p.type)) header_error("unknown list property type");
        } else {
          ss >> p.name;
          if (!parse_type(t, p.type)) header_error("unknown property type '" + t + "'");
        }
        if (p.name.empty()) header_error("property without a name");
        header_.elements.back().properties.push_back(std::move(p));
      } else if (!word.empty()) {
        header_error("unexpected header keyword '" + word + "'");
      }
    }
    if (!have_format) header_error("missing format line");
  }

  void read_ascii_row(const Element& el, std::size_t r, Row& row) {
    std::string line;
    do {
      if (!next_line(line)) error_at_row(el, r, "unexpected end of file");
    } while (line.find_first_not_of(" \t") == std::string::npos);
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto next_number = [&](double& out) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p >= end) error_at_row(el, r, "too few values");
      const char* start = p;
      while (p < end && *p != ' ' && *p != '\t') ++p;
      const std::string token(start, p);
      if (token == "nan" || token == "NaN" || token == "-nan") {
        out = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      if (token == "inf" || token == "-inf") {
        out = token[0] == '-' ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
        return;
      }
      auto res = std::from_chars(token.data(), token.data() + token.size(), out);
      if (res.ec != std::errc() || res.ptr != token.data() + token.size())
        error_at_row(el, r, "cannot parse value '" + token + "'");
    };
    for (std::size_t i = 0; i < el.properties.size(); ++i) {
      const auto& prop = el.properties[i];
      if (prop.is_list) {
        double n = 0;
        next_number(n);
        if (n < 0 || n != std::floor(n)) error_at_row(el, r, "bad list length");
        row.lists[i].resize(static_cast<std::size_t>(n));
        for (auto& v : row.lists[i]) next_number(v);
      } else {
        next_number(row.values[i]);
      }
    }
  }

  void read_binary_row(const Element& el, std::size_t r, Row& row, bool swap) {
    for (std::size_t i = 0; i < el.properties.size(); ++i) {
      const auto& prop = el.properties[i];
      if (prop.is_list) {
        const double n = detail::read_binary(in_, prop.count_type, swap);
        if (!in_ || n < 0) error_at_row(el, r, "truncated list");
        row.lists[i].resize(static_cast<std::size_t>(n));
        for (auto& v : row.lists[i]) v = detail::read_binary(in_, prop.type, swap);
      } else {
        row.values[i] = detail::read_binary(in_, prop.type, swap);
      }
      if (!in_) error_at_row(el, r, "unexpected end of file");
    }
  }

  std::istream& in_;
  std::string source_;
  Header header_;
  std::size_t line_ = 0;
};

}  // namespace primfit::ply
