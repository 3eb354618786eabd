#include "ltseg/ptnsr.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ltseg/error.hpp"

namespace ltseg::ptnsr {

namespace {

constexpr std::size_t kFixedHeader = 7;  // magic + version + dtype + ndim

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype) {
  if (t.is_null()) throw Error("ptnsr: cannot encode a null tensor");
  if (t.rank() > 255) throw Error("ptnsr: rank exceeds 255");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw Error("ptnsr: dimension exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  switch (dtype) {
    case DType::F64:
      out.reserve(out.size() + 8 * t.size());
      for (double v : t.data()) put_f64(out, v);
      break;
    case DType::U8:
      out.reserve(out.size() + t.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
          throw Error("ptnsr: value " + std::to_string(v) + " at index " + std::to_string(i) +
                      " is not representable as u8");
        }
        out.push_back(static_cast<std::uint8_t>(v));
      }
      break;
    default:
      throw Error("ptnsr: unknown dtype");
  }
  return out;
}

Tensor decode(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  const auto fail = [&](const std::string& msg) -> Error {
    return Error("ptnsr: " + origin + ": " + msg);
  };
  if (bytes.size() < kFixedHeader) throw fail("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail("bad magic, expected \"PTNS\"");
  if (bytes[4] != kVersion) {
    throw fail("unsupported version " + std::to_string(bytes[4]) + ", expected 1");
  }
  const auto dtype = bytes[5];
  std::size_t elem_size = 0;
  if (dtype == static_cast<std::uint8_t>(DType::F64)) {
    elem_size = 8;
  } else if (dtype == static_cast<std::uint8_t>(DType::U8)) {
    elem_size = 1;
  } else {
    throw fail("unknown dtype " + std::to_string(dtype));
  }
  const std::size_t ndim = bytes[6];
  if (ndim == 0) throw fail("ndim must be at least 1");
  if (bytes.size() < kFixedHeader + 4 * ndim) throw fail("truncated dims");
  Shape shape(ndim);
  for (std::size_t a = 0; a < ndim; ++a) {
    shape[a] = get_u32(bytes.data() + kFixedHeader + 4 * a);
    if (shape[a] == 0) throw fail("zero dimension at axis " + std::to_string(a));
  }
  const std::size_t offset = kFixedHeader + 4 * ndim;
  const std::size_t n = shape_numel(shape);
  const std::size_t expected = offset + n * elem_size;
  if (bytes.size() < expected) {
    throw fail("truncated payload: " + std::to_string(bytes.size()) + " bytes, expected " +
               std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw fail("trailing data: " + std::to_string(bytes.size()) + " bytes, expected " +
               std::to_string(expected));
  }
  Tensor t(shape);
  auto out = t.data();
  const std::uint8_t* p = bytes.data() + offset;
  if (elem_size == 8) {
    for (std::size_t i = 0; i < n; ++i) out[i] = get_f64(p + 8 * i);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = p[i];
  }
  return t;
}

void save(const Tensor& t, const std::filesystem::path& path, DType dtype) {
  const auto bytes = encode(t, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("ptnsr: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("ptnsr: write failed for " + path.string());
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("ptnsr: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes, path.string());
}

}  // namespace ltseg::ptnsr
