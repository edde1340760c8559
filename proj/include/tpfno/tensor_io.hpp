// SPDX-License-Identifier: Apache-2.0
#pragma once

/// @file tensor_io.hpp
/// DTNS binary tensor format.
///
///   offset  size  field
///   0       4     magic "DTNS"
///   4       1     version (1)
///   5       1     dtype code (0=real32, 1=real64, 2=complex64, 3=complex128)
///   6       1     ndims
///   7       9*n   per dim: label code u8, extent u64 little-endian
///   ...           values, little-endian, row-major; complex as (re, im)

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <variant>

#include "tpfno/tensor.hpp"

namespace tpfno {

using Bytes = std::vector<std::byte>;

using AnyTensor = std::variant<Tensor<float>, Tensor<double>, Tensor<std::complex<float>>, Tensor<std::complex<double>>>;

inline constexpr std::array<char, 4> kTensorMagic{'D', 'T', 'N', 'S'};
inline constexpr std::uint8_t kTensorVersion = 1;
inline constexpr std::size_t kTensorFixedHeader = 7;
inline constexpr std::size_t kTensorDimHeader = 9;

/// Total encoded size of a tensor with the given shape and dtype.
inline std::size_t encoded_size(std::span<const Dim> dims, DType dtype) {
  std::size_t elem = 0;
  switch (dtype) {
    case DType::real32: elem = 4; break;
    case DType::real64: elem = 8; break;
    case DType::complex64: elem = 8; break;
    case DType::complex128: elem = 16; break;
  }
  return kTensorFixedHeader + kTensorDimHeader * dims.size() + elem * element_count(dims);
}

namespace detail {

template <std::unsigned_integral U>
void put_le(Bytes& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

template <std::unsigned_integral U>
U get_le(const std::byte* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
  return v;
}

template <class R>
using bits_t = std::conditional_t<sizeof(R) == 4, std::uint32_t, std::uint64_t>;

template <Scalar T>
void put_value(Bytes& out, T v) {
  if constexpr (scalar_traits<T>::is_complex) {
    using R = real_t<T>;
    put_le(out, std::bit_cast<bits_t<R>>(v.real()));
    put_le(out, std::bit_cast<bits_t<R>>(v.imag()));
  } else {
    put_le(out, std::bit_cast<bits_t<T>>(v));
  }
}

template <Scalar T>
T get_value(const std::byte* p) {
  if constexpr (scalar_traits<T>::is_complex) {
    using R = real_t<T>;
    const R re = std::bit_cast<R>(get_le<bits_t<R>>(p));
    const R im = std::bit_cast<R>(get_le<bits_t<R>>(p + sizeof(R)));
    return T(re, im);
  } else {
    return std::bit_cast<T>(get_le<bits_t<T>>(p));
  }
}

struct Header {
  DType dtype;
  std::vector<Dim> dims;
  std::size_t header_bytes;
};

/// Parses the header; throws MalformedHeader / UnknownDType.
inline Header parse_header(std::span<const std::byte> buf) {
  if (buf.size() < kTensorFixedHeader) throw MalformedHeader("tensor header truncated (" + std::to_string(buf.size()) + " bytes)");
  if (std::memcmp(buf.data(), kTensorMagic.data(), 4) != 0) throw MalformedHeader("bad tensor magic");
  const auto version = std::to_integer<std::uint8_t>(buf[4]);
  if (version != kTensorVersion) throw MalformedHeader("unsupported tensor version " + std::to_string(version));
  const auto code = std::to_integer<std::uint8_t>(buf[5]);
  if (code > 3) throw UnknownDType("unknown dtype code " + std::to_string(code));
  const auto ndims = std::to_integer<std::uint8_t>(buf[6]);
  Header h{static_cast<DType>(code), {}, kTensorFixedHeader + kTensorDimHeader * ndims};
  if (buf.size() < h.header_bytes) throw MalformedHeader("tensor dim table truncated");
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::byte* p = buf.data() + kTensorFixedHeader + kTensorDimHeader * d;
    auto label = label_from_code(std::to_integer<std::uint8_t>(p[0]));
    if (!label) throw MalformedHeader("unknown dim label code " + std::to_string(std::to_integer<int>(p[0])));
    const auto extent = get_le<std::uint64_t>(p + 1);
    if (extent == 0) throw MalformedHeader("zero extent in tensor header");
    h.dims.push_back({*label, static_cast<std::size_t>(extent)});
  }
  return h;
}

template <Scalar T>
Tensor<T> decode_payload(const Header& h, std::span<const std::byte> payload) {
  const std::size_t n = element_count(h.dims);
  if (payload.size() < n * sizeof(T)) {
    throw TruncatedPayload("tensor payload has " + std::to_string(payload.size()) + " bytes, need " +
                           std::to_string(n * sizeof(T)));
  }
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = get_value<T>(payload.data() + i * sizeof(T));
  try {
    return Tensor<T>(h.dims, std::move(data));
  } catch (const DimensionMismatch& e) {
    throw MalformedHeader(e.what());
  }
}

}  // namespace detail

template <Scalar T>
Bytes encode_tensor(const Tensor<T>& x) {
  Bytes out;
  out.reserve(encoded_size(x.dims(), Tensor<T>::dtype));
  for (char ch : kTensorMagic) out.push_back(static_cast<std::byte>(ch));
  out.push_back(static_cast<std::byte>(kTensorVersion));
  out.push_back(static_cast<std::byte>(Tensor<T>::dtype));
  out.push_back(static_cast<std::byte>(x.rank()));
  for (const auto& d : x.dims()) {
    out.push_back(static_cast<std::byte>(d.label));
    detail::put_le<std::uint64_t>(out, d.extent);
  }
  for (const T& v : x.data()) detail::put_value(out, v);
  return out;
}

/// Decodes one tensor from the front of `buf`; `consumed` receives its size.
inline AnyTensor decode_tensor(std::span<const std::byte> buf, std::size_t* consumed = nullptr) {
  const auto h = detail::parse_header(buf);
  const auto payload = buf.subspan(h.header_bytes);
  if (consumed) *consumed = encoded_size(h.dims, h.dtype);
  switch (h.dtype) {
    case DType::real32: return detail::decode_payload<float>(h, payload);
    case DType::real64: return detail::decode_payload<double>(h, payload);
    case DType::complex64: return detail::decode_payload<std::complex<float>>(h, payload);
    case DType::complex128: return detail::decode_payload<std::complex<double>>(h, payload);
  }
  throw UnknownDType("unreachable dtype");
}

template <Scalar T>
Tensor<T> tensor_as(AnyTensor any) {
  if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
  throw DTypeMismatch("expected " + std::string(dtype_name(Tensor<T>::dtype)) + " tensor");
}

template <Scalar T>
Tensor<T> decode_tensor_as(std::span<const std::byte> buf) {
  return tensor_as<T>(decode_tensor(buf));
}

/// Writes the tensor to `sink` and returns the number of bytes written.
template <Scalar T>
std::size_t tensor_write(const Tensor<T>& x, std::ostream& sink) {
  const Bytes b = encode_tensor(x);
  sink.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!sink) throw Error("tensor_write: stream write failed");
  return b.size();
}

/// Reads exactly one tensor from `source`.
inline AnyTensor tensor_read(std::istream& source) {
  Bytes head(kTensorFixedHeader);
  source.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(source.gcount()));
  if (head.size() < kTensorFixedHeader) detail::parse_header(head);  // throws
  const auto ndims = std::to_integer<std::uint8_t>(head[6]);
  const std::size_t dim_bytes = kTensorDimHeader * ndims;
  head.resize(kTensorFixedHeader + dim_bytes);
  source.read(reinterpret_cast<char*>(head.data() + kTensorFixedHeader), static_cast<std::streamsize>(dim_bytes));
  head.resize(kTensorFixedHeader + static_cast<std::size_t>(source.gcount()));
  const auto h = detail::parse_header(head);
  const std::size_t payload_bytes = encoded_size(h.dims, h.dtype) - h.header_bytes;
  Bytes payload(payload_bytes);
  source.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
  payload.resize(static_cast<std::size_t>(source.gcount()));
  switch (h.dtype) {
    case DType::real32: return detail::decode_payload<float>(h, payload);
    case DType::real64: return detail::decode_payload<double>(h, payload);
    case DType::complex64: return detail::decode_payload<std::complex<float>>(h, payload);
    case DType::complex128: return detail::decode_payload<std::complex<double>>(h, payload);
  }
  throw UnknownDType("unreachable dtype");
}

template <Scalar T>
void save_tensor(const Tensor<T>& x, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  tensor_write(x, f);
}

template <Scalar T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return tensor_as<T>(tensor_read(f));
}

}  // namespace tpfno
