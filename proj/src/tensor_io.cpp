#include "tensor_io.hpp"

#include <fstream>

#include "serialize.hpp"

namespace dafe {

std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io, "cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (in.bad()) raise(ErrorCode::io, "read failed for " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorCode::io, "write failed for " + path);
}

void write_daft(const std::string& path, const Tensor& t) {
  ByteWriter w;
  w.raw("DAFT", 4);
  w.u32(kDaftVersion);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f64(v);
  write_file_bytes(path, w.bytes());
}

Tensor read_daft(const std::string& path) {
  std::vector<char> bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  r.expect_magic("DAFT");
  std::uint32_t version = r.u32();
  if (version != kDaftVersion)
    raise(ErrorCode::format, "unsupported DAFT version " + std::to_string(version) +
                                 " in " + path);
  std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8)
    raise(ErrorCode::format, "implausible DAFT rank " + std::to_string(rank));
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = r.u32();
    if (shape[i] == 0) raise(ErrorCode::format, "zero DAFT dimension");
    count *= shape[i];
  }
  if (r.remaining() != count * 8)
    raise(ErrorCode::format, "DAFT payload size mismatch at offset " +
                                 std::to_string(r.offset()) + " in " + path);
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = r.f64();
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite())
    raise(ErrorCode::format, "non-finite values in " + path);
  return t;
}

}  // namespace dafe
