#include "aalr/io.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>

namespace aalr {

namespace {

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failure on " + path.string());
  return buf;
}

[[noreturn]] void bad_format(const std::filesystem::path& path, std::size_t offset,
                             const std::string& what) {
  throw format_error(path.string() + ": " + what + " at byte offset " + std::to_string(offset));
}

std::uint32_t decode_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

void encode_u32le(std::uint32_t v, unsigned char* p) {
  p[0] = v & 0xFF;
  p[1] = (v >> 8) & 0xFF;
  p[2] = (v >> 16) & 0xFF;
  p[3] = (v >> 24) & 0xFF;
}

}  // namespace

DenseTensor tensor_read(const std::filesystem::path& path) {
  const std::vector<char> buf = read_all(path);
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::size_t n = buf.size();

  if (n < 4 || std::memcmp(p, "DTEN", 4) != 0) bad_format(path, 0, "bad magic, expected \"DTEN\"");
  if (n < 5) bad_format(path, 4, "truncated before version byte");
  if (p[4] != 1) bad_format(path, 4, "unsupported version " + std::to_string(int(p[4])));
  if (n < 6) bad_format(path, 5, "truncated before dtype byte");
  if (p[5] != 1) bad_format(path, 5, "unsupported dtype " + std::to_string(int(p[5])) + ", expected 1 (f32)");
  if (n < 7) bad_format(path, 6, "truncated before ndim byte");
  const std::size_t ndim = p[6];
  if (ndim == 0) bad_format(path, 6, "ndim must be positive");

  std::size_t off = 7;
  std::vector<std::size_t> dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i, off += 4) {
    if (n < off + 4) bad_format(path, off, "truncated inside dims");
    const std::uint32_t d = decode_u32le(p + off);
    if (d == 0) bad_format(path, off, "zero dimension");
    dims[i] = d;
  }

  const std::size_t count = checked_volume(dims);
  if (count > (n - off) / 4 || n - off != count * 4)
    bad_format(path, off, "payload size mismatch, expected " + std::to_string(count * 4) +
                              " bytes, got " + std::to_string(n - off));

  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i, off += 4)
    data[i] = std::bit_cast<float>(decode_u32le(p + off));

  DenseTensor t(std::move(dims), std::move(data));
  t.check_finite("tensor " + path.string());
  return t;
}

void tensor_write(const DenseTensor& t, const std::filesystem::path& path) {
  const std::size_t count = checked_volume(t.dims);
  if (count != t.data.size()) throw validation_error("tensor payload size does not match dims");
  if (t.dims.size() > 255) throw validation_error("tensor rank exceeds format limit of 255");
  for (std::size_t d : t.dims)
    if (d > 0xFFFFFFFFull) throw validation_error("tensor dimension exceeds u32");
  t.check_finite("tensor");

  std::vector<unsigned char> buf;
  buf.reserve(7 + 4 * t.dims.size() + 4 * count);
  buf.insert(buf.end(), {'D', 'T', 'E', 'N', 1, 1, static_cast<unsigned char>(t.dims.size())});
  unsigned char scratch[4];
  for (std::size_t d : t.dims) {
    encode_u32le(static_cast<std::uint32_t>(d), scratch);
    buf.insert(buf.end(), scratch, scratch + 4);
  }
  for (float v : t.data) {
    encode_u32le(std::bit_cast<std::uint32_t>(v), scratch);
    buf.insert(buf.end(), scratch, scratch + 4);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error("write failure on " + path.string());
}

namespace {

// PGM header token: skips whitespace and '#' comment lines.
std::string pgm_token(const std::vector<char>& buf, std::size_t& off,
                      const std::filesystem::path& path) {
  const std::size_t n = buf.size();
  while (off < n) {
    const char c = buf[off];
    if (c == '#') {
      while (off < n && buf[off] != '\n') ++off;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++off;
    } else {
      break;
    }
  }
  if (off >= n) bad_format(path, off, "truncated PGM header");
  std::string tok;
  while (off < n && !std::isspace(static_cast<unsigned char>(buf[off])) && buf[off] != '#')
    tok.push_back(buf[off++]);
  return tok;
}

std::size_t pgm_number(const std::vector<char>& buf, std::size_t& off,
                       const std::filesystem::path& path, const char* field) {
  const std::size_t at = off;
  const std::string tok = pgm_token(buf, off, path);
  for (char c : tok)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      bad_format(path, at, std::string("non-numeric ") + field + " \"" + tok + "\"");
  if (tok.empty() || tok.size() > 9) bad_format(path, at, std::string("bad ") + field);
  return std::stoul(tok);
}

}  // namespace

LabelMap labelmap_read_pgm(const std::filesystem::path& path) {
  const std::vector<char> buf = read_all(path);
  std::size_t off = 0;
  const std::string magic = pgm_token(buf, off, path);
  if (magic != "P5")
    bad_format(path, 0, "expected binary PGM magic \"P5\", got \"" + magic + "\"");
  const std::size_t width = pgm_number(buf, off, path, "width");
  const std::size_t height = pgm_number(buf, off, path, "height");
  const std::size_t maxval_at = off;
  const std::size_t maxval = pgm_number(buf, off, path, "maxval");
  if (maxval != 255) bad_format(path, maxval_at, "maxval must be 255, got " + std::to_string(maxval));
  if (width == 0 || height == 0) bad_format(path, 0, "zero image dimension");
  if (off >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[off])))
    bad_format(path, off, "missing whitespace after maxval");
  ++off;
  const std::size_t count = width * height;
  if (buf.size() - off != count)
    bad_format(path, off, "pixel payload size mismatch, expected " + std::to_string(count) +
                              " bytes, got " + std::to_string(buf.size() - off));
  LabelMap map(height, width);
  std::memcpy(map.labels.data(), buf.data() + off, count);
  return map;
}

void labelmap_write_pgm(const LabelMap& map, const std::filesystem::path& path) {
  if (map.height == 0 || map.width == 0 || map.labels.size() != map.pixels())
    throw validation_error("label map is empty or inconsistent");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << map.width << " " << map.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(map.labels.data()),
            static_cast<std::streamsize>(map.labels.size()));
  if (!out) throw io_error("write failure on " + path.string());
}

}  // namespace aalr
