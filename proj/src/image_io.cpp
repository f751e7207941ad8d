#include "dkn/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

namespace dkn::io {

namespace {

using Kind = IoError::Kind;

[[noreturn]] void fail(Kind kind, const std::string& msg) { throw IoError(kind, msg); }

// Next whitespace-delimited header token, skipping '#' comment lines.
std::string next_token(std::istream& in, const std::string& ctx) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF) fail(Kind::UnexpectedEof, ctx + ": unexpected end of file in header");
  while (ch != EOF && !std::isspace(ch) && ch != '#') {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  if (ch == '#') in.unget();
  return tok;
}

std::int64_t parse_dim(const std::string& tok, const std::string& ctx, const char* what) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    fail(Kind::MalformedHeader, ctx + ": malformed " + what + " '" + tok + "'");
  }
  std::int64_t v = std::strtoll(tok.c_str(), nullptr, 10);
  if (v <= 0 || v > 1 << 20) {
    fail(Kind::MalformedHeader, ctx + ": " + what + " out of range: " + tok);
  }
  return v;
}

void read_raw(std::istream& in, char* dst, std::size_t bytes, const std::string& ctx) {
  in.read(dst, static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    fail(Kind::UnexpectedEof, ctx + ": unexpected end of file in pixel data");
  }
}

Tensor read_netpbm(std::istream& in, bool color, const std::string& ctx) {
  std::int64_t w = parse_dim(next_token(in, ctx), ctx, "width");
  std::int64_t h = parse_dim(next_token(in, ctx), ctx, "height");
  std::string maxval_tok = next_token(in, ctx);
  if (maxval_tok.empty() || maxval_tok.find_first_not_of("0123456789") != std::string::npos) {
    fail(Kind::MalformedHeader, ctx + ": malformed maxval '" + maxval_tok + "'");
  }
  long maxval = std::strtol(maxval_tok.c_str(), nullptr, 10);
  if (maxval <= 0) fail(Kind::MalformedHeader, ctx + ": maxval must be positive");
  if (color && maxval > 255) fail(Kind::Unsupported, ctx + ": PPM maxval > 255 unsupported");
  if (maxval > 65535) fail(Kind::Unsupported, ctx + ": maxval > 65535 unsupported");
  // Exactly one whitespace byte separates the header from raw data (already
  // consumed by token parsing).

  std::int64_t channels = color ? 3 : 1;
  bool wide = maxval > 255;
  std::size_t count = static_cast<std::size_t>(w * h * channels);
  std::vector<unsigned char> raw(count * (wide ? 2 : 1));
  read_raw(in, reinterpret_cast<char*>(raw.data()), raw.size(), ctx);

  Tensor out(1, channels, h, w);
  float inv = 1.0f / static_cast<float>(maxval);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < channels; ++c) {
        std::size_t i = static_cast<std::size_t>((y * w + x) * channels + c);
        unsigned v = wide ? (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1]  // big-endian
                          : raw[i];
        out.at(0, c, y, x) = static_cast<float>(v) * inv;
      }
    }
  }
  return out;
}

Tensor read_pfm(std::istream& in, bool color, const std::string& ctx) {
  std::int64_t w = parse_dim(next_token(in, ctx), ctx, "width");
  std::int64_t h = parse_dim(next_token(in, ctx), ctx, "height");
  std::string scale_tok = next_token(in, ctx);
  float scale = 0.0f;
  try {
    scale = std::stof(scale_tok);
  } catch (const std::exception&) {
    fail(Kind::MalformedHeader, ctx + ": malformed PFM scale '" + scale_tok + "'");
  }
  if (scale == 0.0f) fail(Kind::MalformedHeader, ctx + ": PFM scale must be non-zero");
  bool little = scale < 0.0f;

  std::int64_t channels = color ? 3 : 1;
  std::size_t count = static_cast<std::size_t>(w * h * channels);
  std::vector<unsigned char> raw(count * 4);
  read_raw(in, reinterpret_cast<char*>(raw.data()), raw.size(), ctx);

  Tensor out(1, channels, h, w);
  for (std::int64_t row = 0; row < h; ++row) {
    std::int64_t y = h - 1 - row;  // PFM rows are stored bottom-up
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < channels; ++c) {
        std::size_t i = 4 * static_cast<std::size_t>((row * w + x) * channels + c);
        std::uint32_t bits = little
                                 ? (std::uint32_t(raw[i]) | std::uint32_t(raw[i + 1]) << 8 |
                                    std::uint32_t(raw[i + 2]) << 16 | std::uint32_t(raw[i + 3]) << 24)
                                 : (std::uint32_t(raw[i]) << 24 | std::uint32_t(raw[i + 1]) << 16 |
                                    std::uint32_t(raw[i + 2]) << 8 | std::uint32_t(raw[i + 3]));
        float v;
        std::memcpy(&v, &bits, 4);
        out.at(0, c, y, x) = v;
      }
    }
  }
  return out;
}

void check_writable(const Tensor& image, std::int64_t channels, const char* what) {
  DKN_CHECK(image.n() == 1 && image.c() == channels && image.h() >= 1 && image.w() >= 1,
            DimensionError, what, ": expected 1x", channels, "xHxW, got ", image.shape_str());
}

unsigned quantize(float v, unsigned maxval) {
  float scaled = std::clamp(v, 0.0f, 1.0f) * static_cast<float>(maxval);
  return static_cast<unsigned>(std::lround(scaled));
}

}  // namespace

Tensor read_image(std::istream& in, const std::string& context) {
  int m0 = in.get();
  int m1 = in.get();
  if (m0 == EOF || m1 == EOF) fail(Kind::UnexpectedEof, context + ": empty input");
  if (m0 == 'P' && m1 == '5') return read_netpbm(in, false, context);
  if (m0 == 'P' && m1 == '6') return read_netpbm(in, true, context);
  if (m0 == 'P' && m1 == 'f') return read_pfm(in, false, context);
  if (m0 == 'P' && m1 == 'F') return read_pfm(in, true, context);
  fail(Kind::MalformedHeader,
       context + ": unrecognized magic '" + static_cast<char>(m0) + static_cast<char>(m1) + "'");
}

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Kind::Other, "cannot open " + path);
  return read_image(in, path);
}

void write_pgm16(const Tensor& image, std::ostream& out) {
  check_writable(image, 1, "write_pgm16");
  out << "P5\n" << image.w() << " " << image.h() << "\n65535\n";
  for (std::int64_t y = 0; y < image.h(); ++y) {
    for (std::int64_t x = 0; x < image.w(); ++x) {
      unsigned v = quantize(image.at(0, 0, y, x), 65535);
      out.put(static_cast<char>(v >> 8));
      out.put(static_cast<char>(v & 0xff));
    }
  }
}

void write_pgm8(const Tensor& image, std::ostream& out) {
  check_writable(image, 1, "write_pgm8");
  out << "P5\n" << image.w() << " " << image.h() << "\n255\n";
  for (std::int64_t y = 0; y < image.h(); ++y) {
    for (std::int64_t x = 0; x < image.w(); ++x) {
      out.put(static_cast<char>(quantize(image.at(0, 0, y, x), 255)));
    }
  }
}

void write_ppm(const Tensor& image, std::ostream& out) {
  check_writable(image, 3, "write_ppm");
  out << "P6\n" << image.w() << " " << image.h() << "\n255\n";
  for (std::int64_t y = 0; y < image.h(); ++y) {
    for (std::int64_t x = 0; x < image.w(); ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        out.put(static_cast<char>(quantize(image.at(0, c, y, x), 255)));
      }
    }
  }
}

void write_pfm(const Tensor& image, std::ostream& out) {
  DKN_CHECK(image.n() == 1 && (image.c() == 1 || image.c() == 3), DimensionError,
            "write_pfm: expected 1 or 3 channels, got ", image.shape_str());
  bool color = image.c() == 3;
  out << (color ? "PF" : "Pf") << "\n" << image.w() << " " << image.h() << "\n-1.0\n";
  for (std::int64_t row = 0; row < image.h(); ++row) {
    std::int64_t y = image.h() - 1 - row;
    for (std::int64_t x = 0; x < image.w(); ++x) {
      for (std::int64_t c = 0; c < image.c(); ++c) {
        float v = image.at(0, c, y, x);
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        out.put(static_cast<char>(bits & 0xff));
        out.put(static_cast<char>((bits >> 8) & 0xff));
        out.put(static_cast<char>((bits >> 16) & 0xff));
        out.put(static_cast<char>((bits >> 24) & 0xff));
      }
    }
  }
}

void write_image(const Tensor& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Kind::Other, "cannot open " + path + " for writing");
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
  if (ext == "pgm") {
    write_pgm16(image, out);
  } else if (ext == "ppm") {
    write_ppm(image, out);
  } else if (ext == "pfm") {
    write_pfm(image, out);
  } else {
    fail(Kind::Unsupported, "write_image: unsupported extension '" + ext + "' for " + path);
  }
  if (!out) fail(Kind::Other, "write failed for " + path);
}

}  // namespace dkn::io
