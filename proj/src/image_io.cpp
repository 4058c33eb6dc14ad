#include "magic/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include "magic/util.hpp"

namespace magic {

namespace {

std::string lower_ext(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

float srgb_to_linear(float v) {
  return v <= 0.04045f ? v / 12.92f : std::pow((v + 0.055f) / 1.055f, 2.4f);
}

std::uint16_t to_u16(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint16_t>(std::floor(c * 65535.0 + 0.5));
}

struct PngReadState {
  const std::string* bytes;
  std::size_t pos;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + n > st->bytes->size()) png_error(png, "unexpected end of data");
  std::memcpy(out, st->bytes->data() + st->pos, n);
  st->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_cb(png_structp) {}

struct PngError {
  std::string message;
};

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  err->message = msg;
  png_longjmp(png, 1);
}
void png_warning_cb(png_structp, png_const_charp) {}

Tensor<float> decode_png(const std::string& bytes, const std::string& path) {
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  if (png == nullptr) throw InternalError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngReadState st{&bytes, 0};
  std::vector<unsigned char> data;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int channels = 0, bytes_per = 1;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError(path + ": PNG: " + err.message);
  }
  png_set_read_fn(png, &st, png_read_cb);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  {
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);
  }
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  bytes_per = png_get_bit_depth(png, info) == 16 ? 2 : 1;
  data.resize(png_get_rowbytes(png, info) * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + y * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<float> out(Shape{1, channels, static_cast<int>(h), static_cast<int>(w)});
  const float scale = bytes_per == 2 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const unsigned char* p = rows[y] + (static_cast<std::size_t>(x) * channels + c) * bytes_per;
        const unsigned v = bytes_per == 2 ? static_cast<unsigned>(p[0] | (p[1] << 8)) : p[0];
        out.at(0, c, static_cast<int>(y), static_cast<int>(x)) = static_cast<float>(v) * scale;
      }
  return out;
}

Tensor<float> decode_pnm(const std::string& bytes, const std::string& path) {
  std::istringstream is(bytes);
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5") throw InputError(path + ": only binary PPM (P6) / PGM (P5) are supported");
  auto next_int = [&]() {
    for (;;) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string comment;
        std::getline(is, comment);
        continue;
      }
      long v = -1;
      is >> v;
      if (!is || v <= 0) throw InputError(path + ": malformed PNM header");
      return v;
    }
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (maxval > 65535) throw InputError(path + ": PNM maxval above 65535");
  is.get();
  const int channels = magic == "P6" ? 3 : 1;
  const int bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels * bytes_per;
  const std::size_t start = static_cast<std::size_t>(is.tellg());
  if (bytes.size() < start + need) throw InputError(path + ": truncated PNM data");
  Tensor<float> out(Shape{1, channels, static_cast<int>(h), static_cast<int>(w)});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const unsigned v = bytes_per == 2 ? static_cast<unsigned>((p[0] << 8) | p[1]) : p[0];
        p += bytes_per;
        out.at(0, c, static_cast<int>(y), static_cast<int>(x)) = static_cast<float>(v) / static_cast<float>(maxval);
      }
  return out;
}

void check_writable(const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw InputError("write_image expects 1 x {1,3} x H x W, got " + to_string(s));
}

}  // namespace

Tensor<float> read_image(const std::string& path, const ImageReadOptions& opt) {
  if (!std::filesystem::exists(path)) throw NotFoundError("image '" + path + "' not found");
  const std::string bytes = read_file(path);
  Tensor<float> img;
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
    img = decode_png(bytes, path);
  } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    img = decode_pnm(bytes, path);
  } else {
    throw InputError(path + ": unsupported image extension '" + ext + "'");
  }
  if (opt.srgb_decode) img.values() = img.values().unaryExpr(&srgb_to_linear);
  return img;
}

std::string encode_png16(const Tensor<float>& image) {
  check_writable(image);
  const Shape s = image.shape();
  std::vector<unsigned char> data(static_cast<std::size_t>(s.w) * s.c * 2 * s.h);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) {
        const std::uint16_t v = to_u16(image.at(0, c, y, x));
        const std::size_t o = ((static_cast<std::size_t>(y) * s.w + x) * s.c + c) * 2;
        data[o] = static_cast<unsigned char>(v >> 8);
        data[o + 1] = static_cast<unsigned char>(v & 0xFF);
      }
  PngError err;
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  if (png == nullptr) throw InternalError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode: " + err.message);
  }
  png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 16,
               s.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(s.w) * s.c * 2;
  for (int y = 0; y < s.h; ++y) png_write_row(png, data.data() + static_cast<std::size_t>(y) * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_image(const std::string& path, const Tensor<float>& image) {
  check_writable(image);
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
    write_file_atomic(path, encode_png16(image));
    return;
  }
  if (ext != ".ppm" && ext != ".pgm" && ext != ".pnm") throw InputError(path + ": unsupported image extension '" + ext + "'");
  const Shape s = image.shape();
  std::string out = (s.c == 3 ? "P6\n" : "P5\n") + std::to_string(s.w) + " " + std::to_string(s.h) + "\n65535\n";
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) {
        const std::uint16_t v = to_u16(image.at(0, c, y, x));
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xFF));
      }
  write_file_atomic(path, out);
}

}  // namespace magic
