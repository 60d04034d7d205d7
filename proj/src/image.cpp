#include "retreg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "retreg/error.hpp"

namespace retreg {

Image::Image(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::ZeroDimension, "image dims must be positive");
  if (c != 1 && c != 3) throw Error(ErrorCode::InvalidArgument, "channel count must be 1 or 3");
  pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

VesselMask::VesselMask(int w, int h, bool fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw Error(ErrorCode::ZeroDimension, "mask dims must be positive");
  values.assign(static_cast<std::size_t>(w) * h, fill ? 1 : 0);
}

std::size_t VesselMask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

GrayscaleResult to_grayscale_checked(const Image& img) {
  if (img.channels == 1) return {img, true};
  Image out(img.width, img.height, 1);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const float* p = &img.pixels[3 * i];
    out.pixels[i] = std::clamp(kLumaR * p[0] + kLumaG * p[1] + kLumaB * p[2], 0.0f, 1.0f);
  }
  return {std::move(out), false};
}

Image to_grayscale(const Image& img) {
  if (img.channels == 1) throw Error(ErrorCode::AlreadyGrayscale, "image has a single channel");
  return to_grayscale_checked(img).image;
}

void clamp_unit(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    const std::string msg = png.message;
    png_image_free(&png);
    const bool missing = !std::filesystem::exists(path);
    throw Error(missing ? ErrorCode::IoError : ErrorCode::UnsupportedFormat, path.string() + ": " + msg);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int ch = color ? 3 : 1;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": " + msg);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), ch);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, raw.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::IoError, path.string() + ": " + msg);
  }
}

VesselMask mask_from_image(const Image& img, float threshold) {
  const Image gray = to_grayscale_checked(img).image;
  VesselMask mask(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) mask.values[i] = gray.pixels[i] >= threshold ? 1 : 0;
  return mask;
}

Image mask_to_image(const VesselMask& mask) {
  Image img(mask.width, mask.height, 1);
  for (std::size_t i = 0; i < mask.values.size(); ++i) img.pixels[i] = mask.values[i] ? 1.0f : 0.0f;
  return img;
}

VesselMask read_mask_png(const std::filesystem::path& path) {
  const Image img = read_png(path);
  if (img.channels != 1) throw Error(ErrorCode::UnsupportedFormat, "vessel mask must be a 1-channel PNG");
  return mask_from_image(img, 0.5f);
}

void write_mask_png(const std::filesystem::path& path, const VesselMask& mask) {
  write_png(path, mask_to_image(mask));
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float delta = mx - mn;
  v = mx;
  s = mx > 0.0f ? delta / mx : 0.0f;
  if (delta <= 0.0f) {
    h = 0.0f;
    return;
  }
  float hh;
  if (mx == r) {
    hh = (g - b) / delta;
  } else if (mx == g) {
    hh = 2.0f + (b - r) / delta;
  } else {
    hh = 4.0f + (r - g) / delta;
  }
  hh /= 6.0f;
  if (hh < 0.0f) hh += 1.0f;
  h = hh;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int sector = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace retreg
