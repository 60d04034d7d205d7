#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace retreg {

/// Interleaved float image, values in [0,1], 1 or 3 channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f);

  float& at(int x, int y, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

struct VesselMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  VesselMask() = default;
  VesselMask(int w, int h, bool fill = false);

  bool at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;

  bool operator==(const VesselMask&) const = default;
};

// BT.601 luma weights.
inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

struct GrayscaleResult {
  Image image;
  bool passthrough = false;  // input already had a single channel
};

/// Throws AlreadyGrayscale for 1-channel input.
Image to_grayscale(const Image& img);
/// Non-throwing variant: 1-channel input is returned unchanged and flagged.
GrayscaleResult to_grayscale_checked(const Image& img);

/// Clamps every sample into [0,1].
void clamp_unit(Image& img);

/// Reads a PNG as 8-bit samples. Gray files give 1 channel, color files 3;
/// alpha is composited away by libpng.
Image read_png(const std::filesystem::path& path);
/// Writes an 8-bit PNG (values are clamped and rounded).
void write_png(const std::filesystem::path& path, const Image& img);

VesselMask mask_from_image(const Image& img, float threshold = 0.5f);
Image mask_to_image(const VesselMask& mask);
VesselMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const VesselMask& mask);

// RGB <-> HSV on [0,1]^3, hue expressed as a fraction of the circle.
void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);

}  // namespace retreg
