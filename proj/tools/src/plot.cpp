#include "d2ip_cli/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include <png.h>

#include "d2ip/error.hpp"

namespace d2ip::cli {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr int kWidth = 760;
constexpr int kHeight = 460;
constexpr int kLeft = 80;
constexpr int kRight = 200;
constexpr int kTop = 40;
constexpr int kBottom = 56;

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrid{225, 225, 225};
constexpr std::array<Rgb, 8> kPalette{{{31, 119, 180},
                                       {255, 127, 14},
                                       {44, 160, 44},
                                       {214, 39, 40},
                                       {148, 103, 189},
                                       {140, 86, 75},
                                       {227, 119, 194},
                                       {127, 127, 127}}};

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> glyphs{
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
    {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'?', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04}},  };
  return glyphs;
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int e = dx + dy;
    for (;;) {
      for (int a = 0; a < thickness; ++a) {
        for (int b = 0; b < thickness; ++b) set(x0 + a, y0 + b, c);
      }
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * e;
      if (e2 >= dy) {
        e += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        e += dx;
        y0 += sy;
      }
    }
  }

  void text(int x, int y, const std::string& s, Rgb c, int scale = 1) {
    const auto& glyphs = font();
    for (char ch : s) {
      auto it = glyphs.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
      if (it == glyphs.end()) it = glyphs.find('?');
      for (int r = 0; r < 7; ++r) {
        for (int col = 0; col < 5; ++col) {
          if (it->second[r] & (0x10 >> col)) {
            for (int a = 0; a < scale; ++a) {
              for (int b = 0; b < scale; ++b) set(x + col * scale + a, y + r * scale + b, c);
            }
          }
        }
      }
      x += 6 * scale;
    }
  }

  // Text rotated by 90 degrees counterclockwise, reading bottom to top.
  void text_vertical(int x, int y, const std::string& s, Rgb c) {
    const auto& glyphs = font();
    for (char ch : s) {
      auto it = glyphs.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
      if (it == glyphs.end()) it = glyphs.find('?');
      for (int r = 0; r < 7; ++r) {
        for (int col = 0; col < 5; ++col) {
          if (it->second[r] & (0x10 >> col)) set(x + r, y - col, c);
        }
      }
      y -= 6;
    }
  }

  static int text_width(const std::string& s, int scale = 1) {
    return static_cast<int>(s.size()) * 6 * scale;
  }

  void save(const std::filesystem::path& path) const {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(f);
      throw IoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h_; ++y) {
      png_write_row(png, &px_[static_cast<std::size_t>(y) * w_ * 3]);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(f) != 0) throw IoError("write failed: " + path.string());
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

std::string tick_label(double v) {
  if (std::abs(v) < 1e-12) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Roughly `target` evenly spaced round values covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  const double span = hi - lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= target + 1) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) {
    ticks.push_back(t);
  }
  return ticks;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return !(lo <= hi); }
  void widen() {
    if (empty()) {
      lo = 0.0;
      hi = 1.0;
    } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
      lo -= 0.5 * std::max(1.0, std::abs(lo)) * 0.1;
      hi += 0.5 * std::max(1.0, std::abs(hi)) * 0.1;
    }
  }
};

}  // namespace

void write_line_plot(const std::filesystem::path& path, const PlotSpec& spec,
                     std::span<const Series> series) {
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_y || y > 0.0);
  };

  Range xr, yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("plot series '" + s.label + "': x/y size");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      xr.add(s.x[i]);
      yr.add(ty(s.y[i]));
    }
  }
  xr.widen();
  yr.widen();
  const double pad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= pad;
  yr.hi += pad;

  const int x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  auto px = [&](double x) {
    return x0 + static_cast<int>(std::lround((x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0)));
  };
  auto py = [&](double y) {
    return y0 - static_cast<int>(std::lround((y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1)));
  };

  Canvas c(kWidth, kHeight);
  for (double t : nice_ticks(xr.lo, xr.hi)) {
    const int x = px(t);
    c.line(x, y0, x, y1, kGrid);
    c.line(x, y0, x, y0 + 4, kBlack);
    const std::string label = tick_label(t);
    c.text(x - Canvas::text_width(label) / 2, y0 + 8, label, kBlack);
  }
  for (double t : nice_ticks(yr.lo, yr.hi)) {
    const int y = py(t);
    c.line(x0, y, x1, y, kGrid);
    c.line(x0 - 4, y, x0, y, kBlack);
    const std::string label = tick_label(spec.log_y ? std::pow(10.0, t) : t);
    c.text(x0 - 8 - Canvas::text_width(label), y - 3, label, kBlack);
  }
  c.line(x0, y0, x1, y0, kBlack);
  c.line(x0, y0, x0, y1, kBlack);

  c.text(x0 + (x1 - x0 - Canvas::text_width(spec.title, 2)) / 2, 12, spec.title, kBlack, 2);
  c.text(x0 + (x1 - x0 - Canvas::text_width(spec.x_label)) / 2, kHeight - 20, spec.x_label,
         kBlack);
  const std::string ylab = spec.log_y ? spec.y_label + " (log)" : spec.y_label;
  c.text_vertical(12, y0 - (y0 - y1 - Canvas::text_width(ylab)) / 2, ylab, kBlack);

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb color = kPalette[k % kPalette.size()];
    bool have_prev = false;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = px(s.x[i]);
      const int y = py(ty(s.y[i]));
      if (have_prev) {
        if (spec.step) {
          c.line(prev_x, prev_y, x, prev_y, color, 2);
          c.line(x, prev_y, x, y, color, 2);
        } else {
          c.line(prev_x, prev_y, x, y, color, 2);
        }
      } else {
        c.line(x - 1, y, x + 1, y, color, 2);
      }
      have_prev = true;
      prev_x = x;
      prev_y = y;
    }
    const int ly = y1 + 6 + static_cast<int>(k) * 14;
    c.line(x1 + 12, ly + 3, x1 + 30, ly + 3, color, 2);
    c.text(x1 + 36, ly, s.label.substr(0, 25), kBlack);
  }
  c.save(path);
}

}  // namespace d2ip::cli
