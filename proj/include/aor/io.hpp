#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aor/geometry.hpp"

namespace aor {

template <class T>
struct Image {
  int width = 0, height = 0;
  std::vector<T> pixels;

  Image() = default;
  Image(int w, int h, const T& fill = T{}) : width(w), height(h), pixels(std::size_t(w) * h, fill) {}

  T& at(int x, int y) { return pixels[std::size_t(y) * width + x]; }
  const T& at(int x, int y) const { return pixels[std::size_t(y) * width + x]; }
};

/// Marker for pixels with no depth measurement.
constexpr double kNoDepth = -1.0;

/// Binary PPM (P6), 8 bits per channel, values clamped from [0,1].
inline void write_ppm(const std::string& path, const Image<Vec3>& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(std::size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Vec3& c = img.at(x, y);
      row[3 * x + 0] = static_cast<unsigned char>(std::clamp(c.x, 0.0, 1.0) * 255.0 + 0.5);
      row[3 * x + 1] = static_cast<unsigned char>(std::clamp(c.y, 0.0, 1.0) * 255.0 + 0.5);
      row[3 * x + 2] = static_cast<unsigned char>(std::clamp(c.z, 0.0, 1.0) * 255.0 + 0.5);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

/// Flat binary depth file: magic "AORD", u32 width, u32 height, then
/// width*height little-endian float32 values in row-major order; negative
/// values mark "no measurement".
inline void write_depth(const std::string& path, const Image<double>& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_depth: cannot open " + path);
  f.write("AORD", 4);
  const std::uint32_t wh[2] = {static_cast<std::uint32_t>(img.width),
                               static_cast<std::uint32_t>(img.height)};
  f.write(reinterpret_cast<const char*>(wh), sizeof(wh));
  std::vector<float> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(img.pixels[i]);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline Image<double> read_depth(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_depth: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  std::uint32_t wh[2];
  f.read(reinterpret_cast<char*>(wh), sizeof(wh));
  Image<double> img(static_cast<int>(wh[0]), static_cast<int>(wh[1]));
  std::vector<float> data(img.pixels.size());
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("read_depth: truncated " + path);
  for (std::size_t i = 0; i < data.size(); ++i) img.pixels[i] = data[i];
  return img;
}

/// CSV sink with a documented column header. Numbers are written with 17
/// significant digits so equal files mean equal values.
class CsvWriter {
 public:
  CsvWriter() = default;
  CsvWriter(const std::string& path, const std::string& comment,
            const std::vector<std::string>& columns, bool append = false) {
    open(path, comment, columns, append);
  }

  void open(const std::string& path, const std::string& comment,
            const std::vector<std::string>& columns, bool append = false) {
    const bool exists = append && std::ifstream(path).good();
    file_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!file_) throw std::runtime_error("CsvWriter: cannot open " + path);
    if (!exists) {
      file_ << "# " << comment << "\n";
      for (std::size_t i = 0; i < columns.size(); ++i)
        file_ << columns[i] << (i + 1 < columns.size() ? "," : "\n");
    }
  }

  bool is_open() const { return file_.is_open(); }

  template <class... Ts>
  void row(const Ts&... vals) {
    std::ostringstream os;
    os << std::setprecision(17);
    bool first = true;
    ((os << (first ? "" : ",") << vals, first = false), ...);
    file_ << os.str() << "\n";
  }

  void flush() { file_.flush(); }

 private:
  std::ofstream file_;
};

}  // namespace aor
