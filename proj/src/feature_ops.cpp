#include "avscnet/feature_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace avscnet {

FeatureMap::FeatureMap(int c_, int h_, int w_, double fill)
    : c(c_), h(h_), w(w_) {
  if (c < 0 || h <= 0 || w <= 0) {
    throw std::invalid_argument("FeatureMap: non-positive dimensions");
  }
  data.assign(static_cast<std::size_t>(c) * h * w, fill);
}

bool FeatureMap::valid() const {
  if (c < 0 || h <= 0 || w <= 0) return false;
  if (data.size() != static_cast<std::size_t>(c) * h * w) return false;
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

int conv_out_size(int w_in, int k, int s, int p) {
  if (w_in < 1 || k < 1 || s < 1 || p < 0) {
    throw std::invalid_argument("conv_out_size: arguments out of range");
  }
  if (w_in + 2 * p < k) {
    throw std::invalid_argument("conv_out_size: kernel larger than padded input");
  }
  return (w_in + 2 * p - k) / s + 1;
}

BilinearSupport bilinear_support(const FeatureMap& map, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw std::invalid_argument("bilinear_support: non-finite coordinates");
  }
  x = std::clamp(x, 0.0, static_cast<double>(map.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(map.h - 1));
  BilinearSupport s;
  s.x0 = std::min(static_cast<int>(std::floor(x)), map.w - 1);
  s.y0 = std::min(static_cast<int>(std::floor(y)), map.h - 1);
  s.x1 = std::min(s.x0 + 1, map.w - 1);
  s.y1 = std::min(s.y0 + 1, map.h - 1);
  const double u = x - s.x0;
  const double v = y - s.y0;
  s.w00 = (1.0 - u) * (1.0 - v);
  s.w10 = u * (1.0 - v);
  s.w01 = (1.0 - u) * v;
  s.w11 = u * v;
  return s;
}

std::vector<double> bilinear_sample(const FeatureMap& map, double x, double y) {
  const BilinearSupport s = bilinear_support(map, x, y);
  std::vector<double> out(map.c);
  for (int ch = 0; ch < map.c; ++ch) {
    out[ch] = s.w00 * map.at(ch, s.y0, s.x0) + s.w10 * map.at(ch, s.y0, s.x1) +
              s.w01 * map.at(ch, s.y1, s.x0) + s.w11 * map.at(ch, s.y1, s.x1);
  }
  return out;
}

FeatureMap upsample_bilinear_x2(const FeatureMap& map) {
  FeatureMap out(map.c, 2 * map.h, 2 * map.w);
  const double sx = map.w > 1 ? static_cast<double>(map.w - 1) / (2 * map.w - 1) : 0.0;
  const double sy = map.h > 1 ? static_cast<double>(map.h - 1) / (2 * map.h - 1) : 0.0;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < map.c; ++ch) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        const BilinearSupport s = bilinear_support(map, x * sx, y * sy);
        out.at(ch, y, x) = s.w00 * map.at(ch, s.y0, s.x0) +
                           s.w10 * map.at(ch, s.y0, s.x1) +
                           s.w01 * map.at(ch, s.y1, s.x0) +
                           s.w11 * map.at(ch, s.y1, s.x1);
      }
    }
  }
  return out;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.h != b.h || a.w != b.w) {
    throw std::invalid_argument("concat_channels: spatial dims differ");
  }
  FeatureMap out(a.c + b.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

FeatureMap slice_channels(const FeatureMap& map, int from, int to) {
  if (from < 0 || to > map.c || from >= to) {
    throw std::invalid_argument("slice_channels: bad channel range");
  }
  FeatureMap out(to - from, map.h, map.w);
  const std::size_t plane = static_cast<std::size_t>(map.h) * map.w;
  std::copy(map.data.begin() + from * plane, map.data.begin() + to * plane,
            out.data.begin());
  return out;
}

FeatureMap max_pool(const FeatureMap& map, int k, int s) {
  const int oh = conv_out_size(map.h, k, s, 0);
  const int ow = conv_out_size(map.w, k, s, 0);
  FeatureMap out(map.c, oh, ow);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < map.c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double m = -std::numeric_limits<double>::infinity();
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            m = std::max(m, map.at(ch, oy * s + ky, ox * s + kx));
          }
        }
        out.at(ch, oy, ox) = m;
      }
    }
  }
  return out;
}

FeatureMap conv2d(const FeatureMap& map, const std::vector<double>& weights,
                  const ConvSpec& spec) {
  if (spec.out_channels < 1) {
    throw std::invalid_argument("conv2d: out_channels < 1");
  }
  const std::size_t expect = static_cast<std::size_t>(spec.out_channels) *
                             map.c * spec.k * spec.k;
  if (weights.size() != expect) {
    throw std::invalid_argument("conv2d: weight count does not match spec");
  }
  const int ow = conv_out_size(map.w, spec.k, spec.s1, spec.p);
  const int oh = conv_out_size(map.h, spec.k, spec.s2, spec.p);
  FeatureMap out(spec.out_channels, oh, ow);
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < spec.out_channels; ++oc) {
    const double* wbase =
        weights.data() + static_cast<std::size_t>(oc) * map.c * spec.k * spec.k;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < map.c; ++ic) {
          const double* wk = wbase + static_cast<std::size_t>(ic) * spec.k * spec.k;
          for (int ky = 0; ky < spec.k; ++ky) {
            const int iy = oy * spec.s2 - spec.p + ky;
            if (iy < 0 || iy >= map.h) continue;
            for (int kx = 0; kx < spec.k; ++kx) {
              const int ix = ox * spec.s1 - spec.p + kx;
              if (ix < 0 || ix >= map.w) continue;
              acc += map.at(ic, iy, ix) * wk[ky * spec.k + kx];
            }
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("feature map: truncated header");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_map(std::ostream& out, const FeatureMap& map) {
  put_u32le(out, static_cast<std::uint32_t>(map.c));
  put_u32le(out, static_cast<std::uint32_t>(map.h));
  put_u32le(out, static_cast<std::uint32_t>(map.w));
  for (double v : map.data) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32le(out, bits);
  }
}

FeatureMap read_feature_map(std::istream& in) {
  const std::uint32_t c = get_u32le(in);
  const std::uint32_t h = get_u32le(in);
  const std::uint32_t w = get_u32le(in);
  if (h == 0 || w == 0 || static_cast<std::uint64_t>(c) * h * w > (1ull << 31)) {
    throw std::runtime_error("feature map: implausible header");
  }
  FeatureMap map(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  for (double& v : map.data) {
    const std::uint32_t bits = get_u32le(in);
    float f;
    std::memcpy(&f, &bits, 4);
    v = f;
  }
  return map;
}

void write_feature_map_file(const std::string& path, const FeatureMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  write_feature_map(out, map);
  if (!out) throw std::runtime_error("write failed: " + path);
}

FeatureMap read_feature_map_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return read_feature_map(in);
}

}  // namespace avscnet
