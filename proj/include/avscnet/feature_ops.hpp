#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace avscnet {

// Dense C x H x W array, channel-major then row-major. Arithmetic is done in
// 64-bit; the binary file format stores 32-bit floats (see read/write below).
struct FeatureMap {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c_, int h_, int w_, double fill = 0.0);

  std::size_t index(int ch, int y, int x) const {
    return (static_cast<std::size_t>(ch) * h + y) * w + x;
  }
  double at(int ch, int y, int x) const { return data[index(ch, y, x)]; }
  double& at(int ch, int y, int x) { return data[index(ch, y, x)]; }
  std::size_t size() const { return data.size(); }

  // data length == c*h*w and every value finite. c may be zero (the empty
  // channel stack used by the concat identity); h and w must be positive.
  bool valid() const;
};

struct ConvSpec {
  int k = 1;             // kernel size (square)
  int s1 = 1;            // horizontal stride
  int s2 = 1;            // vertical stride
  int p = 0;             // zero padding on each border
  int out_channels = 1;
};

// floor((w_in + 2p - k)/s) + 1. Throws if the padded input is smaller than
// the kernel or any argument is out of range.
int conv_out_size(int w_in, int k, int s, int p);

// The four support cells of a bilinear read at clamped continuous (x, y),
// with their convex weights. Weights are shared across channels.
struct BilinearSupport {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double w00 = 0, w10 = 0, w01 = 0, w11 = 0;
};

BilinearSupport bilinear_support(const FeatureMap& map, double x, double y);

// Per-channel interpolated values at (x, y). Coordinates are clamped to
// [0, W-1] x [0, H-1] (border replication). The support weights are exactly
// the gradient of each output with respect to the four support cells.
std::vector<double> bilinear_sample(const FeatureMap& map, double x, double y);

// x2 resolution enhancement with align-corners sampling: output (x', y')
// reads the input at (x'*(W-1)/(2W-1), y'*(H-1)/(2H-1)).
FeatureMap upsample_bilinear_x2(const FeatureMap& map);

// Channel concatenation; spatial dims must match, a's channels come first.
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);

// Slice channels [from, to) out of a map.
FeatureMap slice_channels(const FeatureMap& map, int from, int to);

FeatureMap max_pool(const FeatureMap& map, int k, int s);

// Cross-correlation with zero padding. weights laid out as
// out_channels x C x k x k. No bias term.
FeatureMap conv2d(const FeatureMap& map, const std::vector<double>& weights,
                  const ConvSpec& spec);

// Binary fixture format: three unsigned 32-bit little-endian values C, H, W
// followed by C*H*W little-endian IEEE float32, channel-major.
void write_feature_map(std::ostream& out, const FeatureMap& map);
FeatureMap read_feature_map(std::istream& in);
void write_feature_map_file(const std::string& path, const FeatureMap& map);
FeatureMap read_feature_map_file(const std::string& path);

}  // namespace avscnet
