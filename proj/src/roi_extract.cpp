#include "avscnet/roi_extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "avscnet/rng.hpp"

namespace avscnet {

std::string extractor_name(RoiExtractor e) {
  switch (e) {
    case RoiExtractor::kPool:
      return "roi_pool";
    case RoiExtractor::kAlign:
      return "roi_align";
    case RoiExtractor::kEroi:
      return "eroi";
  }
  return "unknown";
}

double RoiPatch::mean() const {
  double sum = 0.0;
  for (double v : data) sum += v;
  return data.empty() ? 0.0 : sum / static_cast<double>(data.size());
}

namespace {

struct CellRegion {
  double x1, y1, x2, y2;  // continuous feature-cell coordinates
};

CellRegion to_cells(const FeatureMap& map, const RoiSpec& roi) {
  if (!roi.box.valid()) {
    throw std::invalid_argument("roi: invalid box");
  }
  if (!(roi.stride >= 1.0)) {
    throw std::invalid_argument("roi: stride must be >= 1");
  }
  CellRegion r{roi.box.x1 / roi.stride, roi.box.y1 / roi.stride,
               roi.box.x2 / roi.stride, roi.box.y2 / roi.stride};
  if (r.x1 >= map.w || r.x2 <= 0.0 || r.y1 >= map.h || r.y2 <= 0.0) {
    throw std::invalid_argument("roi: region fully outside feature map");
  }
  return r;
}

CellRegion expand_and_clamp(const FeatureMap& map, const CellRegion& r,
                            double expand_cells) {
  CellRegion e{r.x1 - expand_cells, r.y1 - expand_cells, r.x2 + expand_cells,
               r.y2 + expand_cells};
  e.x1 = std::clamp(e.x1, 0.0, static_cast<double>(map.w));
  e.x2 = std::clamp(e.x2, 0.0, static_cast<double>(map.w));
  e.y1 = std::clamp(e.y1, 0.0, static_cast<double>(map.h));
  e.y2 = std::clamp(e.y2, 0.0, static_cast<double>(map.h));
  return e;
}

}  // namespace

RoiPatch roi_pool(const FeatureMap& map, const RoiSpec& roi, int out) {
  if (out < 1) throw std::invalid_argument("roi_pool: out < 1");
  const CellRegion r = to_cells(map, roi);

  // First quantization: round the region corners to integer cells.
  int x1q = static_cast<int>(std::lround(r.x1));
  int x2q = static_cast<int>(std::lround(r.x2));
  int y1q = static_cast<int>(std::lround(r.y1));
  int y2q = static_cast<int>(std::lround(r.y2));
  x1q = std::clamp(x1q, 0, map.w - 1);
  x2q = std::clamp(x2q, x1q + 1, map.w);
  y1q = std::clamp(y1q, 0, map.h - 1);
  y2q = std::clamp(y2q, y1q + 1, map.h);
  const long wq = x2q - x1q;
  const long hq = y2q - y1q;

  RoiPatch patch;
  patch.c = map.c;
  patch.s = out;
  patch.provenance = RoiExtractor::kPool;
  patch.data.assign(static_cast<std::size_t>(map.c) * out * out, 0.0);

  for (int ch = 0; ch < map.c; ++ch) {
    for (int by = 0; by < out; ++by) {
      // Second quantization: floor/ceil per bin edge.
      const int ys = y1q + static_cast<int>((static_cast<long>(by) * hq) / out);
      const int ye = y1q + static_cast<int>((static_cast<long>(by + 1) * hq + out - 1) / out);
      for (int bx = 0; bx < out; ++bx) {
        const int xs = x1q + static_cast<int>((static_cast<long>(bx) * wq) / out);
        const int xe = x1q + static_cast<int>((static_cast<long>(bx + 1) * wq + out - 1) / out);
        double m = -std::numeric_limits<double>::infinity();
        for (int y = ys; y < ye; ++y) {
          for (int x = xs; x < xe; ++x) {
            m = std::max(m, map.at(ch, y, x));
          }
        }
        patch.at(ch, by, bx) = m;
      }
    }
  }
  return patch;
}

RoiPatch roi_align(const FeatureMap& map, const RoiSpec& roi, int out,
                   int samples_per_bin) {
  if (out < 1) throw std::invalid_argument("roi_align: out < 1");
  if (samples_per_bin < 1) {
    throw std::invalid_argument("roi_align: samples_per_bin < 1");
  }
  const CellRegion r = to_cells(map, roi);
  const double bin_w = (r.x2 - r.x1) / out;
  const double bin_h = (r.y2 - r.y1) / out;
  const int n = samples_per_bin;

  RoiPatch patch;
  patch.c = map.c;
  patch.s = out;
  patch.provenance = RoiExtractor::kAlign;
  patch.data.assign(static_cast<std::size_t>(map.c) * out * out, 0.0);

  for (int by = 0; by < out; ++by) {
    for (int bx = 0; bx < out; ++bx) {
      for (int b = 0; b < n; ++b) {
        const double y = r.y1 + bin_h * (by + (b + 0.5) / n);
        for (int a = 0; a < n; ++a) {
          const double x = r.x1 + bin_w * (bx + (a + 0.5) / n);
          const BilinearSupport s = bilinear_support(map, x, y);
          for (int ch = 0; ch < map.c; ++ch) {
            patch.at(ch, by, bx) += s.w00 * map.at(ch, s.y0, s.x0) +
                                    s.w10 * map.at(ch, s.y0, s.x1) +
                                    s.w01 * map.at(ch, s.y1, s.x0) +
                                    s.w11 * map.at(ch, s.y1, s.x1);
          }
        }
      }
    }
  }
  const double inv = 1.0 / (static_cast<double>(n) * n);
  for (double& v : patch.data) v *= inv;
  return patch;
}

RoiPatch eroi_mid_grid(const FeatureMap& map, const RoiSpec& roi, int mid) {
  if (mid < 1) throw std::invalid_argument("eroi: mid < 1");
  if (roi.expand_cells < 0.0) {
    throw std::invalid_argument("eroi: negative expand_cells");
  }
  const CellRegion e = expand_and_clamp(map, to_cells(map, roi), roi.expand_cells);
  const double bin_w = (e.x2 - e.x1) / mid;
  const double bin_h = (e.y2 - e.y1) / mid;

  RoiPatch grid;
  grid.c = map.c;
  grid.s = mid;
  grid.provenance = RoiExtractor::kEroi;
  grid.data.assign(static_cast<std::size_t>(map.c) * mid * mid, 0.0);
  for (int gy = 0; gy < mid; ++gy) {
    const double y = e.y1 + bin_h * (gy + 0.5);
    for (int gx = 0; gx < mid; ++gx) {
      const double x = e.x1 + bin_w * (gx + 0.5);
      const BilinearSupport s = bilinear_support(map, x, y);
      for (int ch = 0; ch < map.c; ++ch) {
        grid.at(ch, gy, gx) = s.w00 * map.at(ch, s.y0, s.x0) +
                              s.w10 * map.at(ch, s.y0, s.x1) +
                              s.w01 * map.at(ch, s.y1, s.x0) +
                              s.w11 * map.at(ch, s.y1, s.x1);
      }
    }
  }
  return grid;
}

EroiResult eroi_extract(const FeatureMap& map, const RoiSpec& roi, int mid,
                        int out, bool want_grad) {
  if (mid < 1 || out < 1) throw std::invalid_argument("eroi: bad sizes");
  const bool pooled = (mid != out);
  if (pooled && conv_out_size(mid, 2, 2, 0) != out) {
    throw std::invalid_argument("eroi: out must equal mid or the k=2,s=2 pooled size");
  }
  if (roi.expand_cells < 0.0) {
    throw std::invalid_argument("eroi: negative expand_cells");
  }
  const CellRegion e = expand_and_clamp(map, to_cells(map, roi), roi.expand_cells);
  const double bin_w = (e.x2 - e.x1) / mid;
  const double bin_h = (e.y2 - e.y1) / mid;

  // Precompute the shared sample supports of the mid x mid grid.
  std::vector<BilinearSupport> supports(static_cast<std::size_t>(mid) * mid);
  for (int gy = 0; gy < mid; ++gy) {
    const double y = e.y1 + bin_h * (gy + 0.5);
    for (int gx = 0; gx < mid; ++gx) {
      const double x = e.x1 + bin_w * (gx + 0.5);
      supports[static_cast<std::size_t>(gy) * mid + gx] =
          bilinear_support(map, x, y);
    }
  }

  EroiResult res;
  res.patch.c = map.c;
  res.patch.s = out;
  res.patch.provenance = RoiExtractor::kEroi;
  res.patch.data.assign(static_cast<std::size_t>(map.c) * out * out, 0.0);
  if (want_grad) {
    res.grad.assign(res.patch.data.size(), PatchGrad{});
  }

  const std::size_t plane = static_cast<std::size_t>(map.h) * map.w;
  const int win = pooled ? 2 : 1;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < map.c; ++ch) {
    for (int oy = 0; oy < out; ++oy) {
      for (int ox = 0; ox < out; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        const BilinearSupport* best_s = nullptr;
        // Row-major scan; first maximum wins on ties.
        for (int wy = 0; wy < win; ++wy) {
          for (int wx = 0; wx < win; ++wx) {
            const int gy = oy * win + wy;
            const int gx = ox * win + wx;
            const BilinearSupport& s =
                supports[static_cast<std::size_t>(gy) * mid + gx];
            const double v = s.w00 * map.at(ch, s.y0, s.x0) +
                             s.w10 * map.at(ch, s.y0, s.x1) +
                             s.w01 * map.at(ch, s.y1, s.x0) +
                             s.w11 * map.at(ch, s.y1, s.x1);
            if (v > best) {
              best = v;
              best_s = &s;
            }
          }
        }
        const std::size_t oi = res.patch.index(ch, oy, ox);
        res.patch.data[oi] = best;
        if (want_grad && best_s != nullptr) {
          PatchGrad g;
          const std::int64_t base = static_cast<std::int64_t>(ch) * plane;
          g.cell = {base + best_s->y0 * map.w + best_s->x0,
                    base + best_s->y0 * map.w + best_s->x1,
                    base + best_s->y1 * map.w + best_s->x0,
                    base + best_s->y1 * map.w + best_s->x1};
          g.weight = {best_s->w00, best_s->w10, best_s->w01, best_s->w11};
          res.grad[oi] = g;
        }
      }
    }
  }
  return res;
}

namespace {

// Stratified dense average of the bilinear field over a continuous region:
// one sample at the center of each of gx*gy equal sub-rectangles.
double dense_region_average(const FeatureMap& map, const CellRegion& r, int gx,
                            int gy) {
  double sum = 0.0;
  for (int iy = 0; iy < gy; ++iy) {
    const double y = r.y1 + (r.y2 - r.y1) * (iy + 0.5) / gy;
    for (int ix = 0; ix < gx; ++ix) {
      const double x = r.x1 + (r.x2 - r.x1) * (ix + 0.5) / gx;
      const BilinearSupport s = bilinear_support(map, x, y);
      for (int ch = 0; ch < map.c; ++ch) {
        sum += s.w00 * map.at(ch, s.y0, s.x0) + s.w10 * map.at(ch, s.y0, s.x1) +
               s.w01 * map.at(ch, s.y1, s.x0) + s.w11 * map.at(ch, s.y1, s.x1);
      }
    }
  }
  return sum / (static_cast<double>(gx) * gy * std::max(map.c, 1));
}

}  // namespace

void make_roi_bench_fixture(int trials, std::uint64_t seed,
                            std::vector<FeatureMap>& maps,
                            std::vector<RoiSpec>& rois) {
  maps.clear();
  rois.clear();
  maps.reserve(trials);
  rois.reserve(trials);
  Rng rng(mix_seed(seed, fnv1a64("roi-bench")));
  const int side = 24;
  for (int t = 0; t < trials; ++t) {
    FeatureMap map(1, side, side);
    for (double& v : map.data) v = rng.uniform(0.0, 0.004);
    // Smooth low-frequency background.
    for (int b = 0; b < 2; ++b) {
      const double bx = rng.uniform(0.0, side);
      const double by = rng.uniform(0.0, side);
      const double bs = rng.uniform(4.0, 8.0);
      const double ba = rng.uniform(0.04, 0.12);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const double dx = (x - bx) / bs;
          const double dy = (y - by) / bs;
          map.at(0, y, x) += ba * std::exp(-0.5 * (dx * dx + dy * dy));
        }
      }
    }
    // One bright smooth foreground blob at a fractional position.
    const double cx = rng.uniform(9.0, 15.0);
    const double cy = rng.uniform(9.0, 15.0);
    const double sx = rng.uniform(0.8, 1.6);
    const double sy = rng.uniform(0.8, 1.6);
    const double amp = rng.uniform(0.5, 1.0);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const double dx = (x - cx) / sx;
        const double dy = (y - cy) / sy;
        map.at(0, y, x) += amp * std::exp(-0.5 * (dx * dx + dy * dy));
      }
    }
    // A small fractional RoI around the blob.
    const double rx = sx * rng.uniform(1.8, 2.6);
    const double ry = sy * rng.uniform(1.8, 2.6);
    RoiSpec roi;
    roi.box = Box{cx - rx, cy - ry, cx + rx, cy + ry};
    roi.stride = 1.0;
    maps.push_back(std::move(map));
    rois.push_back(roi);
  }
}

std::vector<QuantErrorRow> quantization_error_report(
    std::vector<FeatureMap> maps, std::vector<RoiSpec> rois, int trials,
    std::uint64_t seed, const RoiBenchParams& params) {
  if (maps.size() != rois.size()) {
    throw std::invalid_argument("quantization_error_report: list sizes differ");
  }
  if (maps.empty()) {
    if (trials < 1) {
      throw std::invalid_argument("quantization_error_report: trials < 1");
    }
    make_roi_bench_fixture(trials, seed, maps, rois);
  }

  const int n = static_cast<int>(maps.size());
  std::vector<QuantErrorRow> rows(3);
  rows[0].method = RoiExtractor::kPool;
  rows[1].method = RoiExtractor::kAlign;
  rows[2].method = RoiExtractor::kEroi;
  for (QuantErrorRow& row : rows) {
    row.trials = n;
    row.seed = seed;
  }

  for (int i = 0; i < n; ++i) {
    const FeatureMap& map = maps[i];
    RoiSpec roi = rois[i];
    roi.expand_cells = params.expand_cells;
    const CellRegion region = to_cells(map, roi);
    const CellRegion clamped = expand_and_clamp(map, region, 0.0);
    const CellRegion expanded = expand_and_clamp(map, region, roi.expand_cells);

    const double oracle_true = dense_region_average(
        map, clamped, params.oracle_grid_x, params.oracle_grid_y);
    const double oracle_expanded = dense_region_average(
        map, expanded, params.oracle_grid_x, params.oracle_grid_y);

    // Each extractor's bilinear feature average is compared against the dense
    // average of the region it reads: pool and align target the RoI itself,
    // the expansion extractor reads the expanded region (its mid-grid samples
    // are the extracted features; the subsequent max-pool is the fixed-size
    // reduction shared by the detection head, not part of the read-out).
    const double e_pool =
        std::abs(roi_pool(map, roi, params.out).mean() - oracle_true);
    const double e_align =
        std::abs(roi_align(map, roi, params.out, params.align_samples).mean() -
                 oracle_true);
    const double e_eroi =
        std::abs(eroi_mid_grid(map, roi, params.eroi_mid).mean() -
                 oracle_expanded);

    rows[0].mean_abs_err += e_pool;
    rows[0].max_abs_err = std::max(rows[0].max_abs_err, e_pool);
    rows[1].mean_abs_err += e_align;
    rows[1].max_abs_err = std::max(rows[1].max_abs_err, e_align);
    rows[2].mean_abs_err += e_eroi;
    rows[2].max_abs_err = std::max(rows[2].max_abs_err, e_eroi);
  }
  for (QuantErrorRow& row : rows) {
    row.mean_abs_err /= std::max(n, 1);
  }
  return rows;
}

}  // namespace avscnet
