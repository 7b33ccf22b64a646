#include "xinv/attribution/grad_cam.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "xinv/error.hpp"

namespace xinv {

double Heatmap::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

std::vector<double> bilinear_resize(const std::vector<double>& src, std::size_t src_h,
                                    std::size_t src_w, std::size_t dst_h, std::size_t dst_w) {
  if (src.size() != src_h * src_w || src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0) {
    throw ShapeError("bilinear_resize: bad extents");
  }
  auto coord = [](std::size_t i, std::size_t src_n, std::size_t dst_n) {
    if (dst_n == 1 || src_n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(src_n - 1) / static_cast<double>(dst_n - 1);
  };
  std::vector<double> out(dst_h * dst_w);
  for (std::size_t r = 0; r < dst_h; ++r) {
    const double y = coord(r, src_h, dst_h);
    const auto y0 = std::min(static_cast<std::size_t>(y), src_h - 1);
    const auto y1 = std::min(y0 + 1, src_h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < dst_w; ++c) {
      const double x = coord(c, src_w, dst_w);
      const auto x0 = std::min(static_cast<std::size_t>(x), src_w - 1);
      const auto x1 = std::min(x0 + 1, src_w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = src[y0 * src_w + x0] * (1 - fx) + src[y0 * src_w + x1] * fx;
      const double bottom = src[y1 * src_w + x0] * (1 - fx) + src[y1 * src_w + x1] * fx;
      out[r * dst_w + c] = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

Heatmap grad_cam(const ModelParams& params, const Tensor& image) {
  Tensor batch;
  if (image.rank() == 3 && image.dim(0) == 1) {
    batch = Tensor({1, 1, image.dim(1), image.dim(2)},
                   std::vector<double>(image.data().begin(), image.data().end()));
  } else if (image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 1) {
    batch = image.clone();
  } else {
    throw ShapeError("grad_cam: expected a single 1×H×W image, got " + to_string(image.shape()));
  }
  const auto h = batch.dim(2), w = batch.dim(3);

  // Work on a private copy so gradients never touch the caller's parameters.
  const ModelParams local = params.clone();
  Graph g;
  const auto trace = extract_traced(g, local, batch);
  const auto logit = classify_logit(g, local, trace.features);
  g.backward(logit);

  const auto& maps = trace.last_maps;  // 1×K×h'×w'
  const auto channels = maps.dim(1), mh = maps.dim(2), mw = maps.dim(3);
  const auto area = mh * mw;
  auto a = maps.data();
  auto da = maps.grad();

  std::vector<double> cam(area, 0.0);
  for (std::size_t k = 0; k < channels; ++k) {
    double weight = 0.0;
    for (std::size_t p = 0; p < area; ++p) weight += da[k * area + p];
    weight /= static_cast<double>(area);
    for (std::size_t p = 0; p < area; ++p) cam[p] += weight * a[k * area + p];
  }
  for (auto& v : cam) v = std::max(v, 0.0);

  Heatmap out{h, w, bilinear_resize(cam, mh, mw, h, w)};
  for (auto& v : out.values) v = std::max(v, 0.0);
  const double peak = out.max();
  if (peak > 0.0) {
    for (auto& v : out.values) v /= peak;
  }
  return out;
}

double mass_fraction(const Heatmap& map, const Region& region) {
  double total = 0.0, inside = 0.0;
  for (std::size_t r = 0; r < map.height; ++r)
    for (std::size_t c = 0; c < map.width; ++c) {
      const double v = map.at(r, c);
      total += v;
      if (region.contains(r, c)) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

Tensor heatmap_tensor(const Heatmap& map) {
  return Tensor({1, map.height, map.width}, map.values);
}

Tensor composite_image(const Tensor& image, const Heatmap& map) {
  if (image.rank() != 3 || image.dim(1) != map.height || image.dim(2) != map.width) {
    throw ShapeError("composite_image: image " + to_string(image.shape()) +
                     " does not match heatmap size");
  }
  const auto h = map.height, w = map.width;
  Tensor out({1, h, 2 * w});
  auto dst = out.data();
  auto src = image.data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double px = src[r * w + c];
      dst[r * 2 * w + c] = px;
      dst[r * 2 * w + w + c] = 0.5 * px + 0.5 * map.at(r, c);
    }
  return out;
}

std::string heatmap_csv(const Heatmap& map) {
  std::string out;
  char buf[64];
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c) {
      if (c) out.push_back(',');
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), map.at(r, c));
      out.append(buf, end);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace xinv
