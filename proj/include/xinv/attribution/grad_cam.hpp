#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "xinv/autodiff/tensor.hpp"
#include "xinv/datapipe/synth.hpp"
#include "xinv/model/model.hpp"

namespace xinv {

/// H×W class-activation map with values in [0,1].
struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  double max() const;
};

/// Bilinear resize of a row-major map with corner alignment: the four
/// corner samples map exactly onto the output corners.
std::vector<double> bilinear_resize(const std::vector<double>& src, std::size_t src_h,
                                    std::size_t src_w, std::size_t dst_h, std::size_t dst_w);

/**
 * Grad-CAM for the disease logit over the extractor's last block.
 *
 * Channel weights are the spatial means of d(logit)/dA_k; the map is
 * relu(sum_k w_k A_k), upsampled to the image size and divided by its
 * maximum when that maximum is positive.
 *
 * `image` is 1×H×W (or 1×1×H×W).
 */
Heatmap grad_cam(const ModelParams& params, const Tensor& image);

/// Share of total heatmap mass inside `region`; 0 for an all-zero map.
double mass_fraction(const Heatmap& map, const Region& region);

/// Heatmap as a 1×H×W tensor.
Tensor heatmap_tensor(const Heatmap& map);

/// Side-by-side composite: input on the left, 50/50 blend of input and
/// heatmap on the right. Output is 1×H×2W.
Tensor composite_image(const Tensor& image, const Heatmap& map);

/// Raw values as CSV, one image row per line.
std::string heatmap_csv(const Heatmap& map);

}  // namespace xinv
