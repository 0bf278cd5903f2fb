// Multi-view capture container shared by the synthetic generator, the
// reconstruction pipeline, and evaluation.
#pragma once

#include <vector>

#include "srhand/camera.h"
#include "srhand/mesh.h"
#include "srhand/skinning.h"
#include "srhand/tensor.h"

namespace srhand::scene {

// One calibrated view of one frame. `hr` and `mask_hr` are present for
// synthetic data (ground truth); real captures may leave them empty.
template <typename S>
struct ViewData {
  geom::Camera<S> cam;
  Tensor<S> lr;         // [3,h,w] in [0,1]
  Tensor<S> normal_lr;  // [3,h,w] camera-space unit normals, zero background
  Tensor<S> hr;         // [3,H,W] or empty
  Tensor<S> mask_hr;    // [1,H,W] or empty
};

template <typename S>
struct FrameData {
  geom::Pose<S> pose;
  std::vector<ViewData<S>> views;
};

template <typename S>
struct Scene {
  geom::SkinnedTemplate<S> tpl;  // subdivided, validate()d
  geom::MatX<S> light;           // [9,3] SH coefficients, fixed per scene
  Index upscale = 4;             // H = h * upscale
  std::vector<FrameData<S>> frames;

  Index num_views() const {
    return frames.empty() ? 0 : static_cast<Index>(frames[0].views.size());
  }
};

}  // namespace srhand::scene
