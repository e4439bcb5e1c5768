#pragma once

// Box code, training targets, detection losses and decoding of the dense
// outputs. Losses return their value together with d(loss)/d(output).

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "radarvel/core.hpp"
#include "radarvel/model.hpp"

namespace radarvel {

inline constexpr int kBoxCodeSize = 8;
using BoxCode = std::array<double, kBoxCodeSize>;

/// (dx/cell, dy/cell, z, log l, log w, log h, cos yaw, sin yaw) relative to
/// the center of the cell the code is attached to.
BoxCode encode_box(const OBB& box, const Vec2& cell_center, double cell);
OBB decode_box(const BoxCode& code, const Vec2& cell_center, double cell);

struct LossConfig {
  double c_cls = 10.0;
  double c_box = 0.5;
  double c_vr = 0.1;
  double c_vel = 0.05;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double smooth_l1_beta = 1.0;
};

/// Per output cell: assigned label index (-1 for background), box code
/// target and optional velocity target.
struct Targets {
  GridConfig geometry;
  std::vector<int> assigned;     // per cell
  Tensor<double> box;            // [8,H,W]
  Tensor<double> vel;            // [2,H,W]
  std::vector<char> positive;    // per cell
  std::vector<char> has_vel;     // per cell, subset of positive
  int positives = 0;
};

/// Positive cells have their center inside a label box (BEV); a cell inside
/// several boxes goes to the nearest box center (lower index on ties).
/// `vel_targets[i]` (if present) is the velocity target of label i.
Targets assign_targets(const std::vector<OBB>& labels, const GridConfig& out_grid,
                       const std::vector<std::optional<Vec2>>& vel_targets = {});

struct LossTerm {
  double value = 0.0;
  bool no_positives = false;
};

/// alpha-balanced focal loss of one probability of the target class.
double focal_term(double p_target, bool foreground, double alpha, double gamma);

/// Mean focal loss over all cells; adds d/d(logits) * scale into grad.
template <typename T>
double focal_loss(const Tensor<T>& logits, const std::vector<int>& assigned, const LossConfig& cfg,
                  Tensor<T>* grad, double scale);

double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);

/// Mean smooth L1 over the masked cells and all channels of `pred`; an
/// empty mask yields 0 with `no_positives` set.
template <typename T>
LossTerm smooth_l1_loss(const Tensor<T>& pred, const Tensor<double>& target,
                        const std::vector<char>& mask, double beta, Tensor<T>* grad, double scale);

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double box = 0.0;
  double vr = 0.0;
  bool has_vr = false;
};

/// c_box * box + c_cls * cls (+ c_vr * vr when present).
double combine_detection_loss(double l_box, double l_cls, std::optional<double> l_vr,
                              const LossConfig& cfg);

/// Detection multitask loss (+ velocity regression on positive cells with a
/// velocity target when `with_velocity`). Writes output gradients.
template <typename T>
LossBreakdown detection_loss(const DenseOutput<T>& out, const Targets& targets, const LossConfig& cfg,
                             bool with_velocity, OutputGrads<T>* grads);

struct Detection {
  OBB box;
  int cell = -1;  // flat output cell the box was decoded from
};

/// Cells with score_fg above the threshold, decoded and reduced by greedy
/// center-distance NMS in descending score order.
template <typename T>
std::vector<Detection> decode_detections(const DenseOutput<T>& out, double score_threshold,
                                         double nms_radius);

std::vector<Detection> nms(std::vector<Detection> dets, double radius);
std::vector<OBB> boxes_of(const std::vector<Detection>& dets);

}  // namespace radarvel
