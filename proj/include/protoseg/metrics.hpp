#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "mask.hpp"
#include "parallel.hpp"

namespace protoseg {

namespace detail {
inline void check_pair(const ClassMask& pred, const ClassMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw NumericError("mask dimensions differ: " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                       " vs " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  }
  if (!(pred.label_map == gt.label_map)) throw NumericError("masks use different label maps");
  if (pred.labels.empty()) throw NumericError("empty mask");
}
}  // namespace detail

struct OverlapCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double dice() const {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

/// Per-class confusion counts for one mask pair.
inline std::vector<OverlapCounts> overlap_counts(const ClassMask& pred, const ClassMask& gt) {
  detail::check_pair(pred, gt);
  std::vector<OverlapCounts> counts(gt.label_map.size());
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const ClassId p = pred.labels[i];
    const ClassId g = gt.labels[i];
    if (p == g) {
      ++counts[g].tp;
    } else {
      ++counts[p].fp;
      ++counts[g].fn;
    }
  }
  return counts;
}

inline double pixel_accuracy(const ClassMask& pred, const ClassMask& gt) {
  detail::check_pair(pred, gt);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) agree += pred.labels[i] == gt.labels[i] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(gt.labels.size());
}

/// 2TP / (2TP + FP + FN); 1.0 when the class is absent from both masks.
inline double dice(const ClassMask& pred, const ClassMask& gt, ClassId class_id) {
  detail::check_pair(pred, gt);
  if (!gt.label_map.contains(class_id)) throw ConfigError("unknown class id " + std::to_string(class_id));
  return overlap_counts(pred, gt)[class_id].dice();
}

struct EvalOptions {
  bool include_absent_in_macro = false;  // average Dice over every class, not only those in the ground truth
};

struct EvalReport {
  std::vector<std::string> image_names;
  std::vector<double> pixel_accuracy;       // per image
  double macro_pixel_accuracy = 0.0;        // unweighted mean over images
  double pooled_pixel_accuracy = 0.0;       // over all pixels of all images
  std::vector<std::string> class_names;
  std::vector<double> dice;                 // per class, pooled over all pixels
  std::vector<double> mean_image_dice;      // per class, mean of per-image Dice
  std::vector<bool> present_in_gt;
  double macro_dice = 0.0;                  // mean pooled Dice over the classes macro averages
  std::vector<std::size_t> gt_pixels;       // class census
  std::vector<std::size_t> pred_pixels;
  std::size_t image_count = 0;
};

struct MaskPair {
  std::string name;
  ClassMask pred;
  ClassMask gt;
};

/// Dataset report. Pairs are evaluated independently and reduced in input order.
inline EvalReport evaluate_dataset(const std::vector<MaskPair>& pairs, const EvalOptions& opt = {}) {
  if (pairs.empty()) throw ConfigError("no mask pairs to evaluate");
  const auto& map = pairs.front().gt.label_map;
  for (const auto& p : pairs) {
    if (!(p.gt.label_map == map)) throw NumericError("mask pairs use different label maps");
  }
  std::vector<std::vector<OverlapCounts>> counts(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { counts[i] = overlap_counts(pairs[i].pred, pairs[i].gt); });

  const std::size_t classes = map.size();
  EvalReport r;
  r.image_count = pairs.size();
  r.class_names = map.names();
  std::vector<OverlapCounts> pooled(classes);
  r.mean_image_dice.assign(classes, 0.0);
  r.gt_pixels.assign(classes, 0);
  r.pred_pixels.assign(classes, 0);
  std::size_t total_tp = 0;
  std::size_t total_pixels = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::size_t tp = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const auto& k = counts[i][c];
      pooled[c].tp += k.tp;
      pooled[c].fp += k.fp;
      pooled[c].fn += k.fn;
      r.mean_image_dice[c] += k.dice();
      r.gt_pixels[c] += k.tp + k.fn;
      r.pred_pixels[c] += k.tp + k.fp;
      tp += k.tp;
    }
    const std::size_t pixels = pairs[i].gt.labels.size();
    r.image_names.push_back(pairs[i].name);
    r.pixel_accuracy.push_back(static_cast<double>(tp) / static_cast<double>(pixels));
    total_tp += tp;
    total_pixels += pixels;
  }
  double acc_sum = 0.0;
  for (double a : r.pixel_accuracy) acc_sum += a;
  r.macro_pixel_accuracy = acc_sum / static_cast<double>(pairs.size());
  r.pooled_pixel_accuracy = static_cast<double>(total_tp) / static_cast<double>(total_pixels);

  double dice_sum = 0.0;
  std::size_t dice_n = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    r.dice.push_back(pooled[c].dice());
    r.mean_image_dice[c] /= static_cast<double>(pairs.size());
    r.present_in_gt.push_back(r.gt_pixels[c] > 0);
    if (r.present_in_gt[c] || opt.include_absent_in_macro) {
      dice_sum += r.dice[c];
      ++dice_n;
    }
  }
  r.macro_dice = dice_n == 0 ? 1.0 : dice_sum / static_cast<double>(dice_n);
  return r;
}

inline nlohmann::json to_json_value(const EvalReport& r) {
  nlohmann::json per_image = nlohmann::json::array();
  for (std::size_t i = 0; i < r.image_count; ++i) {
    per_image.push_back({{"name", r.image_names[i]}, {"pixel_accuracy", r.pixel_accuracy[i]}});
  }
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    per_class.push_back({{"class_id", c},
                         {"name", r.class_names[c]},
                         {"dice", r.dice[c]},
                         {"mean_image_dice", r.mean_image_dice[c]},
                         {"present_in_gt", static_cast<bool>(r.present_in_gt[c])},
                         {"gt_pixels", r.gt_pixels[c]},
                         {"pred_pixels", r.pred_pixels[c]}});
  }
  return {{"image_count", r.image_count},
          {"macro_pixel_accuracy", r.macro_pixel_accuracy},
          {"pooled_pixel_accuracy", r.pooled_pixel_accuracy},
          {"macro_dice", r.macro_dice},
          {"images", std::move(per_image)},
          {"classes", std::move(per_class)}};
}

}  // namespace protoseg
