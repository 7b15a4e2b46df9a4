#pragma once

#include "cgnet/dataio.hpp"
#include "cgnet/network.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cgnet {

/// K x K pixel counts; entry (t, p) counts ground truth t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::uint64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  std::uint64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  std::uint64_t total() const;

  /// Counts every pixel whose ground truth is not the ignore label.
  void accumulate(const Labels& pred, const Labels& truth);
  void merge(const ConfusionMatrix& other);

  /// Sums rows and columns within each category.
  ConfusionMatrix collapse(const std::vector<int>& class_to_category) const;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  std::vector<std::optional<double>> per_class;  // empty when the class never occurs
  double mean = 0;
};

/// IoU_c = tp / (row + col - tp); classes with zero denominator are excluded from the mean.
IouResult miou(const ConfusionMatrix& cm);
double category_miou(const ConfusionMatrix& cm, const std::vector<int>& class_to_category);
double pixel_accuracy(const ConfusionMatrix& cm);

struct EvalReport {
  ConfusionMatrix cm{2};
  IouResult iou;
  std::optional<double> category_miou;
  double pixel_acc = 0;
};

EvalReport make_report(const ConfusionMatrix& cm, const std::vector<int>* class_to_category);

/// Text report: one `class <id> <IoU>` line per class, then mIoU, mIoU_cat, pixel_acc.
void write_report_text(std::ostream& os, const EvalReport& r);
void write_report_csv(std::ostream& os, const EvalReport& r);

/// Argmax over channels of [N,K,H,W] scores (ties to the lowest class).
Labels argmax_labels(const Tensor<float>& scores);

/// Mean-subtracts, pads to a multiple of 8 with zeros, runs inference and crops
/// the prediction back to the image size.
Labels predict(const CGNet<float>& model, const Tensor<float>& image, const std::array<float, 3>& means);

/// Single-scale evaluation over samples.
EvalReport evaluate(const CGNet<float>& model, const std::vector<Sample>& samples, const std::array<float, 3>& means,
                    const std::vector<int>* class_to_category = nullptr);

}  // namespace cgnet
