#include "cgnet/metrics.hpp"

#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace cgnet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: num_classes must be >= 1");
  counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

void ConfusionMatrix::accumulate(const Labels& pred, const Labels& truth) {
  if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w)
    throw std::invalid_argument("ConfusionMatrix::accumulate: prediction and ground truth sizes differ");
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const std::int32_t t = truth.v[k];
    if (t == kIgnoreLabel) continue;
    if (t < 0 || t >= k_) throw std::invalid_argument("ConfusionMatrix: ground-truth label " + std::to_string(t) + " out of range");
    const std::int32_t p = pred.v[k];
    if (p < 0 || p >= k_) throw std::invalid_argument("ConfusionMatrix: prediction " + std::to_string(p) + " out of range");
    ++at(t, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix ConfusionMatrix::collapse(const std::vector<int>& map) const {
  if (map.size() != static_cast<std::size_t>(k_))
    throw std::invalid_argument("category map covers " + std::to_string(map.size()) + " classes, expected " + std::to_string(k_));
  int categories = 0;
  for (int c = 0; c < k_; ++c) {
    if (map[static_cast<std::size_t>(c)] < 0) throw std::invalid_argument("class " + std::to_string(c) + " is unmapped");
    categories = std::max(categories, map[static_cast<std::size_t>(c)] + 1);
  }
  ConfusionMatrix out(categories);
  for (int t = 0; t < k_; ++t)
    for (int p = 0; p < k_; ++p) out.at(map[static_cast<std::size_t>(t)], map[static_cast<std::size_t>(p)]) += at(t, p);
  return out;
}

IouResult miou(const ConfusionMatrix& cm) {
  const int K = cm.num_classes();
  IouResult r;
  r.per_class.resize(static_cast<std::size_t>(K));
  double sum = 0;
  int counted = 0;
  for (int c = 0; c < K; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < K; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("miou: no class occurs in ground truth or prediction");
  r.mean = sum / counted;
  return r;
}

double category_miou(const ConfusionMatrix& cm, const std::vector<int>& map) { return miou(cm.collapse(map)).mean; }

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("pixel_accuracy: empty confusion matrix");
  std::uint64_t diag = 0;
  for (int c = 0; c < cm.num_classes(); ++c) diag += cm.at(c, c);
  return static_cast<double>(diag) / static_cast<double>(total);
}

EvalReport make_report(const ConfusionMatrix& cm, const std::vector<int>* map) {
  EvalReport r{cm, miou(cm), std::nullopt, pixel_accuracy(cm)};
  if (map != nullptr) r.category_miou = category_miou(cm, *map);
  return r;
}

void write_report_text(std::ostream& os, const EvalReport& r) {
  os << std::fixed << std::setprecision(6);
  for (std::size_t c = 0; c < r.iou.per_class.size(); ++c) {
    os << "class " << c << ' ';
    if (r.iou.per_class[c])
      os << *r.iou.per_class[c];
    else
      os << "n/a";
    os << '\n';
  }
  os << "mIoU " << r.iou.mean << '\n';
  if (r.category_miou) os << "mIoU_cat " << *r.category_miou << '\n';
  os << "pixel_acc " << r.pixel_acc << '\n';
  os.unsetf(std::ios::floatfield);
}

void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << "metric,class,value\n" << std::setprecision(9);
  for (std::size_t c = 0; c < r.iou.per_class.size(); ++c) {
    os << "iou," << c << ',';
    if (r.iou.per_class[c]) os << *r.iou.per_class[c];
    os << '\n';
  }
  os << "miou,," << r.iou.mean << '\n';
  if (r.category_miou) os << "miou_cat,," << *r.category_miou << '\n';
  os << "pixel_acc,," << r.pixel_acc << '\n';
}

Labels argmax_labels(const Tensor<float>& scores) {
  Labels out(scores.n(), scores.h(), scores.w());
  const std::size_t hw = scores.plane_size();
  for (int n = 0; n < scores.n(); ++n)
    for (std::size_t k = 0; k < hw; ++k) {
      int best = 0;
      float best_v = scores.plane(n, 0)[k];
      for (int c = 1; c < scores.c(); ++c) {
        const float v = scores.plane(n, c)[k];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out.v[static_cast<std::size_t>(n) * hw + k] = best;
    }
  return out;
}

Labels predict(const CGNet<float>& model, const Tensor<float>& image, const std::array<float, 3>& means) {
  detail::require(image.rank() == 4 && image.n() == 1 && image.c() == 3, "predict: image must be [1,3,H,W]");
  const int H = image.h(), W = image.w();
  const int Hp = (H + kOutputStride - 1) / kOutputStride * kOutputStride;
  const int Wp = (W + kOutputStride - 1) / kOutputStride * kOutputStride;
  Tensor<float> x(Dims{1, 3, Hp, Wp});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        x.at(0, c, i, j) = image.at(0, c, i, j) - means[static_cast<std::size_t>(c)];
  const Labels full = argmax_labels(model.infer(x));
  Labels out(1, H, W);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) out.at(0, i, j) = full.at(0, i, j);
  return out;
}

EvalReport evaluate(const CGNet<float>& model, const std::vector<Sample>& samples, const std::array<float, 3>& means,
                    const std::vector<int>* map) {
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : samples) cm.accumulate(predict(model, s.image, means), s.labels);
  return make_report(cm, map);
}

}  // namespace cgnet
