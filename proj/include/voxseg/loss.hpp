#ifndef VOXSEG_LOSS_HPP
#define VOXSEG_LOSS_HPP

#include <cmath>
#include <span>
#include <vector>

#include "voxseg/graph.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

inline constexpr double kDiceSmooth = 1e-5;

// Combined segmentation loss: mean soft-Dice over the foreground classes
// plus voxel-mean cross-entropy, both on softmax probabilities. Dice is
// computed per class over the whole batch. The smoothing term keeps the
// loss differentiable (and equal to a perfect score) when a class is
// absent from both prediction and target.
template <typename T>
Tensor<T> dice_ce_loss(Graph<T>* g, const Tensor<T>& logits,
                       std::span<const uint8_t> target, T dice_weight = T(1),
                       T ce_weight = T(1), T smooth = T(kDiceSmooth)) {
  if (logits.ndim() != 5) throw ShapeError("dice_ce_loss: logits must be [B,C,D,H,W]");
  const int64_t B = logits.dim(0), C = logits.dim(1);
  const int64_t sp = logits.dim(2) * logits.dim(3) * logits.dim(4);
  const int64_t nvox = B * sp;
  if (C < 2) throw ShapeError("dice_ce_loss: need at least background + one class");
  if (static_cast<int64_t>(target.size()) != nvox)
    throw ShapeError(format_msg("dice_ce_loss: target has ", target.size(), " voxels, logits have ", nvox));
  for (int64_t v = 0; v < nvox; ++v)
    if (target[static_cast<size_t>(v)] >= C)
      throw ShapeError(format_msg("dice_ce_loss: target class ", int(target[static_cast<size_t>(v)]), " out of range [0,", C, ")"));

  // softmax probabilities, saved for backward
  std::vector<T> prob(static_cast<size_t>(nvox * C));
  double ce_acc = 0.0;
  std::vector<double> inter(static_cast<size_t>(C), 0.0);  // sum p*g per class
  std::vector<double> psum(static_cast<size_t>(C), 0.0);
  std::vector<double> gsum(static_cast<size_t>(C), 0.0);
  const T* z = logits.data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t i = 0; i < sp; ++i) {
      const int64_t v = b * sp + i;
      T zmax = z[(b * C) * sp + i];
      for (int64_t c = 1; c < C; ++c) zmax = std::max(zmax, z[(b * C + c) * sp + i]);
      double denom = 0.0;
      for (int64_t c = 0; c < C; ++c)
        denom += std::exp(static_cast<double>(z[(b * C + c) * sp + i] - zmax));
      const uint8_t t = target[static_cast<size_t>(v)];
      for (int64_t c = 0; c < C; ++c) {
        const double p = std::exp(static_cast<double>(z[(b * C + c) * sp + i] - zmax)) / denom;
        prob[static_cast<size_t>((b * C + c) * sp + i)] = static_cast<T>(p);
        psum[static_cast<size_t>(c)] += p;
        if (t == c) {
          inter[static_cast<size_t>(c)] += p;
          gsum[static_cast<size_t>(c)] += 1.0;
          ce_acc -= std::log(std::max(p, 1e-300));
        }
      }
    }
  }
  const double ce = ce_acc / static_cast<double>(nvox);
  double dice_loss = 0.0;
  for (int64_t c = 1; c < C; ++c) {
    const double d = (2.0 * inter[static_cast<size_t>(c)] + smooth) /
                     (psum[static_cast<size_t>(c)] + gsum[static_cast<size_t>(c)] + smooth);
    dice_loss += 1.0 - d;
  }
  dice_loss /= static_cast<double>(C - 1);

  const bool rec = g && logits.requires_grad();
  Tensor<T> loss(Shape{1}, rec);
  loss.data()[0] = static_cast<T>(ce_weight * ce + dice_weight * dice_loss);
  check_finite(loss, "dice_ce_loss");

  if (rec) {
    auto zi = logits; auto lo = loss;
    std::vector<uint8_t> tgt(target.begin(), target.end());
    g->record("dice_ce_loss", [zi, lo, p = std::move(prob), tgt = std::move(tgt), inter, psum, gsum,
                               B, C, sp, nvox, dice_weight, ce_weight, smooth]() mutable {
      if (!lo.has_grad()) return;
      const T go = lo.grad()[0];
      zi.ensure_grad();
      // dice coefficients per class: d(loss)/dp_cv = ca[c]*g_cv + cp[c]
      std::vector<double> ca(static_cast<size_t>(C), 0.0), cp(static_cast<size_t>(C), 0.0);
      for (int64_t c = 1; c < C; ++c) {
        const double den = psum[static_cast<size_t>(c)] + gsum[static_cast<size_t>(c)] + smooth;
        ca[static_cast<size_t>(c)] = -2.0 / den / static_cast<double>(C - 1);
        cp[static_cast<size_t>(c)] = (2.0 * inter[static_cast<size_t>(c)] + smooth) / (den * den) / static_cast<double>(C - 1);
      }
      T* dz = zi.grad();
      const double inv_nvox = 1.0 / static_cast<double>(nvox);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < sp; ++i) {
          const uint8_t t = tgt[static_cast<size_t>(b * sp + i)];
          // chain the dice term through softmax: dz_k = p_k (dp_k - sum_c dp_c p_c)
          double dot = 0.0;
          for (int64_t c = 1; c < C; ++c) {
            const double pc = static_cast<double>(p[static_cast<size_t>((b * C + c) * sp + i)]);
            const double dpc = ca[static_cast<size_t>(c)] * (t == c ? 1.0 : 0.0) + cp[static_cast<size_t>(c)];
            dot += dpc * pc;
          }
          for (int64_t c = 0; c < C; ++c) {
            const double pc = static_cast<double>(p[static_cast<size_t>((b * C + c) * sp + i)]);
            const double dpc = c == 0 ? 0.0 : ca[static_cast<size_t>(c)] * (t == c ? 1.0 : 0.0) + cp[static_cast<size_t>(c)];
            const double dice_dz = pc * (dpc - dot);
            const double ce_dz = (pc - (t == c ? 1.0 : 0.0)) * inv_nvox;
            dz[(b * C + c) * sp + i] += go * static_cast<T>(static_cast<double>(dice_weight) * dice_dz +
                                                            static_cast<double>(ce_weight) * ce_dz);
          }
        }
    });
  }
  return loss;
}

}  // namespace voxseg

#endif  // VOXSEG_LOSS_HPP
