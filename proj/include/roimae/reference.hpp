#ifndef ROIMAE_REFERENCE_HPP
#define ROIMAE_REFERENCE_HPP

#include "roimae/mae.hpp"
#include "roimae/preprocess.hpp"
#include "roimae/volume.hpp"

// Serial reference implementations of the parallel kernels. Each one is a
// plain loop with the same per-element arithmetic and the same fixed
// reduction order as its OpenMP counterpart, so results must match
// bit-for-bit; the tests assert that and the benchmark compares speed.

namespace roimae::ref {

Mask3D brain_mask(const Volume4D& vol);
Volume4D apply_mask(const Volume4D& vol, const Mask4D& mask, float fill = 0.0f);
Volume4D resample_spatial(const Volume4D& vol, const std::array<double, 3>& target_spacing_mm);
Volume4D crop_or_pad(const Volume4D& vol, const std::array<index_t, 3>& target_shape);
Volume4D resample_temporal(const Volume4D& vol, double target_tr_s);
Volume4D zscore_nonbackground(const Volume4D& vol, double epsilon = 1e-8,
                              const Mask3D* brain = nullptr);
LabelVolume align_atlas(const LabelVolume& atlas, const Volume4D& reference);
double masked_mse(const Volume4D& recon, const Volume4D& target, const Mask4D& mask);
Volume4D forward(const MaeModel& model, const Volume4D& masked_vol);

} // namespace roimae::ref

#endif
