#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "m2m/adam.hpp"
#include "m2m/burst.hpp"
#include "m2m/network.hpp"
#include "m2m/registration.hpp"

namespace m2m {

struct TrainConfig {
  int epochs = 45;
  int steps_per_epoch = 100;
  double learning_rate = 1e-2;
  std::vector<int> lr_drop_epochs{20, 40};
  double lr_drop_factor = 10.0;
  int batch_size = 4;
  int patch_size = 64;
  int loss_p = 2;
  std::uint64_t seed = 0;
  /// Batch statistics in BN while training; false freezes BN to running stats.
  bool bn_train_mode = true;
  /// Motion of the simulated pairs in m2m pretraining.
  double pair_max_shift = 2.0;
  double pair_max_rot_deg = 2.0;
  /// Pixels dropped per side when scoring validation PSNR.
  int border_crop = 6;

  static TrainConfig pretrain_defaults() { return {}; }
  /// Burst fine-tuning: L1, small steps, single-patch batches.
  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.epochs = 1;
    c.learning_rate = 1e-4;
    c.lr_drop_epochs.clear();
    c.batch_size = 1;
    c.loss_p = 1;
    return c;
  }

  void validate() const;
  /// Learning rate in effect during `epoch` (0-based) after the scheduled drops.
  double learning_rate_at(int epoch) const;
};

/// (input, target) mosaics of the same scene. `map` registers input onto
/// target: warp(D(input), map) is compared with target.
struct BurstPair {
  BayerFrame input;
  BayerFrame target;
  AffineMap map;
  bool valid = true;
};

/// Mosaic-to-mosaic loss over a batch of pairs sharing input and target sizes:
/// D(input) is warped bicubically by each map, masked with the target's CFA
/// and the warp's definedness mask, and compared to the embedded target with
/// masked_loss(p).
template <typename Scalar>
Var<Scalar> m2m_batch_loss(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars,
                           std::span<const BurstPair> batch, int p, Mode mode);

/// Whole-frame loss of one pair.
template <typename Scalar>
Var<Scalar> m2m_loss(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, const BurstPair& pair, int p,
                     Mode mode = Mode::Train);

/// Random target patch of side `patch` (even origin) plus the input crop that
/// covers its preimage with a margin; the map is re-expressed in crop
/// coordinates. Patches whose preimage leaves the input are avoided when possible.
BurstPair sample_patch_pair(const BayerFrame& input, const BayerFrame& target, const AffineMap& map, int patch,
                            std::mt19937_64& rng);

/// Parameter gradients after backward; zeros where a leaf received none.
std::vector<Tensor<float>> collect_grads(Graph<float>& g, const std::vector<Var<float>>& vars);

/// Builds a loss, back-propagates, and applies one Adam step. Returns the loss.
using LossBuilder = std::function<Var<float>(NetParams<float>&, const std::vector<Var<float>>&)>;
double train_step(NetParams<float>& params, AdamState<float>& adam, const LossBuilder& loss);

enum class PretrainMode { GroundTruth, MosaicToMosaic };

struct PretrainResult {
  NetParams<float> params;
  double initial_psnr = 0.0;
  std::vector<double> psnr_log;  ///< validation PSNR after each epoch
  std::vector<double> loss_log;  ///< mean training loss per epoch
};

/// Trains a demosaicking net on random patches of an RGB dataset. GroundTruth
/// compares D(mosaic(y)) with y over all channels; MosaicToMosaic builds, per
/// batch, a simulated pair by a random affinity shared by the batch and uses
/// the m2m loss. Both modes consume the same random stream.
PretrainResult pretrain(const std::vector<Image>& dataset, const TrainConfig& cfg, PretrainMode mode,
                        NetParams<float> init, const std::vector<Image>& validation);

struct TracePoint {
  int pair_index = 0;  ///< 0 = before fine-tuning
  int input_index = -1;
  int target_index = -1;
  double psnr_db = 0.0;
};

struct PairRegistrationResult {
  int input = 0;
  int target = 0;
  AffineMap map;
  bool valid = false;
  double overlap = 0.0;
  std::string note;
};

/// Registers every ordered pair with estimate_affine_bayer; failures and maps
/// below the overlap threshold come back with valid = false and a note.
std::vector<PairRegistrationResult> register_pairs(const std::vector<BayerFrame>& frames, const PairSchedule& schedule,
                                                   const RegistrationConfig& cfg);

struct FinetuneResult {
  NetParams<float> params;
  std::vector<TracePoint> trace;  ///< empty without a clean reference
  std::vector<PairRegistrationResult> registrations;
  int pairs_used = 0;
};

/// Fine-tunes on one burst: registers all ordered pairs (or uses `maps` when
/// supplied, indexed as schedule entries), walks the schedule with the
/// reference's block last, and runs steps_per_pair Adam steps of the m2m loss
/// per valid pair. Throws RegistrationError when no pair is usable.
FinetuneResult finetune_burst(NetParams<float> params, const std::vector<BayerFrame>& burst, int reference,
                              const TrainConfig& cfg, int steps_per_pair, const RegistrationConfig& reg = {},
                              const Image* clean_reference = nullptr,
                              const std::vector<AffineMap>* maps = nullptr);

/// Supervised training of the grayscale denoiser on clean images with
/// Gaussian noise of σ (8-bit units) drawn uniformly in [sigma_min, sigma_max].
PretrainResult train_denoiser(const std::vector<Image>& clean, const TrainConfig& cfg, NetParams<float> init,
                              double sigma_min, double sigma_max, const std::vector<Image>& validation,
                              double validation_sigma);

/// Noise-to-noise fine-tuning of a denoiser on a static burst of noisy frames
/// (no motion, identity registration), same schedule as finetune_burst.
FinetuneResult finetune_denoiser_burst(NetParams<float> params, const std::vector<Image>& frames, int reference,
                                       const TrainConfig& cfg, int steps_per_pair,
                                       const Image* clean_reference = nullptr);

struct TnrTable {
  double noisy_frame = 0.0;       ///< one noisy frame as is
  double single_denoised = 0.0;   ///< (a) denoiser on the reference frame
  double temporal_mean = 0.0;     ///< (b) plain average of the frames
  double denoised_mean = 0.0;     ///< (c) denoiser on the average
};

/// Temporal-averaging baselines on a pre-aligned grayscale burst.
TnrTable tnr_baselines(const std::vector<Image>& burst, const NetParams<float>& denoiser, const Image& clean,
                       int reference = 0, int border_crop = 0);

Image temporal_mean(const std::vector<Image>& frames);

/// Constant c minimizing mean |c − z_i|^p by (sub)gradient descent with a
/// decaying step, starting from `start`.
double fit_constant(std::span<const double> observations, int p, int iterations = 20000, double step = 0.05,
                    double start = 0.5);

}  // namespace m2m
