#include "m2m/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "m2m/metrics.hpp"
#include "m2m/parallel.hpp"
#include "m2m/warp.hpp"

namespace m2m {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("train.steps_per_epoch", "must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate", "must be >= 0");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("train.lr_drop_factor", "must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (patch_size < 8 || patch_size % 2 != 0) throw ConfigError("train.patch_size", "must be even and >= 8");
  if (loss_p != 1 && loss_p != 2) throw ConfigError("train.loss_p", "must be 1 or 2");
  if (pair_max_shift < 0) throw ConfigError("train.pair_max_shift", "must be >= 0");
  if (pair_max_rot_deg < 0) throw ConfigError("train.pair_max_rot_deg", "must be >= 0");
  if (border_crop < 0) throw ConfigError("train.border_crop", "must be >= 0");
}

double TrainConfig::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int drop : lr_drop_epochs)
    if (epoch >= drop) lr /= lr_drop_factor;
  return lr;
}

namespace {

Mode train_mode(const TrainConfig& cfg) { return cfg.bn_train_mode ? Mode::Train : Mode::Eval; }

template <typename Scalar>
Tensor<Scalar> ones_like(const Tensor<Scalar>& t) {
  return Tensor<Scalar>(t.shape(), Scalar(1));
}

double finite_or_throw(double loss) {
  if (!std::isfinite(loss)) throw ConvergenceError("training loss is not finite");
  return loss;
}

}  // namespace

template <typename Scalar>
Var<Scalar> m2m_batch_loss(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars,
                           std::span<const BurstPair> batch, int p, Mode mode) {
  if (batch.empty()) throw ShapeError("m2m_batch_loss: empty batch");
  std::vector<Image> packed, bases, targets;
  std::vector<AffineMap> maps;
  const int th = batch.front().target.height(), tw = batch.front().target.width();
  Tensor<Scalar> mask({int(batch.size()), 3, th, tw});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const BurstPair& pr = batch[n];
    if (!pr.valid) throw ParameterError("m2m loss on a pair flagged invalid");
    if (pr.target.height() != th || pr.target.width() != tw) throw ShapeError("m2m_batch_loss: targets differ in size");
    packed.push_back(pack_phases(pr.input));
    bases.push_back(demosaic_bilinear(pr.input));
    targets.push_back(embed_mosaic(pr.target));
    maps.push_back(pr.map);
    const Image cfa = cfa_mask(tw, th, pr.target.pattern);
    for (int c = 0; c < 3; ++c) mask.plane(int(n), c) = cfa.channel(c).template cast<Scalar>();
  }
  Graph<Scalar>& g = *vars.front().graph;
  const Var<Scalar> x = g.leaf(tensor_from_images<Scalar>(packed));
  const Var<Scalar> base = g.leaf(tensor_from_images<Scalar>(bases));
  const Var<Scalar> pred = demosaick_forward(params, vars, x, base, mode);
  const Warped<Scalar> warped = warp_bicubic(pred, std::span<const AffineMap>(maps), th, tw);
  for (int n = 0; n < int(batch.size()); ++n)
    for (int c = 0; c < 3; ++c) mask.plane(n, c).array() *= warped.mask.plane(n, 0).array();
  return masked_loss(warped.image, tensor_from_images<Scalar>(targets), mask, p);
}

template <typename Scalar>
Var<Scalar> m2m_loss(NetParams<Scalar>& params, const std::vector<Var<Scalar>>& vars, const BurstPair& pair, int p,
                     Mode mode) {
  return m2m_batch_loss(params, vars, std::span<const BurstPair>(&pair, 1), p, mode);
}

template Var<float> m2m_batch_loss(NetParams<float>&, const std::vector<Var<float>>&, std::span<const BurstPair>, int,
                                   Mode);
template Var<double> m2m_batch_loss(NetParams<double>&, const std::vector<Var<double>>&, std::span<const BurstPair>,
                                    int, Mode);
template Var<float> m2m_loss(NetParams<float>&, const std::vector<Var<float>>&, const BurstPair&, int, Mode);
template Var<double> m2m_loss(NetParams<double>&, const std::vector<Var<double>>&, const BurstPair&, int, Mode);

namespace {

BayerFrame crop_bayer(const BayerFrame& b, int x0, int y0, int w, int h) {
  return {b.samples.block(y0, x0, h, w), b.pattern.shifted(y0, x0)};
}

int even_floor(double v) { return int(std::floor(v / 2.0)) * 2; }

}  // namespace

BurstPair sample_patch_pair(const BayerFrame& input, const BayerFrame& target, const AffineMap& map, int patch,
                            std::mt19937_64& rng) {
  const int pw = std::min(patch, target.width()) & ~1, ph = std::min(patch, target.height()) & ~1;
  if (pw < 2 || ph < 2) throw DimensionError("sample_patch_pair: frames too small");

  // The preimage of any patch has the same extent; size the input crop from it.
  const Eigen::Matrix2d& a = map.linear;
  const double ex = std::abs(a(0, 0)) * (pw - 1) + std::abs(a(0, 1)) * (ph - 1);
  const double ey = std::abs(a(1, 0)) * (pw - 1) + std::abs(a(1, 1)) * (ph - 1);
  constexpr int kPad = 4;
  const int cw = std::min(input.width(), (int(std::ceil(ex)) + 2 + 2 * kPad + 1) & ~1);
  const int ch = std::min(input.height(), (int(std::ceil(ey)) + 2 + 2 * kPad + 1) & ~1);

  // Prefer target origins whose preimage is fully inside the input.
  std::uniform_int_distribution<int> ux(0, (target.width() - pw) / 2), uy(0, (target.height() - ph) / 2);
  int best_x = 0, best_y = 0;
  double best_inside = -1.0;
  for (int attempt = 0; attempt < 16; ++attempt) {
    const int ox = 2 * ux(rng), oy = 2 * uy(rng);
    int inside = 0;
    for (double fy : {0.0, 0.5, 1.0})
      for (double fx : {0.0, 0.5, 1.0}) {
        const Eigen::Vector2d q = map.apply(ox + fx * (pw - 1), oy + fy * (ph - 1));
        inside += q.x() >= 2 && q.y() >= 2 && q.x() <= input.width() - 3 && q.y() <= input.height() - 3;
      }
    if (inside > best_inside) {
      best_inside = inside;
      best_x = ox;
      best_y = oy;
    }
    if (inside == 9) break;
  }

  const Eigen::Vector2d center = map.apply(best_x + 0.5 * (pw - 1), best_y + 0.5 * (ph - 1));
  const int ix = std::clamp(even_floor(center.x() - 0.5 * cw), 0, input.width() - cw);
  const int iy = std::clamp(even_floor(center.y() - 0.5 * ch), 0, input.height() - ch);

  BurstPair out;
  out.input = crop_bayer(input, ix, iy, cw, ch);
  out.target = crop_bayer(target, best_x, best_y, pw, ph);
  out.map = AffineMap::translate(-ix, -iy) * map * AffineMap::translate(best_x, best_y);
  out.valid = true;
  return out;
}

std::vector<Tensor<float>> collect_grads(Graph<float>& g, const std::vector<Var<float>>& vars) {
  std::vector<Tensor<float>> grads;
  grads.reserve(vars.size());
  for (const auto& v : vars) grads.push_back(g.has_grad(v) ? g.grad(v) : Tensor<float>(v.shape()));
  return grads;
}

double train_step(NetParams<float>& params, AdamState<float>& adam, const LossBuilder& loss) {
  Graph<float> g;
  const auto vars = bind_params(g, params, true);
  const Var<float> l = loss(params, vars);
  const double value = finite_or_throw(double(l.value().values()[0]));
  g.backward(l);
  adam_step(params.tensors, collect_grads(g, vars), adam);
  return value;
}

namespace {

double demosaick_psnr(const NetParams<float>& params, const std::vector<Image>& validation, int border_crop) {
  if (validation.empty()) return std::nan("");
  double total = 0.0;
  for (const Image& img : validation)
    total += psnr(forward_demosaick(params, mosaic(img)).clipped(), img, border_crop);
  return total / double(validation.size());
}

/// Random affinity about `center`: uniform shift and rotation within the bounds.
AffineMap random_affinity(std::mt19937_64& rng, double max_shift, double max_rot_deg, const Eigen::Vector2d& center) {
  auto uniform = [&rng](double bound) { return std::uniform_real_distribution<double>(-bound, bound)(rng); };
  const double theta = uniform(max_rot_deg) * std::numbers::pi / 180.0;
  const double tx = uniform(max_shift), ty = uniform(max_shift);
  return AffineMap::translate(tx, ty) * AffineMap::rotation_about(theta, center);
}

int pair_margin(int patch, double max_shift, double max_rot_deg) {
  const double rot = max_rot_deg * std::numbers::pi / 180.0;
  const double reach = std::sqrt(2.0) * max_shift + std::sqrt(0.5) * patch * rot + 3.0;
  const int m = int(std::ceil(reach));
  return m + (m & 1);
}

}  // namespace

PretrainResult pretrain(const std::vector<Image>& dataset, const TrainConfig& cfg, PretrainMode mode,
                        NetParams<float> init, const std::vector<Image>& validation) {
  cfg.validate();
  if (dataset.empty()) throw DataError("pretrain: empty dataset");
  if (init.spec.kind != NetKind::Demosaick) throw SpecError("pretrain: expected a demosaicking net");
  const int patch = cfg.patch_size;
  const int margin = pair_margin(patch, cfg.pair_max_shift, cfg.pair_max_rot_deg);
  const int crop = patch + 2 * margin;
  for (const Image& img : dataset) {
    if (img.channels() != 3) throw DataError("pretrain: dataset images must be RGB");
    if (img.width() < crop || img.height() < crop)
      throw DataError("pretrain: dataset image smaller than the " + std::to_string(crop) + " px training crop");
  }

  PretrainResult result{std::move(init), 0.0, {}, {}};
  result.initial_psnr = demosaick_psnr(result.params, validation, cfg.border_crop);
  std::mt19937_64 rng(cfg.seed);
  AdamState<float> adam;
  const Eigen::Vector2d center(0.5 * (crop - 1), 0.5 * (crop - 1));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = cfg.learning_rate_at(epoch);
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      // Same draws in both modes: one affinity per batch, then one crop per element.
      const AffineMap affinity = random_affinity(rng, cfg.pair_max_shift, cfg.pair_max_rot_deg, center);
      std::vector<Image> crops;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Image& src = dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng)];
        const int x0 = 2 * std::uniform_int_distribution<int>(0, (src.width() - crop) / 2)(rng);
        const int y0 = 2 * std::uniform_int_distribution<int>(0, (src.height() - crop) / 2)(rng);
        crops.push_back(src.crop(x0, y0, crop, crop));
      }

      LossBuilder builder;
      if (mode == PretrainMode::GroundTruth) {
        builder = [&](NetParams<float>& p, const std::vector<Var<float>>& vars) {
          std::vector<Image> packed, bases;
          for (const Image& c : crops) {
            const BayerFrame m = mosaic(c);
            packed.push_back(pack_phases(m));
            bases.push_back(demosaic_bilinear(m));
          }
          Graph<float>& g = *vars.front().graph;
          const Var<float> pred = demosaick_forward(p, vars, g.leaf(tensor_from_images<float>(packed)),
                                                    g.leaf(tensor_from_images<float>(bases)), train_mode(cfg));
          // Scored on the same central window the m2m target covers.
          const Tensor<float> target = tensor_from_images<float>(crops);
          Tensor<float> window(target.shape());
          for (int n = 0; n < window.batch(); ++n)
            for (int c = 0; c < 3; ++c) window.plane(n, c).block(margin, margin, patch, patch).setOnes();
          return masked_loss(pred, target, window, cfg.loss_p);
        };
      } else {
        builder = [&](NetParams<float>& p, const std::vector<Var<float>>& vars) {
          std::vector<BurstPair> pairs;
          const AffineMap to_input = affinity * AffineMap::translate(margin, margin);
          for (const Image& c : crops) {
            const Image view = warp_bicubic_image(c, affinity, crop, crop, WarpBorder::Clamp);
            pairs.push_back({mosaic(c), mosaic(view.crop(margin, margin, patch, patch)), to_input, true});
          }
          return m2m_batch_loss(p, vars, std::span<const BurstPair>(pairs), cfg.loss_p, train_mode(cfg));
        };
      }
      loss_sum += train_step(result.params, adam, builder);
    }
    result.loss_log.push_back(loss_sum / cfg.steps_per_epoch);
    result.psnr_log.push_back(demosaick_psnr(result.params, validation, cfg.border_crop));
  }
  return result;
}

std::vector<PairRegistrationResult> register_pairs(const std::vector<BayerFrame>& frames, const PairSchedule& schedule,
                                                   const RegistrationConfig& cfg) {
  cfg.validate();
  std::vector<PairRegistrationResult> out(schedule.size());
  parallel_for(int(schedule.size()), [&](int k) {
    const auto [in, tg] = schedule.pairs[std::size_t(k)];
    PairRegistrationResult& r = out[std::size_t(k)];
    r.input = in;
    r.target = tg;
    try {
      const Registration reg = estimate_affine_bayer(frames.at(std::size_t(in)), frames.at(std::size_t(tg)), cfg);
      r.map = reg.map;
      r.overlap = overlap_fraction(reg.map, frames[std::size_t(tg)].width(), frames[std::size_t(tg)].height());
      r.valid = r.overlap >= cfg.min_overlap;
      if (!r.valid) r.note = "overlap below threshold";
    } catch (const Error& e) {
      r.valid = false;
      r.note = e.what();
    }
  });
  return out;
}

namespace {

int clamp_patch(int patch, int width, int height) { return std::min({patch, width, height}) & ~1; }

}  // namespace

FinetuneResult finetune_burst(NetParams<float> params, const std::vector<BayerFrame>& burst, int reference,
                              const TrainConfig& cfg, int steps_per_pair, const RegistrationConfig& reg,
                              const Image* clean_reference, const std::vector<AffineMap>* maps) {
  cfg.validate();
  if (burst.size() < 2) throw DataError("finetune_burst: burst needs at least 2 frames");
  if (steps_per_pair < 1) throw ConfigError("finetune.steps_per_pair", "must be >= 1");
  for (const auto& f : burst)
    if (f.width() != burst.front().width() || f.height() != burst.front().height())
      throw DataError("finetune_burst: frames differ in size");
  const PairSchedule schedule = PairSchedule::lexicographic(int(burst.size()), reference);

  FinetuneResult result{std::move(params), {}, {}, 0};
  if (maps) {
    if (maps->size() != schedule.size()) throw ParameterError("finetune_burst: one map per scheduled pair expected");
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      PairRegistrationResult r{schedule.pairs[k].first, schedule.pairs[k].second, (*maps)[k], false, 0.0, {}};
      r.overlap = overlap_fraction(r.map, burst.front().width(), burst.front().height());
      r.valid = r.overlap >= reg.min_overlap;
      if (!r.valid) r.note = "overlap below threshold";
      result.registrations.push_back(r);
    }
  } else {
    result.registrations = register_pairs(burst, schedule, reg);
  }
  const auto valid_pairs = std::count_if(result.registrations.begin(), result.registrations.end(),
                                         [](const PairRegistrationResult& r) { return r.valid; });
  if (valid_pairs == 0)
    throw RegistrationError("finetune_burst: no pair passed registration screening (first: " +
                            result.registrations.front().note + ")");

  auto score = [&] {
    return psnr(forward_demosaick(result.params, burst[std::size_t(reference)]).clipped(), *clean_reference,
                cfg.border_crop);
  };
  if (clean_reference) result.trace.push_back({0, -1, -1, score()});

  std::mt19937_64 rng(cfg.seed);
  AdamState<float> adam;
  const int patch = clamp_patch(cfg.patch_size, burst.front().width(), burst.front().height());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = cfg.learning_rate_at(epoch);
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      const PairRegistrationResult& r = result.registrations[k];
      if (!r.valid) continue;
      const BayerFrame& input = burst[std::size_t(r.input)];
      const BayerFrame& target = burst[std::size_t(r.target)];
      for (int step = 0; step < steps_per_pair; ++step) {
        std::vector<BurstPair> batch;
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(sample_patch_pair(input, target, r.map, patch, rng));
        train_step(result.params, adam, [&](NetParams<float>& p, const std::vector<Var<float>>& vars) {
          return m2m_batch_loss(p, vars, std::span<const BurstPair>(batch), cfg.loss_p, train_mode(cfg));
        });
      }
      if (epoch == 0) ++result.pairs_used;
      if (clean_reference) result.trace.push_back({int(k) + 1 + epoch * int(schedule.size()), r.input, r.target, score()});
    }
  }
  return result;
}

namespace {

Image as_gray(const Image& img) { return img.channels() == 1 ? img : to_gray(img); }

double denoise_psnr(const NetParams<float>& params, const std::vector<Image>& clean, double sigma, std::uint64_t seed,
                    int border_crop) {
  if (clean.empty()) return std::nan("");
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Image noisy = add_noise(clean[i], NoiseSpec{sigma, false, seed + i});
    total += psnr(forward_denoise(params, noisy).clipped(), clean[i], border_crop);
  }
  return total / double(clean.size());
}

}  // namespace

PretrainResult train_denoiser(const std::vector<Image>& clean, const TrainConfig& cfg, NetParams<float> init,
                              double sigma_min, double sigma_max, const std::vector<Image>& validation,
                              double validation_sigma) {
  cfg.validate();
  if (clean.empty()) throw DataError("train_denoiser: empty dataset");
  if (init.spec.kind != NetKind::Denoise) throw SpecError("train_denoiser: expected a denoising net");
  if (!(sigma_min >= 0.0) || sigma_max < sigma_min) throw ParameterError("train_denoiser: bad sigma range");
  std::vector<Image> gray, val;
  for (const Image& img : clean) {
    gray.push_back(as_gray(img));
    if (img.width() < cfg.patch_size || img.height() < cfg.patch_size)
      throw DataError("train_denoiser: image smaller than the training patch");
  }
  for (const Image& img : validation) val.push_back(as_gray(img));
  constexpr std::uint64_t kValidationSeed = 0x5eed;

  PretrainResult result{std::move(init), 0.0, {}, {}};
  result.initial_psnr = denoise_psnr(result.params, val, validation_sigma, kValidationSeed, cfg.border_crop);
  std::mt19937_64 rng(cfg.seed);
  AdamState<float> adam;
  const int patch = cfg.patch_size;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = cfg.learning_rate_at(epoch);
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<Image> targets, inputs;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Image& src = gray[std::uniform_int_distribution<std::size_t>(0, gray.size() - 1)(rng)];
        const int x0 = std::uniform_int_distribution<int>(0, src.width() - patch)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, src.height() - patch)(rng);
        const double sigma = std::uniform_real_distribution<double>(sigma_min, sigma_max)(rng);
        targets.push_back(src.crop(x0, y0, patch, patch));
        inputs.push_back(add_noise(targets.back(), NoiseSpec{sigma, false, rng()}));
      }
      loss_sum += train_step(result.params, adam, [&](NetParams<float>& p, const std::vector<Var<float>>& vars) {
        Graph<float>& g = *vars.front().graph;
        const Var<float> out = denoise_forward(p, vars, g.leaf(tensor_from_images<float>(inputs)), train_mode(cfg));
        const Tensor<float> target = tensor_from_images<float>(targets);
        return masked_loss(out, target, ones_like(target), cfg.loss_p);
      });
    }
    result.loss_log.push_back(loss_sum / cfg.steps_per_epoch);
    result.psnr_log.push_back(denoise_psnr(result.params, val, validation_sigma, kValidationSeed, cfg.border_crop));
  }
  return result;
}

FinetuneResult finetune_denoiser_burst(NetParams<float> params, const std::vector<Image>& frames, int reference,
                                       const TrainConfig& cfg, int steps_per_pair, const Image* clean_reference) {
  cfg.validate();
  if (frames.size() < 2) throw DataError("finetune_denoiser_burst: burst needs at least 2 frames");
  if (steps_per_pair < 1) throw ConfigError("finetune.steps_per_pair", "must be >= 1");
  std::vector<Image> gray;
  for (const Image& f : frames) {
    gray.push_back(as_gray(f));
    if (!gray.back().same_shape(gray.front())) throw DataError("finetune_denoiser_burst: frames differ in size");
  }
  const PairSchedule schedule = PairSchedule::lexicographic(int(gray.size()), reference);
  const Image clean = clean_reference ? as_gray(*clean_reference) : Image();

  FinetuneResult result{std::move(params), {}, {}, 0};
  auto score = [&] {
    return psnr(forward_denoise(result.params, gray[std::size_t(reference)]).clipped(), clean, cfg.border_crop);
  };
  if (clean_reference) result.trace.push_back({0, -1, -1, score()});

  std::mt19937_64 rng(cfg.seed);
  AdamState<float> adam;
  const int w = gray.front().width(), h = gray.front().height();
  const int patch = clamp_patch(cfg.patch_size, w, h);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = cfg.learning_rate_at(epoch);
    for (std::size_t k = 0; k < schedule.size(); ++k) {
      const auto [in, tg] = schedule.pairs[k];
      if (epoch == 0) result.registrations.push_back({in, tg, AffineMap::identity(), true, 1.0, {}});
      for (int step = 0; step < steps_per_pair; ++step) {
        std::vector<Image> inputs, targets;
        for (int b = 0; b < cfg.batch_size; ++b) {
          const int x0 = std::uniform_int_distribution<int>(0, w - patch)(rng);
          const int y0 = std::uniform_int_distribution<int>(0, h - patch)(rng);
          inputs.push_back(gray[std::size_t(in)].crop(x0, y0, patch, patch));
          targets.push_back(gray[std::size_t(tg)].crop(x0, y0, patch, patch));
        }
        train_step(result.params, adam, [&](NetParams<float>& p, const std::vector<Var<float>>& vars) {
          Graph<float>& g = *vars.front().graph;
          const Var<float> out = denoise_forward(p, vars, g.leaf(tensor_from_images<float>(inputs)), train_mode(cfg));
          const Tensor<float> target = tensor_from_images<float>(targets);
          return masked_loss(out, target, ones_like(target), cfg.loss_p);
        });
      }
      if (epoch == 0) ++result.pairs_used;
      if (clean_reference) result.trace.push_back({int(k) + 1 + epoch * int(schedule.size()), in, tg, score()});
    }
  }
  return result;
}

Image temporal_mean(const std::vector<Image>& frames) {
  if (frames.empty()) throw DataError("temporal_mean: no frames");
  Image mean = frames.front();
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!frames[i].same_shape(mean)) throw ShapeError("temporal_mean: frames differ in shape");
    mean.data() += frames[i].data();
  }
  mean.data() /= double(frames.size());
  return mean;
}

TnrTable tnr_baselines(const std::vector<Image>& burst, const NetParams<float>& denoiser, const Image& clean,
                       int reference, int border_crop) {
  if (burst.empty()) throw DataError("tnr_baselines: empty burst");
  if (reference < 0 || reference >= int(burst.size())) throw ParameterError("tnr_baselines: reference out of range");
  const Image mean = temporal_mean(burst);
  const Image& single = burst[std::size_t(reference)];
  TnrTable t;
  t.noisy_frame = psnr(single, clean, border_crop);
  t.single_denoised = psnr(forward_denoise(denoiser, single).clipped(), clean, border_crop);
  t.temporal_mean = psnr(mean, clean, border_crop);
  t.denoised_mean = psnr(forward_denoise(denoiser, mean).clipped(), clean, border_crop);
  return t;
}

double fit_constant(std::span<const double> observations, int p, int iterations, double step, double start) {
  if (observations.empty()) throw DataError("fit_constant: no observations");
  if (p != 1 && p != 2) throw ParameterError("fit_constant: p must be 1 or 2");
  const double n = double(observations.size());
  double c = start;
  for (int k = 0; k < iterations; ++k) {
    double g = 0.0;
    for (double z : observations) g += p == 1 ? double((c > z) - (c < z)) : 2.0 * (c - z);
    g /= n;
    // Subgradient steps must shrink to settle; the quadratic converges with a fixed one.
    c -= (p == 1 ? step / std::sqrt(1.0 + k) : step) * g;
  }
  return c;
}

}  // namespace m2m
