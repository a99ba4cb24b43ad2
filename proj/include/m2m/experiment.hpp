#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "m2m/burst.hpp"
#include "m2m/network.hpp"
#include "m2m/registration.hpp"
#include "m2m/training.hpp"

namespace m2m {

/// Where images come from. Empty paths fall back to procedural scenes.
struct DataConfig {
  std::filesystem::path train_dir;
  std::filesystem::path validation_dir;
  std::filesystem::path eval_dir;
  std::filesystem::path image;       ///< burst source for simulate/finetune
  std::filesystem::path burst_dir;   ///< finetune input written by simulate
  std::filesystem::path checkpoint;  ///< demosaicking net for finetune/eval/demosaic
  std::filesystem::path denoiser_checkpoint;
  std::filesystem::path input;       ///< mosaic PNG (with sidecar) for demosaic
  int synthetic_count = 5;
  int synthetic_size = 128;
  std::uint64_t synthetic_seed = 1;
  int validation_count = 2;
  std::uint64_t validation_seed = 99;
};

struct DenoiserTraining {
  TrainConfig train;
  double sigma_min = 0.0;
  double sigma_max = 50.0;
  double validation_sigma = 25.0;
};

struct StripesConfig {
  int size = 64;
  int frames = 10;
  double sigma = 25.0;
  int steps_per_pair = 5;
};

struct GradCheckConfig {
  double tolerance = 1e-4;
  double composed_tolerance = 1e-3;
  int composed_size = 16;
  std::size_t max_coords_per_input = 64;
};

/// Every knob of a run. JSON keys mirror the member names; unknown keys are
/// rejected with their path.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "m2m_out";
  NetSpec net;
  NetSpec denoiser = NetSpec::denoise_default();
  PretrainMode pretrain_mode = PretrainMode::MosaicToMosaic;
  TrainConfig pretrain = TrainConfig::pretrain_defaults();
  TrainConfig finetune = TrainConfig::finetune_defaults();
  int steps_per_pair = 20;
  RegistrationConfig registration;
  BurstSpec burst;
  DataConfig data;
  DenoiserTraining denoiser_training;
  StripesConfig stripes;
  GradCheckConfig gradcheck;
  int border_crop = 6;
  /// eval with every parameter zero (the residual net reduces to bilinear).
  bool eval_zero_weights = false;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Defaults, then `doc` merged over them, then `overrides` ("a.b.c=value",
/// value parsed as JSON, else taken as a string). Throws ConfigError naming
/// the offending key path.
ExperimentConfig resolve_config(const nlohmann::json& doc, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

enum class ExperimentKind { Simulate, Pretrain, Finetune, Demosaic, Eval, GradCheck, Stripes };
ExperimentKind parse_experiment_kind(const std::string& s);
std::string to_string(ExperimentKind kind);

struct ImageScore {
  std::string name;
  double psnr_db = 0.0;
};

struct EvalReport {
  std::string kind;
  std::vector<ImageScore> images;
  double mean_psnr = 0.0;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string revision;
  double wall_seconds = 0.0;
  /// Kind-specific scalars (gains, baselines, counts).
  nlohmann::json extras = nlohmann::json::object();
};

/// Runs one pipeline and writes its artifacts, `config.json` (resolved) and
/// `report.json` into cfg.out_dir. Per-image metrics go to `metrics.csv`.
EvalReport run_experiment(const ExperimentConfig& cfg, ExperimentKind kind);

struct OpCheck {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Finite-difference checks of every differentiable op, plus the composed
/// mosaic-to-mosaic loss on a small crop.
std::vector<OpCheck> gradient_suite(const GradCheckConfig& cfg, std::uint64_t seed);

/// Mean PSNR of the residual demosaicker over images (each mosaicked with RGGB).
std::vector<ImageScore> evaluate_demosaicker(const NetParams<float>& params, const std::vector<Image>& images,
                                             int border_crop);

/// Library revision string baked in at configure time.
std::string revision();

}  // namespace m2m
