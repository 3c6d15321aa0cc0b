#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "esres/audio.hpp"
#include "esres/dsp.hpp"
#include "esres/folds.hpp"
#include "esres/model.hpp"
#include "esres/rng.hpp"

namespace esres::train {

using audio::AudioClip;

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  double base_lr = 2.5e-4;
  int warmup_low_epochs = 5;
  int warmup_ramp_epochs = 10;
  double gamma = 0.985;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  double inversion_prob = 0.5;
  double scale_lo = 0.8;
  double scale_hi = 1.25;
  bool augment = true;
  bool stereo = false;

  void validate() const;
};

// Warm-up at base/10 for the first low epochs, linear ramp to base over the
// next ramp epochs, then exponential decay from the ramp's endpoint.
double lr_schedule(int epoch, const TrainConfig& cfg);

// Adam with coupled L2 decay on matrix/conv weights (rank >= 2); BN affine
// and biases are never decayed. Moments are kept in double.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, nn::Tensor<float>>> params,
                const TrainConfig& cfg);

  // Parameters whose gradient buffer is unallocated this step are skipped.
  void step(double lr);
  int64_t steps() const { return t_; }

 private:
  struct Slot {
    std::string name;
    nn::Tensor<float> param;
    std::vector<double> m, v;
    bool decay;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_, wd_;
  int64_t t_ = 0;
};

// Waveform-domain augmentations.
void time_inversion(AudioClip& clip);
AudioClip time_scale(const AudioClip& clip, double factor);

struct Sample {
  AudioClip audio;
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  int channels = 1;

  // Decodes every manifest clip under root, resamples to the front-end rate,
  // normalizes channel count (stereo duplicates mono, mono downmixes), and
  // pads/crops everything to a common length (target_len 0 picks the longest
  // clip).
  static Dataset load(const std::string& root, const std::vector<data::ManifestEntry>& entries,
                      const dsp::FrontEndConfig& fe, bool stereo, int64_t target_len = 0);

  static Dataset from_clips(std::vector<Sample> samples, bool stereo, int64_t target_len = 0);
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = -1.0;  // negative when not measured
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
};

// Full optimization loop: seeded shuffle each epoch, optional waveform
// augmentation, feature extraction, forward/backward, Adam with the epoch's
// scheduled rate. Metrics go to log as one tab-separated line per epoch.
TrainResult train(nn::EsResNet<float>& model, const Dataset& data,
                  const std::vector<int>& train_ids, const std::vector<int>& val_ids,
                  const dsp::FrontEndConfig& fe, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

double evaluate(nn::EsResNet<float>& model, const Dataset& data, const std::vector<int>& ids,
                const dsp::FrontEndConfig& fe, const TrainConfig& cfg);

struct CrossValResult {
  std::vector<double> fold_acc;
  double mean_acc = 0.0;
};

// Trains a fresh model per round (seeded model_seed + round) and reports
// held-out accuracy per round.
CrossValResult cross_validate(const nn::ModelConfig& mc, uint64_t model_seed,
                              const Dataset& data, const data::SplitAssignment& split,
                              const dsp::FrontEndConfig& fe, const TrainConfig& cfg,
                              std::ostream* log = nullptr);

}  // namespace esres::train
