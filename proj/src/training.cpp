#include "esres/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>

namespace esres::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("train: gamma must be in (0, 1)");
  if (warmup_low_epochs < 0 || warmup_ramp_epochs < 1)
    throw ConfigError("train: warm-up spans must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
  if (inversion_prob < 0.0 || inversion_prob > 1.0)
    throw ConfigError("train: inversion_prob must be in [0, 1]");
  if (!(scale_lo > 0.0 && scale_hi >= scale_lo))
    throw ConfigError("train: scale range must satisfy 0 < lo <= hi");
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ConfigError("lr_schedule: epoch " + std::to_string(epoch) + " outside 0.." +
                      std::to_string(cfg.epochs - 1));
  const int low_end = cfg.warmup_low_epochs;                  // epochs [0, low_end)
  const int ramp_end = low_end + cfg.warmup_ramp_epochs;      // epochs [low_end, ramp_end)
  if (epoch < low_end) return cfg.base_lr / 10.0;
  if (epoch < ramp_end) {
    const double frac = static_cast<double>(epoch - (low_end - 1)) /
                        static_cast<double>(cfg.warmup_ramp_epochs);
    return cfg.base_lr * (0.1 + 0.9 * frac);
  }
  return cfg.base_lr * std::pow(cfg.gamma, epoch - (ramp_end - 1));
}

AdamOptimizer::AdamOptimizer(std::vector<std::pair<std::string, nn::Tensor<float>>> params,
                             const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), wd_(cfg.weight_decay) {
  for (auto& [name, p] : params) {
    Slot slot;
    slot.name = name;
    slot.param = p;
    slot.m.assign(static_cast<size_t>(p.numel()), 0.0);
    slot.v.assign(static_cast<size_t>(p.numel()), 0.0);
    slot.decay = p.rank() >= 2;
    slots_.push_back(std::move(slot));
  }
}

void AdamOptimizer::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    auto& theta = slot.param.value();
    const auto& grad = slot.param.grad();
    const double wd = slot.decay ? wd_ : 0.0;
    for (size_t i = 0; i < theta.size(); ++i) {
      const double g0 = static_cast<double>(grad[i]);
      if (!std::isfinite(g0))
        throw NumericError("adam: non-finite gradient in " + slot.name);
      const double g = g0 + wd * static_cast<double>(theta[i]);
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      theta[i] = static_cast<float>(static_cast<double>(theta[i]) -
                                    lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void time_inversion(AudioClip& clip) {
  for (int c = 0; c < clip.channels; ++c)
    std::reverse(clip.channel(c), clip.channel(c) + clip.length);
}

AudioClip time_scale(const AudioClip& clip, double factor) {
  if (factor == 1.0) return clip;
  return fit_length(resample_by_factor(clip, factor), clip.length);
}

Dataset Dataset::from_clips(std::vector<Sample> samples, bool stereo, int64_t target_len) {
  Dataset ds;
  ds.channels = stereo ? 2 : 1;
  int64_t len = target_len;
  int max_label = -1;
  for (const auto& s : samples) {
    if (target_len == 0) len = std::max(len, s.audio.length);
    max_label = std::max(max_label, s.label);
  }
  if (len < 1) throw DataError("dataset: no audio samples");
  for (auto& s : samples) {
    AudioClip clip = stereo ? audio::to_stereo(s.audio) : audio::to_mono(s.audio);
    if (clip.length != len) clip = audio::fit_length(clip, len);
    ds.samples.push_back({std::move(clip), s.label});
  }
  ds.num_classes = max_label + 1;
  return ds;
}

Dataset Dataset::load(const std::string& root, const std::vector<data::ManifestEntry>& entries,
                      const dsp::FrontEndConfig& fe, bool stereo, int64_t target_len) {
  std::vector<Sample> samples;
  for (const auto& e : entries) {
    const auto path = std::filesystem::path(root) / e.clip_path;
    AudioClip clip = audio::decode_wav_file(path.string());
    if (clip.sample_rate != fe.sample_rate) clip = audio::resample(clip, fe.sample_rate);
    samples.push_back({std::move(clip), e.class_label});
  }
  return from_clips(std::move(samples), stereo, target_len);
}

namespace {

// Stacks one channel's spectrograms into a (B, bands, rows, frames) input.
nn::Tensor<float> pack_batch(const std::vector<const dsp::Spectrogram*>& specs) {
  const auto& first = *specs.front();
  const size_t per = first.values.size();
  std::vector<float> data;
  data.reserve(specs.size() * per);
  for (const auto* s : specs) {
    if (s->values.size() != per || s->bands != first.bands || s->frames != first.frames)
      throw ShapeError("batch: clips produced differing feature shapes");
    data.insert(data.end(), s->values.begin(), s->values.end());
  }
  return nn::Tensor<float>::from(
      {static_cast<int>(specs.size()), first.bands, first.bins, first.frames},
      std::move(data));
}

int argmax_row(const std::vector<float>& v, size_t base, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (v[base + j] > v[base + best]) best = j;
  return best;
}

struct FeatureCache {
  const Dataset& data;
  const dsp::FrontEndConfig& fe;
  std::vector<std::vector<dsp::Spectrogram>> slots;

  FeatureCache(const Dataset& d, const dsp::FrontEndConfig& f)
      : data(d), fe(f), slots(d.samples.size()) {}

  const std::vector<dsp::Spectrogram>& get(int id) {
    auto& slot = slots[static_cast<size_t>(id)];
    if (slot.empty()) slot = dsp::extract_features(data.samples[static_cast<size_t>(id)].audio, fe);
    return slot;
  }
};

// Forward over one batch of cached or freshly extracted features.
nn::Tensor<float> batch_logits(nn::EsResNet<float>& model,
                               const std::vector<std::vector<dsp::Spectrogram>>& feats,
                               bool stereo, bool training) {
  std::vector<const dsp::Spectrogram*> left, right;
  for (const auto& f : feats) {
    left.push_back(&f[0]);
    if (stereo) right.push_back(&f[1]);
  }
  if (stereo) return model.forward_stereo(pack_batch(left), pack_batch(right), training);
  return model.forward(pack_batch(left), training);
}

double evaluate_cached(nn::EsResNet<float>& model, const Dataset& data,
                       const std::vector<int>& ids, FeatureCache& cache,
                       const TrainConfig& cfg) {
  if (ids.empty()) throw DataError("evaluate: empty id list");
  int correct = 0;
  const int k = model.config().num_classes;
  for (size_t at = 0; at < ids.size(); at += static_cast<size_t>(cfg.batch_size)) {
    const size_t end = std::min(ids.size(), at + static_cast<size_t>(cfg.batch_size));
    std::vector<std::vector<dsp::Spectrogram>> feats;
    for (size_t i = at; i < end; ++i) feats.push_back(cache.get(ids[i]));
    auto logits = batch_logits(model, feats, cfg.stereo, false);
    for (size_t i = at; i < end; ++i)
      if (argmax_row(logits.value(), (i - at) * static_cast<size_t>(k), k) ==
          data.samples[static_cast<size_t>(ids[i])].label)
        ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

}  // namespace

double evaluate(nn::EsResNet<float>& model, const Dataset& data, const std::vector<int>& ids,
                const dsp::FrontEndConfig& fe, const TrainConfig& cfg) {
  FeatureCache cache(data, fe);
  return evaluate_cached(model, data, ids, cache, cfg);
}

TrainResult train(nn::EsResNet<float>& model, const Dataset& data,
                  const std::vector<int>& train_ids, const std::vector<int>& val_ids,
                  const dsp::FrontEndConfig& fe, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (train_ids.empty()) throw DataError("train: empty training set");
  for (int id : train_ids)
    if (id < 0 || id >= static_cast<int>(data.samples.size()))
      throw DataError("train: id " + std::to_string(id) + " outside the dataset");
  if ((cfg.stereo ? 2 : 1) != data.channels)
    throw ConfigError("train: dataset channel layout does not match stereo flag");

  AdamOptimizer opt(model.named_parameters(), cfg);
  Rng rng(cfg.seed);
  FeatureCache cache(data, fe);
  const int k = model.config().num_classes;

  TrainResult result;
  std::vector<int> order(train_ids);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    rng.shuffle(order);
    double loss_sum = 0.0;
    int correct = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
      std::vector<std::vector<dsp::Spectrogram>> feats;
      std::vector<int> labels;
      for (size_t i = at; i < end; ++i) {
        const auto& sample = data.samples[static_cast<size_t>(order[i])];
        labels.push_back(sample.label);
        if (cfg.augment) {
          const bool invert = rng.bernoulli(cfg.inversion_prob);
          const double factor = rng.uniform(cfg.scale_lo, cfg.scale_hi);
          AudioClip clip = sample.audio;
          if (invert) time_inversion(clip);
          clip = time_scale(clip, factor);
          feats.push_back(dsp::extract_features(clip, fe));
        } else {
          feats.push_back(cache.get(order[i]));
        }
      }
      model.zero_grad();
      auto logits = batch_logits(model, feats, cfg.stereo, true);
      auto loss = nn::softmax_cross_entropy(logits, labels);
      nn::backward(loss);
      opt.step(lr);
      const size_t batch = end - at;
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(batch);
      for (size_t i = 0; i < batch; ++i)
        if (argmax_row(logits.value(), i * static_cast<size_t>(k), k) == labels[i]) ++correct;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val_ids.empty()) m.val_acc = evaluate_cached(model, data, val_ids, cache, cfg);
    if (log) {
      (*log) << m.epoch << "\t" << m.lr << "\t" << m.train_loss << "\t" << m.train_acc;
      if (m.val_acc >= 0.0) (*log) << "\t" << m.val_acc;
      (*log) << "\n";
      log->flush();
    }
    result.metrics.push_back(m);
  }
  return result;
}

CrossValResult cross_validate(const nn::ModelConfig& mc, uint64_t model_seed,
                              const Dataset& data, const data::SplitAssignment& split,
                              const dsp::FrontEndConfig& fe, const TrainConfig& cfg,
                              std::ostream* log) {
  CrossValResult out;
  double total = 0.0;
  for (int r = 0; r < split.num_rounds; ++r) {
    std::vector<char> in_test(data.samples.size(), 0);
    for (int id : split.test_sets[r]) {
      if (id < 0 || id >= static_cast<int>(data.samples.size()))
        throw DataError("cross_validate: round " + std::to_string(r + 1) +
                        " references unknown clip " + std::to_string(id));
      in_test[static_cast<size_t>(id)] = 1;
    }
    std::vector<int> train_ids;
    for (size_t i = 0; i < data.samples.size(); ++i)
      if (!in_test[i]) train_ids.push_back(static_cast<int>(i));

    nn::EsResNet<float> model(mc, model_seed + static_cast<uint64_t>(r));
    TrainConfig round_cfg = cfg;
    round_cfg.seed = cfg.seed + static_cast<uint64_t>(r);
    if (log) (*log) << "# round " << (r + 1) << "\n";
    train(model, data, train_ids, {}, fe, round_cfg, log);
    const double acc = evaluate(model, data, split.test_sets[r], fe, cfg);
    if (log) {
      (*log) << "# round " << (r + 1) << " accuracy " << acc << "\n";
      log->flush();
    }
    out.fold_acc.push_back(acc);
    total += acc;
  }
  out.mean_acc = total / static_cast<double>(split.num_rounds);
  return out;
}

}  // namespace esres::train
