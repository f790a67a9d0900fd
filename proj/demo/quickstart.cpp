// Train on a small synthetic set and rank its held-out test images.
#include <cstdio>

#include "salad/salad.hpp"

int main() {
  using namespace salad;

  SynthConfig sc;
  sc.count = 256;
  sc.size = 16;
  const auto samples = synth_generate(sc, 7);
  const auto split = split_grouped(samples, 11, {2.0 / 3.0, 0.95, 0.05});

  std::vector<Sample> train;
  for (auto i : split.train_samples) train.push_back(samples[i]);
  const auto data = make_training_set(train);

  TrainingConfig cfg;
  cfg.latent_dim = 16;
  cfg.encoder_hidden = {64};
  cfg.decoder_hidden = {64};
  cfg.learning_rate = 1e-3;
  cfg.pretrain_epochs = 20;
  cfg.rounds = 3;
  cfg.epochs_per_round = 5;
  cfg.k_max = 30;
  cfg.k_score = 20;

  auto state = TrainingState::initialize(cfg, data);
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %2zu  k %2zu  mse %.4f  ss %.4f  agg %.4f  total %.4f\n", r.epoch, r.k, r.loss.mse, r.loss.ss,
                r.loss.agg, r.loss.total);
  };
  pretrain(data, state, cfg, hooks);
  const auto report = train_progressive(data, state, cfg, hooks);
  std::printf("neighbor mass after the last round: %.4f\n", report.neighbor_mass.back());

  std::vector<std::vector<double>> images;
  LabeledScores ls;
  for (auto i : split.test_samples) {
    images.push_back(samples[i].image.pixels);
    ls.labels.push_back(samples[i].label == Label::anomalous ? 1 : 0);
  }
  for (const auto& s : score_dataset(images, state.params, state.bank, cfg.k_score)) ls.scores.push_back(s.normalized);
  std::printf("test images %zu (%zu anomalous)  AUC %.4f  AUPRC %.4f\n", ls.scores.size(), ls.positives(), roc_auc(ls),
              auprc(ls));
}
