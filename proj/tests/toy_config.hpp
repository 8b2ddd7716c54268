#pragma once

#include "hsa/config.hpp"
#include "hsa/encoder.hpp"

namespace hsa::test {

/// 8x8 synthetic images, 4 classes x 6, toy encoder with a stage-1 companion.
inline TrainConfig toy_train_config() {
  TrainConfig c;
  c.data.synthetic.num_classes = 4;
  c.data.synthetic.samples_per_class = 6;
  c.data.synthetic.height = 8;
  c.data.synthetic.width = 8;
  c.data.val_samples_per_class = 3;
  c.encoder = toy_encoder_config();
  c.contrast.queue_capacity = 16;
  c.contrast.momentum = 0.9;
  c.miner.k = 2;
  c.miner.refresh_period = 5;
  c.optim.batch_size = 8;
  c.optim.epochs = 5;
  c.eval.label_fraction = 0.5;
  return c;
}

}  // namespace hsa::test
