// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Generates a small radar scene, trains a desk-sized model for a few epochs and
// compares it with placing the template at the labelled gravity center.
//
//   quickstart [epochs]

#include <cstdio>
#include <string>

#include "raptr/raptr.hpp"

int main(int argc, char** argv) {
  using namespace raptr;
  const std::size_t epochs = argc > 1 ? std::stoul(argv[1]) : 5;

  const SceneSpec scene = desk_scene(/*seed=*/0, /*frames=*/24);
  const Dataset ds = generate_scene(scene);
  TrainConfig cfg = desk_config(scene);
  cfg.optim.epochs = epochs;
  cfg.val_stride = 4;

  const TrainResult r = train(cfg, ds, [](const EpochRecord& e) {
    std::printf("epoch %zu  loss %.4f  val %.4f\n", e.epoch, e.total, e.val_total.value_or(0.0));
  });
  const auto val = split_frames(ds.frames.size(), cfg.val_stride).second;
  std::printf("\n%s", r.report.final_metrics.table().c_str());
  std::printf("model    %.2f cm\ntemplate %.2f cm\n", r.report.final_metrics.mpjpe, template_baseline(ds, val).mpjpe);
  return 0;
}
