// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// Command line front end: synth, train, eval, gradcheck, complexity, ablate.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fmt/format.h"
#include "raptr/raptr.hpp"
#include "raptr/suites.hpp"

namespace fs = std::filesystem;
using namespace raptr;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "raptr_out";
  std::size_t frames = 64;
};

fs::path out_dir(const Common& c) {
  const char* env = std::getenv("RAPTR_OUT");
  fs::path p = env && *env ? fs::path(env) : fs::path(c.out);
  fs::create_directories(p);
  return p;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  require_config(bool(is), "cannot open config " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  require(bool(os), "cannot write " + p.string());
  os << s;
}

// Config file: {"scene": {...}, "train": {...}}; both optional.
SceneSpec load_scene(const Common& c) {
  SceneSpec s = desk_scene(c.seed, c.frames);
  if (!c.config.empty()) {
    const auto j = read_json(c.config);
    if (j.contains("scene")) {
      s = scene_spec_from_json(j.at("scene"));
      s.seed = c.seed;
    }
  }
  s.validate();
  return s;
}

TrainConfig load_train(const Common& c, const SceneSpec& s) {
  TrainConfig t = desk_config(s);
  if (!c.config.empty()) {
    const auto j = read_json(c.config);
    if (j.contains("train")) t = train_config_from_json(j.at("train"), t);
  }
  t.seed = c.seed;
  t.validate();
  return t;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::uint64_t> parse_uints(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split_list(s)) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require_config(used == tok.size() && !tok.empty(), "not an unsigned integer: '" + tok + "'");
    out.push_back(v);
  }
  require_config(!out.empty(), "empty list");
  return out;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config with optional \"scene\" and \"train\" objects");
  app->add_option("--seed", c.seed, "seed for data and training");
  app->add_option("--out", c.out, "output directory (RAPTR_OUT overrides)");
}

int cmd_synth(const Common& c) {
  const SceneSpec s = load_scene(c);
  const Dataset ds = generate_scene(s);
  const fs::path dir = out_dir(c) / "dataset";
  save_dataset(ds, dir);
  fmt::print("wrote {} frames ({} subjects, {} joints) to {}\n", ds.frames.size(), s.subjects,
             joint_count(s.skeleton), dir.string());
  return 0;
}

int cmd_train(const Common& c, const std::string& data, std::optional<std::size_t> epochs) {
  Dataset ds = data.empty() ? generate_scene(load_scene(c)) : load_dataset(data);
  TrainConfig cfg = load_train(c, ds.spec);
  if (epochs) cfg.optim.epochs = *epochs;
  cfg.validate();
  const fs::path dir = out_dir(c);
  TrainResult r = train(cfg, ds, [](const EpochRecord& e) {
    fmt::print("epoch {:3}  loss {:9.4f}  lr {:.2e}{}\n", e.epoch, e.total, e.lr,
               e.val_total ? fmt::format("  val {:9.4f}", *e.val_total) : std::string());
  });
  r.model.save((dir / "model").string(), {{"train", to_json(cfg)}});
  write_text(dir / "report.json", r.report.to_json().dump(2) + "\n");
  write_text(dir / "metrics.csv", r.report.final_metrics.to_csv());
  std::cout << r.report.final_metrics.table();
  fmt::print("checkpoint {}  config {}\n", (dir / "model").string(), r.report.config_hash);
  if (r.report.diverged) fmt::print("training diverged; kept last finite parameters\n");
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data) {
  Dataset ds = data.empty() ? generate_scene(load_scene(c)) : load_dataset(data);
  std::optional<ModelConfig> expected;
  if (!c.config.empty()) expected = load_train(c, ds.spec).model;
  std::vector<std::size_t> frames(ds.frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = i;
  const MetricReport m = evaluate_checkpoint(checkpoint, ds, frames, expected ? &*expected : nullptr);
  const fs::path dir = out_dir(c);
  write_text(dir / "eval.json", m.to_json().dump(2) + "\n");
  write_text(dir / "eval.csv", m.to_csv());
  std::cout << m.table();
  return 0;
}

int cmd_gradcheck(const Common& c, std::uint64_t seeds) {
  const auto rows = suites::gradient_suite(c.seed, seeds);
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    fmt::print("{:<42} max rel {:.2e}  tol {:.0e}  {}\n", r.name, r.max_rel_error, r.tolerance,
               r.pass() ? "ok" : "FAIL " + r.worst);
    ok = ok && r.pass();
    j.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance},
                 {"probes", r.probes}, {"pass", r.pass()}});
  }
  write_text(out_dir(c) / "gradcheck.json", j.dump(2) + "\n");
  return ok ? 0 : 1;
}

int cmd_complexity(const Common& c, const std::string& views, std::uint64_t queries, std::uint64_t offsets) {
  std::vector<ComplexityRow> rows;
  nlohmann::json j = nlohmann::json::array();
  for (std::uint64_t v : parse_uints(views)) {
    rows.push_back(compare_mechanisms(queries, v, offsets));
    j.push_back(to_json(rows.back()));
  }
  std::cout << complexity_table(rows);
  write_text(out_dir(c) / "complexity.json", j.dump(2) + "\n");
  return 0;
}

int cmd_ablate(const Common& c, const std::string& cells, const std::string& seeds, std::size_t epochs) {
  const SceneSpec scene = load_scene(c);
  TrainConfig base = load_train(c, scene);
  base.optim.epochs = epochs;
  const auto names = split_list(cells);
  require_config(!names.empty(), "no ablation cells given");
  for (const auto& n : names) {
    TrainConfig probe = base;
    suites::apply_cell(probe, n);
    probe.validate();
  }
  const auto out = run_ablation(base, scene, names, parse_uints(seeds), suites::apply_cell,
                                [](const std::string& n, std::uint64_t s, const RunReport& r) {
                                  fmt::print("{:<14} seed {:<3} MPJPE {:7.2f} cm  ({} epochs, {:.0f} s)\n", n, s,
                                             r.final_metrics.mpjpe, r.epochs.size(), r.wall_seconds);
                                });
  nlohmann::json j = nlohmann::json::array();
  fmt::print("\n{:<14} {:>10} {:>8}\n", "cell", "mean cm", "sd");
  for (const auto& cell : out) {
    fmt::print("{:<14} {:>10.2f} {:>8.2f}\n", cell.name, cell.mean(), cell.stddev());
    j.push_back({{"cell", cell.name}, {"mpjpe", cell.mpjpe}, {"mean", cell.mean()}, {"stddev", cell.stddev()}});
  }
  write_text(out_dir(c) / "ablation.json", j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raptr: multi-view radar 3D pose estimation"};
  app.require_subcommand(1);
  Common common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic radar dataset");
  add_common(synth, common);
  synth->add_option("--frames", common.frames, "frames to generate");

  auto* trn = app.add_subcommand("train", "train a model and write a checkpoint and report");
  add_common(trn, common);
  std::string data;
  std::optional<std::size_t> epochs;
  trn->add_option("--data", data, "dataset directory (default: generate one)");
  trn->add_option("--frames", common.frames, "frames when generating");
  trn->add_option("--epochs", epochs, "override the configured epoch count");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(ev, common);
  std::string checkpoint;
  ev->add_option("--checkpoint", checkpoint, "checkpoint path written by train")->required();
  ev->add_option("--data", data, "dataset directory (default: generate one)");
  ev->add_option("--frames", common.frames, "frames when generating");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable module");
  add_common(gc, common);
  std::uint64_t grad_seeds = 10;
  gc->add_option("--seeds", grad_seeds, "random draws per module")->check(CLI::PositiveNumber);

  auto* cx = app.add_subcommand("complexity", "multiply-add counts of the two attention mechanisms");
  add_common(cx, common);
  std::string views = "2,5,10";
  std::uint64_t queries = 10, offsets = 10;
  cx->add_option("--views", views, "comma separated view counts");
  cx->add_option("--queries", queries, "queries")->check(CLI::PositiveNumber);
  cx->add_option("--offsets", offsets, "sampling offsets per query")->check(CLI::PositiveNumber);

  auto* ab = app.add_subcommand("ablate", "train each cell over several seeds and compare MPJPE");
  add_common(ab, common);
  std::string cells = "full,k2d_only,no_t3d,no_g3d,decoupled2d", seed_list = "0,1,2";
  std::size_t ab_epochs = 60;
  common.frames = 64;
  ab->add_option("--cells", cells, "comma separated cells: loss presets, decoupled2d, mask_<mode>");
  ab->add_option("--seeds", seed_list, "comma separated seeds");
  ab->add_option("--frames", common.frames, "frames per generated dataset");
  ab->add_option("--epochs", ab_epochs, "epochs per run");

  if (argc <= 1) {
    std::cout << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*trn) return cmd_train(common, data, epochs);
    if (*ev) return cmd_eval(common, checkpoint, data);
    if (*gc) return cmd_gradcheck(common, grad_seeds);
    if (*cx) return cmd_complexity(common, views, queries, offsets);
    if (*ab) return cmd_ablate(common, cells, seed_list, ab_epochs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
