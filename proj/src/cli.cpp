#include "sanet/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "sanet/checkpoint.hpp"
#include "sanet/data.hpp"
#include "sanet/eval.hpp"
#include "sanet/gradcheck.hpp"
#include "sanet/trainer.hpp"

namespace fs = std::filesystem;

namespace sanet {

namespace {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open " + path);
  return nlohmann::json::parse(f);
}

// Every command announces its resolved configuration and seed up front and
// mirrors it to <out>/run.json.
void write_run_record(const std::string& out_dir, const std::string& command,
                      const nlohmann::ordered_json& resolved) {
  nlohmann::ordered_json rec{{"command", command}};
  rec["config"] = resolved;
  fs::create_directories(out_dir);
  std::ofstream f(out_dir + "/run.json", std::ios::binary);
  f << rec.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write " + out_dir + "/run.json");
  std::printf("%s config: %s\n", command.c_str(), resolved.dump().c_str());
  std::fflush(stdout);
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec_from_json(read_json_file(spec_path), spec);
  spec.validate();
  nlohmann::ordered_json j;
  to_json(j, spec);
  write_run_record(out_dir, "synth", j);
  Dataset ds = generate_dataset(spec);
  write_dataset(ds, out_dir);
  std::printf("wrote %zu train / %zu query / %zu gallery images to %s\n", ds.train.size(),
              ds.query.size(), ds.gallery.size(), out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, bool baseline) {
  Dataset data = load_dataset(data_dir);
  TrainConfig tc;
  SANetConfig mc;
  if (!config_path.empty()) {
    nlohmann::json j = read_json_file(config_path);
    train_config_from_json(j, tc);
    if (j.contains("model")) config_from_json(j.at("model"), mc);
  }
  tc.validate();
  mc.input_size = data.spec.image_size;
  mc.num_classes = data.train_identity_count;
  mc.stn_enabled = !baseline;
  mc.validate();

  nlohmann::ordered_json resolved;
  to_json(resolved["train"], tc);
  to_json(resolved["model"], mc);
  resolved["data"] = data_dir;
  resolved["seed"] = tc.seed;
  write_run_record(out_dir, "train", resolved);

  SANet model(mc, tc.seed);
  FitResult res = fit(model, data, tc, out_dir);
  std::printf("final checkpoint: %s\n", res.final_checkpoint.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out_dir,
             int k_max) {
  if (k_max < 1) throw std::invalid_argument("eval: --kmax must be >= 1");
  SANetConfig mc = load_checkpoint_config(ckpt);
  Dataset data = load_dataset(data_dir);
  if (mc.input_size != data.spec.image_size)
    throw std::invalid_argument("eval: checkpoint expects " + std::to_string(mc.input_size) +
                                "px inputs but the dataset holds " +
                                std::to_string(data.spec.image_size) + "px images");
  nlohmann::ordered_json resolved;
  to_json(resolved["model"], mc);
  resolved["checkpoint"] = ckpt;
  resolved["data"] = data_dir;
  resolved["k_max"] = k_max;
  write_run_record(out_dir, "eval", resolved);

  SANet model(mc, 0);
  load_checkpoint(ckpt, model.params());
  EmbeddingMatrix q = embed_set(model, data.query);
  EmbeddingMatrix g = embed_set(model, data.gallery);
  Tensor D = distance_matrix(q, g);
  std::vector<double> curve = cmc(D, q.labels, g.labels, k_max);
  export_results(out_dir, curve, D, q, g);
  for (int k : {1, 5, 10})
    if (k <= k_max) std::printf("cmc-%d: %.4f\n", k, curve[(size_t)k - 1]);
  return 0;
}

int cmd_align_viz(const std::string& ckpt, const std::string& data_dir, const std::string& out_dir,
                  int count) {
  if (count < 1) throw std::invalid_argument("align-viz: --count must be >= 1");
  SANetConfig mc = load_checkpoint_config(ckpt);
  Dataset data = load_dataset(data_dir);
  if (mc.input_size != data.spec.image_size)
    throw std::invalid_argument("align-viz: checkpoint expects " + std::to_string(mc.input_size) +
                                "px inputs but the dataset holds " +
                                std::to_string(data.spec.image_size) + "px images");
  nlohmann::ordered_json resolved;
  to_json(resolved["model"], mc);
  resolved["checkpoint"] = ckpt;
  resolved["data"] = data_dir;
  resolved["count"] = count;
  write_run_record(out_dir, "align-viz", resolved);

  SANet model(mc, 0);
  load_checkpoint(ckpt, model.params());
  std::vector<LabeledImage> picks;
  for (const auto& li : data.query) {
    if ((int)picks.size() >= count) break;
    picks.push_back(li);
  }
  for (const auto& li : data.gallery) {
    if ((int)picks.size() >= count) break;
    picks.push_back(li);
  }
  if (picks.empty()) throw std::invalid_argument("align-viz: dataset has no test images");
  export_alignment_pairs(model, picks, out_dir);
  std::printf("wrote %zu before/after pairs to %s\n", picks.size(), out_dir.c_str());
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  std::printf("gradcheck seed: %llu\n", (unsigned long long)seed);
  auto cases = run_gradcheck_suite(seed);
  bool ok = true;
  for (const auto& c : cases) {
    bool pass = c.max_rel_err < 1e-4;
    ok = ok && pass;
    std::printf("%-18s max rel err %.3e  %s\n", c.name.c_str(), c.max_rel_err,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
  CLI::App app{"vehicle re-identification on procedural synthetic data"};
  app.require_subcommand(1);

  std::string spec_path, data_dir, config_path, ckpt, out_dir;
  bool baseline = false;
  int k_max = 25, count = 8;
  uint64_t seed = 1;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec_path, "SyntheticSpec JSON file (defaults apply)");
  synth->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--config", config_path, "TrainConfig JSON file (defaults apply)");
  train->add_option("--out", out_dir, "checkpoint/log directory")->required();
  train->add_flag("--baseline", baseline, "disable the alignment module");

  auto* eval = app.add_subcommand("eval", "retrieval evaluation of a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint manifest")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--kmax", k_max, "longest CMC rank to report");

  auto* viz = app.add_subcommand("align-viz", "export before/after alignment images");
  viz->add_option("--ckpt", ckpt, "checkpoint manifest")->required();
  viz->add_option("--data", data_dir, "dataset directory")->required();
  viz->add_option("--out", out_dir, "output directory")->required();
  viz->add_option("--count", count, "number of test images to export");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gc->add_option("--seed", seed, "suite seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec_path, out_dir);
    if (train->parsed()) return cmd_train(data_dir, config_path, out_dir, baseline);
    if (eval->parsed()) return cmd_eval(ckpt, data_dir, out_dir, k_max);
    if (viz->parsed()) return cmd_align_viz(ckpt, data_dir, out_dir, count);
    if (gc->parsed()) return cmd_gradcheck(seed);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

}  // namespace sanet
