// Command-line front end over the shared-library C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "dafe/dafe.h"

namespace {

struct ConfigHandle {
  dafe_config* ptr = nullptr;
  ~ConfigHandle() { dafe_config_free(ptr); }
};

struct ModelHandle {
  dafe_model* ptr = nullptr;
  ~ModelHandle() { dafe_model_free(ptr); }
};

// 0 on success, 1 on usage errors, 2 on data/format/other failures.
int exit_code(dafe_status status) {
  if (status == DAFE_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", dafe_status_name(status), dafe_last_error());
  return status == DAFE_E_USAGE ? 1 : 2;
}

int load_config(const std::string& config_path, const std::string& seed,
                ConfigHandle& handle) {
  dafe_status status = config_path.empty()
                           ? dafe_config_create(&handle.ptr)
                           : dafe_config_load(config_path.c_str(), &handle.ptr);
  if (status != DAFE_OK) return exit_code(status);
  if (!seed.empty()) {
    status = dafe_config_set(handle.ptr, "seed", seed.c_str());
    if (status != DAFE_OK) return exit_code(status);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep adaptive feature embedding toolkit"};
  app.require_subcommand(1);

  std::string config_path, seed, out, data, checkpoint, resume, csv;

  auto add_common = [&](CLI::App* cmd, bool with_data) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--seed", seed, "seed override (also via DAFE_SEED)");
    if (with_data) cmd->add_option("--data", data, "dataset root directory")->required();
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic identity/view dataset");
  add_common(synth, false);
  synth->add_option("--out", out, "output dataset directory")->required();

  CLI::App* pretrain = app.add_subcommand("pretrain", "layer-wise CD pretraining of the embedding");
  add_common(pretrain, true);
  pretrain->add_option("--out", out, "checkpoint output path")->required();
  pretrain->add_option("--csv", csv, "reconstruction-error curve (epoch,layer,mse)");

  CLI::App* train = app.add_subcommand("train", "fine-tune the similarity metric on mined quadruplets");
  add_common(train, true);
  train->add_option("--checkpoint", checkpoint, "pretraining checkpoint (default: pretrain first)");
  train->add_option("--resume", resume, "resume a saved training checkpoint");
  train->add_option("--out", out, "checkpoint output path")->required();
  train->add_option("--csv", csv, "training log (iteration,loss,s_ij,s_ik,s_il,fallback)");

  int trials = 10;
  bool mq = false;
  CLI::App* eval = app.add_subcommand("eval", "single-shot CMC / mAP evaluation");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  eval->add_option("--trials", trials, "number of gallery draws (default 10)");
  eval->add_flag("--mq", mq, "multiple-query mode (max-score fusion per identity)");
  eval->add_option("--out", out, "output directory for cmc.csv and report.csv")->required();

  std::string variant = "saga";
  int bench_q = 1, bench_k = 10, bench_epochs = 30;
  double bench_mu = 0.1;
  std::uint64_t bench_seed = 1;
  CLI::App* bench = app.add_subcommand("bench-optim", "finite-sum optimizer benchmark");
  bench->add_option("--variant", variant, "sgd | sgd-const | saga | qsaga | svrg | nsaga");
  bench->add_option("--q", bench_q, "memory refreshes per iteration (qsaga/svrg)");
  bench->add_option("--k", bench_k, "neighborhood size (nsaga)");
  bench->add_option("--mu", bench_mu, "strong-convexity constant");
  bench->add_option("--epochs", bench_epochs, "epochs over the finite sum");
  bench->add_option("--seed", bench_seed, "benchmark seed");
  bench->add_option("--config", config_path, "ignored; accepted for uniformity");
  bench->add_option("--out", out, "trace CSV path")->required();

  std::string image, feat_a, feat_b;
  CLI::App* extract = app.add_subcommand("extract", "embed one image to a DAFT feature vector");
  add_common(extract, false);
  extract->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  extract->add_option("--image", image, "input image (PGM or rank-2 DAFT)")->required();
  extract->add_option("--out", out, "output DAFT path")->required();

  CLI::App* score = app.add_subcommand("score", "similarity score of two DAFT feature vectors");
  add_common(score, false);
  score->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  score->add_option("--a", feat_a, "first feature vector (DAFT)")->required();
  score->add_option("--b", feat_b, "second feature vector (DAFT)")->required();
  score->add_option("--out", out, "optional file for the score");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message and usage hint on the error stream
    return 1;
  }

  if (synth->parsed()) {
    ConfigHandle cfg;
    if (int rc = load_config(config_path, seed, cfg)) return rc;
    return exit_code(dafe_run_synth(cfg.ptr, out.c_str()));
  }

  if (pretrain->parsed()) {
    ConfigHandle cfg;
    if (int rc = load_config(config_path, seed, cfg)) return rc;
    return exit_code(dafe_run_pretrain(cfg.ptr, data.c_str(), out.c_str(),
                                       csv.empty() ? nullptr : csv.c_str()));
  }

  if (train->parsed()) {
    ConfigHandle cfg;
    if (int rc = load_config(config_path, seed, cfg)) return rc;
    return exit_code(dafe_run_train(cfg.ptr, data.c_str(),
                                    checkpoint.empty() ? nullptr : checkpoint.c_str(),
                                    resume.empty() ? nullptr : resume.c_str(),
                                    out.c_str(), csv.empty() ? nullptr : csv.c_str()));
  }

  if (eval->parsed()) {
    ConfigHandle cfg;
    if (int rc = load_config(config_path, seed, cfg)) return rc;
    std::filesystem::create_directories(out);
    const std::string cmc_path = (std::filesystem::path(out) / "cmc.csv").string();
    const std::string report_path = (std::filesystem::path(out) / "report.csv").string();
    double rank1 = 0.0, map = 0.0;
    dafe_status status =
        dafe_run_eval(cfg.ptr, checkpoint.c_str(), data.c_str(), trials, mq ? 1 : 0,
                      cmc_path.c_str(), report_path.c_str(), &rank1, &map);
    if (status == DAFE_OK)
      std::printf("rank1 %.6f\nmap %.6f\n", rank1, map);
    return exit_code(status);
  }

  if (bench->parsed()) {
    return exit_code(dafe_run_bench_optim(variant.c_str(), bench_q, bench_k, bench_mu,
                                          bench_epochs, bench_seed, out.c_str()));
  }

  if (extract->parsed()) {
    ModelHandle model;
    dafe_status status = dafe_model_load(checkpoint.c_str(), &model.ptr);
    if (status != DAFE_OK) return exit_code(status);
    return exit_code(dafe_model_extract(model.ptr, image.c_str(), out.c_str()));
  }

  if (score->parsed()) {
    ModelHandle model;
    dafe_status status = dafe_model_load(checkpoint.c_str(), &model.ptr);
    if (status != DAFE_OK) return exit_code(status);
    double *a = nullptr, *b = nullptr;
    uint32_t *dims_a = nullptr, *dims_b = nullptr;
    uint32_t rank_a = 0, rank_b = 0;
    status = dafe_tensor_read(feat_a.c_str(), &a, &dims_a, &rank_a);
    if (status != DAFE_OK) return exit_code(status);
    status = dafe_tensor_read(feat_b.c_str(), &b, &dims_b, &rank_b);
    if (status != DAFE_OK) {
      dafe_free(a);
      dafe_free(dims_a);
      return exit_code(status);
    }
    size_t len_a = 1, len_b = 1;
    for (uint32_t i = 0; i < rank_a; ++i) len_a *= dims_a[i];
    for (uint32_t i = 0; i < rank_b; ++i) len_b *= dims_b[i];
    double value = 0.0;
    status = dafe_model_score(model.ptr, a, len_a, b, len_b, &value);
    dafe_free(a);
    dafe_free(b);
    dafe_free(dims_a);
    dafe_free(dims_b);
    if (status != DAFE_OK) return exit_code(status);
    std::printf("%.17g\n", value);
    if (!out.empty()) {
      std::FILE* f = std::fopen(out.c_str(), "w");
      if (f == nullptr) {
        std::fprintf(stderr, "error (io): cannot open %s\n", out.c_str());
        return 2;
      }
      std::fprintf(f, "%.17g\n", value);
      std::fclose(f);
    }
    return 0;
  }

  return 1;
}
