#include "dafe/dafe.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "optim.hpp"
#include "tensor_io.hpp"
#include "trainer.hpp"

namespace {

thread_local std::string g_last_error;

dafe_status status_from(dafe::ErrorCode code) {
  using dafe::ErrorCode;
  switch (code) {
    case ErrorCode::usage: return DAFE_E_USAGE;
    case ErrorCode::data: return DAFE_E_DATA;
    case ErrorCode::format: return DAFE_E_FORMAT;
    case ErrorCode::dimension: return DAFE_E_DIMENSION;
    case ErrorCode::parameter: return DAFE_E_PARAMETER;
    case ErrorCode::contract: return DAFE_E_CONTRACT;
    case ErrorCode::config: return DAFE_E_CONFIG;
    case ErrorCode::io: return DAFE_E_IO;
  }
  return DAFE_E_INTERNAL;
}

template <typename Fn>
dafe_status guarded(Fn&& fn) {
  try {
    fn();
    return DAFE_OK;
  } catch (const dafe::Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DAFE_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DAFE_E_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) dafe::raise(dafe::ErrorCode::usage, what);
}

void write_csv(const std::string& path, const char* header,
               const std::vector<std::string>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) dafe::raise(dafe::ErrorCode::io, "cannot open " + path + " for writing");
  out << header << "\n";
  for (const std::string& row : rows) out << row << "\n";
  if (!out) dafe::raise(dafe::ErrorCode::io, "write failed for " + path);
}

}  // namespace

struct dafe_config {
  dafe::Config config;
};

struct dafe_model {
  dafe::Checkpoint checkpoint;
};

extern "C" {

const char* dafe_status_name(dafe_status status) {
  switch (status) {
    case DAFE_OK: return "ok";
    case DAFE_E_USAGE: return "usage";
    case DAFE_E_DATA: return "data";
    case DAFE_E_FORMAT: return "format";
    case DAFE_E_DIMENSION: return "dimension";
    case DAFE_E_PARAMETER: return "parameter";
    case DAFE_E_CONTRACT: return "contract";
    case DAFE_E_CONFIG: return "config";
    case DAFE_E_IO: return "io";
    case DAFE_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* dafe_last_error(void) { return g_last_error.c_str(); }

const char* dafe_version(void) { return "1.0.0"; }

dafe_status dafe_config_create(dafe_config** out) {
  return guarded([&] {
    require(out != nullptr, "dafe_config_create: out is NULL");
    *out = new dafe_config{dafe::Config::defaults()};
  });
}

dafe_status dafe_config_load(const char* path, dafe_config** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "dafe_config_load: NULL argument");
    *out = new dafe_config{dafe::Config::load(path)};
  });
}

dafe_status dafe_config_set(dafe_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config != nullptr && key != nullptr && value != nullptr,
            "dafe_config_set: NULL argument");
    config->config.set(key, value);
  });
}

dafe_status dafe_config_get(const dafe_config* config, const char* key,
                            char* buffer, size_t buffer_size) {
  return guarded([&] {
    require(config != nullptr && key != nullptr && buffer != nullptr,
            "dafe_config_get: NULL argument");
    const std::string value = config->config.get_string(key);
    if (value.size() + 1 > buffer_size)
      dafe::raise(dafe::ErrorCode::parameter, "dafe_config_get: buffer too small");
    std::memcpy(buffer, value.c_str(), value.size() + 1);
  });
}

void dafe_config_free(dafe_config* config) { delete config; }

dafe_status dafe_run_synth(const dafe_config* config, const char* out_dir) {
  return guarded([&] {
    require(config != nullptr && out_dir != nullptr, "dafe_run_synth: NULL argument");
    config->config.validate();
    dafe::generate_synthetic(dafe::synthetic_spec_from(config->config), out_dir);
  });
}

dafe_status dafe_run_pretrain(const dafe_config* config, const char* data_root,
                              const char* checkpoint_out, const char* recon_csv_out) {
  return guarded([&] {
    require(config != nullptr && data_root != nullptr && checkpoint_out != nullptr,
            "dafe_run_pretrain: NULL argument");
    dafe::Dataset dataset = dafe::load_dataset(data_root);
    std::vector<std::string> recon;
    dafe::Checkpoint ckpt =
        dafe::run_pretrain(config->config, dataset, recon_csv_out ? &recon : nullptr);
    dafe::save_checkpoint(checkpoint_out, ckpt);
    if (recon_csv_out) write_csv(recon_csv_out, "epoch,layer,mse", recon);
  });
}

dafe_status dafe_run_train(const dafe_config* config, const char* data_root,
                           const char* pretrain_checkpoint,
                           const char* resume_checkpoint,
                           const char* checkpoint_out, const char* train_csv_out) {
  return guarded([&] {
    require(config != nullptr && data_root != nullptr && checkpoint_out != nullptr,
            "dafe_run_train: NULL argument");
    dafe::Dataset dataset = dafe::load_dataset(data_root);
    dafe::Checkpoint warm;
    if (pretrain_checkpoint != nullptr)
      warm = dafe::load_checkpoint(pretrain_checkpoint);
    else
      warm = dafe::run_pretrain(config->config, dataset, nullptr);
    dafe::Checkpoint resume;
    const dafe::Checkpoint* resume_ptr = nullptr;
    if (resume_checkpoint != nullptr) {
      resume = dafe::load_checkpoint(resume_checkpoint);
      resume_ptr = &resume;
    }
    std::string dir = std::filesystem::path(checkpoint_out).parent_path().string();
    if (dir.empty()) dir = ".";
    dafe::TrainOutputs out =
        dafe::run_train(config->config, dataset, warm, resume_ptr, dir);
    dafe::save_checkpoint(checkpoint_out, out.checkpoint);
    if (train_csv_out)
      write_csv(train_csv_out, "iteration,loss,s_ij,s_ik,s_il,fallback", out.csv_rows);
  });
}

dafe_status dafe_run_eval(const dafe_config* config, const char* checkpoint_path,
                          const char* data_root, int trials, int multi_query,
                          const char* cmc_csv_out, const char* report_csv_out,
                          double* rank1_out, double* map_out) {
  return guarded([&] {
    require(config != nullptr && checkpoint_path != nullptr && data_root != nullptr,
            "dafe_run_eval: NULL argument");
    require(trials > 0, "dafe_run_eval: trials must be positive");
    dafe::Dataset dataset = dafe::load_dataset(data_root);
    dafe::Checkpoint ckpt = dafe::load_checkpoint(checkpoint_path);
    dafe::EvalOutputs out = dafe::run_eval(config->config, ckpt, dataset,
                                           static_cast<std::size_t>(trials),
                                           multi_query != 0);
    if (cmc_csv_out) write_csv(cmc_csv_out, "trial,rank,rate", out.cmc_csv);
    if (report_csv_out) write_csv(report_csv_out, "metric,value", out.report_csv);
    if (rank1_out) *rank1_out = out.report.cmc.empty() ? 0.0 : out.report.cmc[0];
    if (map_out) *map_out = out.report.map;
  });
}

dafe_status dafe_run_bench_optim(const char* variant, int q, int k, double mu,
                                 int epochs, uint64_t seed, const char* trace_csv_out) {
  return guarded([&] {
    require(variant != nullptr && trace_csv_out != nullptr,
            "dafe_run_bench_optim: NULL argument");
    require(q >= 0 && k >= 1 && epochs >= 1, "dafe_run_bench_optim: bad parameters");
    auto parsed = dafe::optim::variant_from_name(variant);
    if (!parsed)
      dafe::raise(dafe::ErrorCode::usage,
                  std::string("unknown optimizer variant '") + variant + "'");
    dafe::optim::BenchmarkSpec spec;
    spec.mu = mu;
    spec.seed = seed;
    dafe::optim::RidgeLeastSquares problem = dafe::optim::make_benchmark_problem(spec);
    dafe::optim::OptimizerOptions opts;
    opts.variant = *parsed;
    opts.q = static_cast<std::size_t>(q);
    opts.k = static_cast<std::size_t>(k);
    dafe::optim::BenchmarkRun run = dafe::optim::run_benchmark(
        problem, opts, static_cast<std::size_t>(epochs), seed);
    std::vector<std::string> rows;
    for (const dafe::optim::TracePoint& pt : run.trace)
      rows.push_back(std::to_string(pt.evaluations) + "," +
                     dafe::csv_double(pt.suboptimality) + "," +
                     dafe::csv_double(pt.wall_seconds));
    write_csv(trace_csv_out, "evaluations,suboptimality,wall_seconds", rows);
  });
}

dafe_status dafe_model_load(const char* checkpoint_path, dafe_model** out) {
  return guarded([&] {
    require(checkpoint_path != nullptr && out != nullptr, "dafe_model_load: NULL argument");
    *out = new dafe_model{dafe::load_checkpoint(checkpoint_path)};
  });
}

void dafe_model_free(dafe_model* model) { delete model; }

dafe_status dafe_model_feature_dim(const dafe_model* model, size_t* out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "dafe_model_feature_dim: NULL argument");
    *out = model->checkpoint.model.feature_dim();
  });
}

dafe_status dafe_model_extract(const dafe_model* model, const char* image_path,
                               const char* daft_out) {
  return guarded([&] {
    require(model != nullptr && image_path != nullptr && daft_out != nullptr,
            "dafe_model_extract: NULL argument");
    const std::string path = image_path;
    dafe::Tensor image;
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".daft") {
      image = dafe::read_daft(path);
      if (image.rank() != 2)
        dafe::raise(dafe::ErrorCode::dimension, "extract: image tensor must be rank 2");
    } else {
      image = dafe::read_pgm(path);
    }
    dafe::write_daft(daft_out, model->checkpoint.model.features(image));
  });
}

dafe_status dafe_model_score(const dafe_model* model, const double* feature_a,
                             size_t len_a, const double* feature_b, size_t len_b,
                             double* score_out) {
  return guarded([&] {
    require(model != nullptr && feature_a != nullptr && feature_b != nullptr &&
                score_out != nullptr,
            "dafe_model_score: NULL argument");
    if (!model->checkpoint.head_ready)
      dafe::raise(dafe::ErrorCode::contract, "score: checkpoint has no similarity head");
    dafe::Tensor fa({len_a}), fb({len_b});
    std::memcpy(fa.data(), feature_a, len_a * sizeof(double));
    std::memcpy(fb.data(), feature_b, len_b * sizeof(double));
    *score_out = dafe::similarity(model->checkpoint.head, fa, fb);
  });
}

dafe_status dafe_tensor_read(const char* path, double** data_out,
                             uint32_t** dims_out, uint32_t* rank_out) {
  return guarded([&] {
    require(path != nullptr && data_out != nullptr && dims_out != nullptr &&
                rank_out != nullptr,
            "dafe_tensor_read: NULL argument");
    dafe::Tensor t = dafe::read_daft(path);
    *rank_out = static_cast<uint32_t>(t.rank());
    *dims_out = static_cast<uint32_t*>(std::malloc(t.rank() * sizeof(uint32_t)));
    *data_out = static_cast<double*>(std::malloc(t.size() * sizeof(double)));
    if (*dims_out == nullptr || *data_out == nullptr) {
      std::free(*dims_out);
      std::free(*data_out);
      dafe::raise(dafe::ErrorCode::io, "dafe_tensor_read: allocation failed");
    }
    for (std::size_t i = 0; i < t.rank(); ++i)
      (*dims_out)[i] = static_cast<uint32_t>(t.dim(i));
    std::memcpy(*data_out, t.data(), t.size() * sizeof(double));
  });
}

dafe_status dafe_tensor_write(const char* path, const double* data,
                              const uint32_t* dims, uint32_t rank) {
  return guarded([&] {
    require(path != nullptr && data != nullptr && dims != nullptr && rank > 0,
            "dafe_tensor_write: NULL argument");
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = dims[i];
      count *= dims[i];
    }
    std::vector<double> values(data, data + count);
    dafe::write_daft(path, dafe::Tensor(std::move(shape), std::move(values)));
  });
}

void dafe_free(void* ptr) { std::free(ptr); }

}  // extern "C"
