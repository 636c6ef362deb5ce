#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "heat/autodiff.hpp"
#include "heat/config.hpp"
#include "heat/model.hpp"
#include "heat/params.hpp"
#include "heat/rng.hpp"
#include "heat/scenario.hpp"

namespace heat {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Persisted optimizer state so a resumed run continues byte-identically.
template <class S>
struct OptState {
  std::vector<Mat<S>> m1, m2;
  std::int64_t steps = 0;
  int epochs_done = 0;
};

struct TrainLog {
  std::vector<std::string> term_names;
  std::vector<std::vector<double>> rows;  // per optimizer step: term values
};

struct LossTerms {
  double total = 0;
  std::vector<std::pair<std::string, double>> terms;
};

// One training step's per-sample loss graph. Returns the scalar loss node;
// fills `terms` with the unweighted breakdown for logging.
template <class S>
using SampleLossFn = std::function<typename Tape<S>::Var(
    Tape<S>& tape, ModelGraph<S>& graph, const Sample& sample,
    std::vector<std::pair<std::string, double>>* terms)>;

// Deterministic mini-batch training: AdamW + cosine annealing, batch order
// drawn from a per-epoch substream of the root seed. Per-sample gradients
// are reduced in sample order, so results do not depend on threading.
template <class S>
TrainLog train_loop(ParamSet<S>& params, const std::vector<Sample>& samples,
                    const ModelConfig& mc, int epochs, const SampleLossFn<S>& loss_fn,
                    OptState<S>* opt_io = nullptr, int n_threads = 1) {
  if (samples.empty()) throw InvalidArgument("train: empty dataset");
  const int bs = mc.batch_size;
  const std::int64_t batches_per_epoch = (static_cast<std::int64_t>(samples.size()) + bs - 1) / bs;
  const std::int64_t total_steps = batches_per_epoch * epochs;

  AdamW<S> opt(params, mc.lr, mc.weight_decay, total_steps);
  int start_epoch = 0;
  if (opt_io && opt_io->steps > 0) {
    opt.moment1() = opt_io->m1;
    opt.moment2() = opt_io->m2;
    opt.set_steps_taken(opt_io->steps);
    start_epoch = opt_io->epochs_done;
  }

  TrainLog log;
  for (int epoch = start_epoch; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mc.seed, "batch-order", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(bs)) {
      std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(bs));
      std::size_t n = b1 - b0;

      std::vector<std::vector<Mat<S>>> per_sample_grads(n);
      std::vector<LossTerms> per_sample_terms(n);
      auto run_one = [&](std::size_t i) {
        const Sample& s = samples[order[b0 + i]];
        Tape<S> tape;
        ModelGraph<S> g(tape, params);
        std::vector<std::pair<std::string, double>> terms;
        auto loss = loss_fn(tape, g, s, &terms);
        per_sample_terms[i].total = static_cast<double>(tape.val(loss)(0, 0));
        per_sample_terms[i].terms = std::move(terms);
        tape.backward(loss);
        per_sample_grads[i] = g.collect_grads();
      };
      if (n_threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) run_one(i);
      } else {
        std::vector<std::thread> pool;
        std::size_t stride = static_cast<std::size_t>(n_threads);
        for (std::size_t t = 0; t < stride; ++t) {
          pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += stride) run_one(i);
          });
        }
        for (auto& th : pool) th.join();
      }

      // fixed-order reduction: mean over the batch in sample order
      std::vector<Mat<S>> grads(params.count());
      S inv = S(1) / static_cast<S>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < params.count(); ++p) {
          if (per_sample_grads[i][p].size() == 0) continue;
          if (grads[p].size() == 0) grads[p] = inv * per_sample_grads[i][p];
          else grads[p] += inv * per_sample_grads[i][p];
        }
      }

      double mean_loss = 0;
      for (const auto& lt : per_sample_terms) mean_loss += lt.total;
      mean_loss /= static_cast<double>(n);
      if (!std::isfinite(mean_loss)) {
        throw NumericalError("non-finite loss at step " + std::to_string(opt.steps_taken()) +
                             " (epoch " + std::to_string(epoch) + ")");
      }

      if (log.term_names.empty()) {
        log.term_names.push_back("total");
        for (const auto& [k, v] : per_sample_terms[0].terms) log.term_names.push_back(k);
      }
      std::vector<double> row;
      row.push_back(mean_loss);
      for (std::size_t ti = 0; ti < per_sample_terms[0].terms.size(); ++ti) {
        double v = 0;
        for (const auto& lt : per_sample_terms) v += lt.terms[ti].second;
        row.push_back(v / static_cast<double>(n));
      }
      log.rows.push_back(std::move(row));

      opt.step(grads);
    }
    if (opt_io) {
      opt_io->m1 = opt.moment1();
      opt_io->m2 = opt.moment2();
      opt_io->steps = opt.steps_taken();
      opt_io->epochs_done = epoch + 1;
    }
  }
  if (!params.all_params_finite()) throw NumericalError("non-finite parameters after training");
  return log;
}

// Saves a checkpoint with optimizer state appended so training can resume
// byte-identically.
template <class S>
void save_training_checkpoint(const std::filesystem::path& path, const std::string& kind,
                              const json& config_echo, const ParamSet<S>& params,
                              const OptState<S>* opt, json extra = json::object()) {
  ParamSet<S> full = params.template cast<S>();
  if (opt && opt->steps > 0) {
    for (std::size_t i = 0; i < params.count(); ++i) {
      full.add("opt1." + params.name(i), opt->m1[i]);
      full.add("opt2." + params.name(i), opt->m2[i]);
    }
    extra["opt_steps"] = opt->steps;
    extra["opt_epochs_done"] = opt->epochs_done;
  }
  save_checkpoint(path, kind, config_echo, full, extra);
}

template <class S>
void split_training_checkpoint(const Checkpoint<S>& ck, ParamSet<S>* params, OptState<S>* opt) {
  for (std::size_t i = 0; i < ck.params.count(); ++i) {
    const std::string& n = ck.params.name(i);
    if (n.rfind("opt1.", 0) == 0 || n.rfind("opt2.", 0) == 0) continue;
    params->add(n, ck.params.value(i));
  }
  if (opt && ck.extra.contains("opt_steps")) {
    opt->steps = ck.extra["opt_steps"].template get<std::int64_t>();
    opt->epochs_done = ck.extra.value("opt_epochs_done", 0);
    for (std::size_t i = 0; i < params->count(); ++i) {
      opt->m1.push_back(ck.params.at("opt1." + params->name(i)));
      opt->m2.push_back(ck.params.at("opt2." + params->name(i)));
    }
  }
}

inline std::string train_log_csv(const TrainLog& log) {
  std::string out;
  for (std::size_t i = 0; i < log.term_names.size(); ++i) {
    if (i) out += ",";
    out += log.term_names[i];
  }
  out += "\n";
  char buf[64];
  for (const auto& row : log.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      std::snprintf(buf, sizeof(buf), "%.8g", row[i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace heat
