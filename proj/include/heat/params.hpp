#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "heat/binio.hpp"
#include "heat/matrix.hpp"
#include "heat/rng.hpp"

namespace heat {

// Named parameter arrays in a stable (insertion) order. Order matters: the
// optimizer walks parameters in this order, and the checkpoint payload is
// laid out in it.
template <class S>
class ParamSet {
 public:
  Eigen::Index add(const std::string& name, Mat<S> value) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
    return static_cast<Eigen::Index>(names_.size() - 1);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Mat<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
    return values_[it->second];
  }
  const Mat<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
    return values_[it->second];
  }

  std::size_t count() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Mat<S>& value(std::size_t i) { return values_[i]; }
  const Mat<S>& value(std::size_t i) const { return values_[i]; }

  bool all_params_finite() const {
    for (const auto& v : values_) {
      if (!all_finite(v)) return false;
    }
    return true;
  }

  template <class S2>
  ParamSet<S2> cast() const {
    ParamSet<S2> out;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      out.add(names_[i], values_[i].template cast<S2>());
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
  std::map<std::string, std::size_t> index_;
};

// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class S>
Mat<S> init_linear(Rng& rng, Eigen::Index fan_in, Eigen::Index rows, Eigen::Index cols) {
  double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
  return m;
}

// Decoupled-weight-decay adaptive optimizer (beta1=0.9, beta2=0.999) with a
// cosine-annealed learning rate over total_steps.
template <class S>
class AdamW {
 public:
  AdamW(ParamSet<S>& params, double lr, double weight_decay, std::int64_t total_steps)
      : params_(params), lr0_(lr), weight_decay_(weight_decay), total_steps_(total_steps) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_[i] = Mat<S>::Zero(params.value(i).rows(), params.value(i).cols());
      v_[i] = Mat<S>::Zero(params.value(i).rows(), params.value(i).cols());
    }
  }

  double current_lr() const {
    if (total_steps_ <= 0) return lr0_;
    double frac = static_cast<double>(step_) / static_cast<double>(total_steps_);
    if (frac > 1.0) frac = 1.0;
    return lr0_ * 0.5 * (1.0 + std::cos(kPi * frac));
  }

  // grads[i] pairs with params.value(i); missing (empty) grads are skipped.
  void step(const std::vector<Mat<S>>& grads) {
    const S b1 = S(0.9), b2 = S(0.999), eps = S(1e-8);
    double lr = current_lr();
    ++step_;
    S bc1 = S(1) - static_cast<S>(std::pow(0.9, static_cast<double>(step_)));
    S bc2 = S(1) - static_cast<S>(std::pow(0.999, static_cast<double>(step_)));
    for (std::size_t i = 0; i < params_.count(); ++i) {
      if (grads[i].size() == 0) continue;
      Mat<S>& p = params_.value(i);
      m_[i] = b1 * m_[i] + (S(1) - b1) * grads[i];
      v_[i] = b2 * v_[i] + (S(1) - b2) * grads[i].cwiseProduct(grads[i]);
      Mat<S> mhat = m_[i] / bc1;
      Mat<S> vhat = v_[i] / bc2;
      p.array() -= static_cast<S>(lr) *
                   (mhat.array() / (vhat.array().sqrt() + eps) +
                    static_cast<S>(weight_decay_) * p.array());
    }
  }

  std::int64_t steps_taken() const { return step_; }
  void set_steps_taken(std::int64_t s) { step_ = s; }
  std::vector<Mat<S>>& moment1() { return m_; }
  std::vector<Mat<S>>& moment2() { return v_; }

 private:
  ParamSet<S>& params_;
  double lr0_;
  double weight_decay_;
  std::int64_t total_steps_;
  std::int64_t step_ = 0;
  std::vector<Mat<S>> m_;
  std::vector<Mat<S>> v_;
};

// ---- checkpoint file: JSON header line + raw LE f32 payload ----

struct CheckpointExtra {
  json fields = json::object();
};

template <class S>
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const json& config_echo, const ParamSet<S>& params,
                     const json& extra = json::object()) {
  std::vector<char> payload;
  json manifest = json::array();
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Mat<S>& v = params.value(i);
    manifest.push_back({{"name", params.name(i)},
                        {"rows", v.rows()},
                        {"cols", v.cols()},
                        {"offset", payload.size()}});
    append_mat_f32(payload, v);
  }
  json header = {{"schema_version", 1},
                 {"kind", kind},
                 {"config", config_echo},
                 {"manifest", manifest},
                 {"payload_sha256", sha256_hex(payload)},
                 {"extra", extra}};
  write_file(path, header.dump(), payload);
}

template <class S>
struct Checkpoint {
  std::string kind;
  json config;
  json extra;
  ParamSet<S> params;
};

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  HeaderAndPayload hp = read_header_file(path);
  if (!hp.header.contains("kind") || !hp.header.contains("manifest")) {
    throw FormatError("checkpoint header missing fields: " + path.string());
  }
  if (hp.header.value("payload_sha256", "") != sha256_hex(hp.payload)) {
    throw FormatError("checkpoint payload checksum mismatch: " + path.string());
  }
  Checkpoint<S> ck;
  ck.kind = hp.header["kind"].get<std::string>();
  ck.config = hp.header["config"];
  ck.extra = hp.header.value("extra", json::object());
  for (const auto& entry : hp.header["manifest"]) {
    auto rows = entry["rows"].get<Eigen::Index>();
    auto cols = entry["cols"].get<Eigen::Index>();
    std::size_t off = entry["offset"].get<std::size_t>();
    ck.params.add(entry["name"].get<std::string>(),
                  read_mat_f32<S>(hp.payload, off, rows, cols));
  }
  return ck;
}

}  // namespace heat
