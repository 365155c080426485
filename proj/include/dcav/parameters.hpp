#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dcav/autodiff.hpp"

namespace dcav {

/// Named learnable tensors in creation order. Addresses are stable, so
/// model components may hold raw pointers into the store.
template <typename Real>
class ParameterStore {
 public:
  Parameter<Real>& create(const std::string& name, Tensor<Real> value);
  Parameter<Real>& get(const std::string& name);
  const Parameter<Real>& get(const std::string& name) const;
  Parameter<Real>* find(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t total_values() const;

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Learning rate selected by longest matching name prefix.
class LearningRates {
 public:
  explicit LearningRates(double fallback) : fallback_(fallback) {}
  void set(std::string prefix, double rate) { rates_[std::move(prefix)] = rate; }
  double rate_for(const std::string& name) const;

 private:
  double fallback_;
  std::map<std::string, double> rates_;
};

/// v ← momentum·v + grad; value ← value − lr·v; then grad ← 0.
/// Only parameters listed in `names` are touched; a parameter whose gradient
/// buffer is missing or non-finite raises.
template <typename Real>
void sgd_momentum_step(ParameterStore<Real>& store, const std::vector<std::string>& names,
                       const LearningRates& rates, double momentum);

/// Uniform(−bound, bound) fill driven by the caller's engine.
template <typename Real>
Tensor<Real> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

// Checkpoint / feature record files: magic "DCAV", u32 version, then records
// {u32 name length, utf-8 name, u32 rank, u32 dims[rank], f32 LE payload}.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Tensor<float> value;
};

void write_records(const std::filesystem::path& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_records(const std::filesystem::path& path);

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Real>& store);

/// Copies every record whose name exists in `store` (shapes must agree).
/// Returns the names that were loaded.
template <typename Real>
std::vector<std::string> load_checkpoint(const std::filesystem::path& path,
                                         ParameterStore<Real>& store);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace dcav
