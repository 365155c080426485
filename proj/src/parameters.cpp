#include "dcav/parameters.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dcav {

template <typename Real>
Parameter<Real>& ParameterStore<Real>::create(const std::string& name, Tensor<Real> value) {
  if (index_.count(name)) throw InvalidArgument("parameter '" + name + "' already exists");
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter<Real>>(name, std::move(value)));
  return *params_.back();
}

template <typename Real>
Parameter<Real>* ParameterStore<Real>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename Real>
Parameter<Real>& ParameterStore<Real>::get(const std::string& name) {
  if (auto* p = find(name)) return *p;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

template <typename Real>
const Parameter<Real>& ParameterStore<Real>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return *params_[it->second];
}

template <typename Real>
void ParameterStore<Real>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename Real>
std::size_t ParameterStore<Real>::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value().size();
  return n;
}

double LearningRates::rate_for(const std::string& name) const {
  double rate = fallback_;
  std::size_t best = 0;
  for (const auto& [prefix, r] : rates_) {
    if (prefix.size() >= best && name.compare(0, prefix.size(), prefix) == 0) {
      best = prefix.size();
      rate = r;
    }
  }
  return rate;
}

template <typename Real>
void sgd_momentum_step(ParameterStore<Real>& store, const std::vector<std::string>& names,
                       const LearningRates& rates, double momentum) {
  for (const auto& name : names) {
    Parameter<Real>& p = store.get(name);
    if (p.grad().shape() != p.value().shape()) {
      throw InvalidArgument("sgd: parameter '" + name + "' has no gradient buffer");
    }
    if (!p.grad().all_finite()) {
      throw NonFiniteError("sgd: non-finite gradient in parameter '" + name + "'");
    }
    const Real lr = static_cast<Real>(rates.rate_for(name));
    const Real mu = static_cast<Real>(momentum);
    auto v = p.momentum().data();
    auto g = p.grad().data();
    auto w = p.value().data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      w[i] -= lr * v[i];
    }
    p.zero_grad();
  }
}

template <typename Real>
Tensor<Real> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<Real> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<Real>(dist(rng));
  return t;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "record files are little-endian; big-endian hosts need byte swapping");

constexpr char kMagic[4] = {'D', 'C', 'A', 'V'};

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError("truncated record file " + path.string());
  }
  return v;
}

}  // namespace

void write_records(const std::filesystem::path& path, const std::vector<TensorRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  for (const auto& rec : records) {
    put_u32(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put_u32(os, static_cast<std::uint32_t>(rec.value.rank()));
    for (std::size_t d : rec.value.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(rec.value.data().data()),
             static_cast<std::streamsize>(rec.value.size() * sizeof(float)));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<TensorRecord> read_records(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path.string() + " is not a DCAV record file");
  }
  const std::uint32_t version = get_u32(is, path);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported record version " + std::to_string(version));
  }
  std::vector<TensorRecord> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    TensorRecord rec;
    const std::uint32_t name_len = get_u32(is, path);
    rec.name.resize(name_len);
    if (!is.read(rec.name.data(), name_len)) throw DataError("truncated record name in " + path.string());
    const std::uint32_t rank = get_u32(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(is, path);
    std::vector<float> data(shape_size(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float)))) {
      throw DataError("truncated payload for '" + rec.name + "' in " + path.string());
    }
    rec.value = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(rec));
  }
  return out;
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Real>& store) {
  std::vector<TensorRecord> records;
  records.reserve(store.size());
  for (const auto& p : store) records.push_back({p->name(), p->value().template cast<float>()});
  write_records(path, records);
}

template <typename Real>
std::vector<std::string> load_checkpoint(const std::filesystem::path& path,
                                         ParameterStore<Real>& store) {
  std::vector<std::string> loaded;
  for (auto& rec : read_records(path)) {
    Parameter<Real>* p = store.find(rec.name);
    if (!p) continue;
    if (p->value().shape() != rec.value.shape()) {
      throw DataError("checkpoint " + path.string() + ": '" + rec.name + "' has shape " +
                      shape_string(rec.value.shape()) + ", model expects " +
                      shape_string(p->value().shape()));
    }
    p->value() = rec.value.template cast<Real>();
    loaded.push_back(rec.name);
  }
  return loaded;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void sgd_momentum_step(ParameterStore<float>&, const std::vector<std::string>&,
                                const LearningRates&, double);
template void sgd_momentum_step(ParameterStore<double>&, const std::vector<std::string>&,
                                const LearningRates&, double);
template Tensor<float> uniform_tensor(Shape, double, std::mt19937_64&);
template Tensor<double> uniform_tensor(Shape, double, std::mt19937_64&);
template void save_checkpoint(const std::filesystem::path&, const ParameterStore<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParameterStore<double>&);
template std::vector<std::string> load_checkpoint(const std::filesystem::path&, ParameterStore<float>&);
template std::vector<std::string> load_checkpoint(const std::filesystem::path&, ParameterStore<double>&);

}  // namespace dcav
