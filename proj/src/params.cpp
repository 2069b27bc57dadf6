#include "pimms/params.hpp"

#include <cmath>
#include <stdexcept>

namespace pimms::ad {

ParamSet::ParamSet(const ParamSet& other) : entries_(other.entries_) { rebuild_index(); }

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    entries_ = other.entries_;
    rebuild_index();
  }
  return *this;
}

void ParamSet::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].name, i);
}

Tensor& ParamSet::add(const std::string& name, Shape shape) { return add(name, Tensor(std::move(shape))); }

Tensor& ParamSet::add(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  entries_.push_back(Entry{name, std::move(value)});
  index_.emplace(name, entries_.size() - 1);
  return entries_.back().tensor;
}

Tensor& ParamSet::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second].tensor;
}

const Tensor& ParamSet::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second].tensor;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParamSet::set_trainable(std::string_view prefix, bool on) {
  for (auto& e : entries_)
    if (std::string_view(e.name).starts_with(prefix)) e.tensor.set_requires_grad(on);
}

void ParamSet::merge(const ParamSet& other, std::string_view prefix) {
  for (const auto& e : other.entries_) {
    if (!std::string_view(e.name).starts_with(prefix)) continue;
    Tensor copy(e.tensor.shape(), e.tensor.storage());
    copy.set_requires_grad(e.tensor.requires_grad());
    if (contains(e.name)) {
      get(e.name) = std::move(copy);
    } else {
      entries_.push_back(Entry{e.name, std::move(copy)});
      index_.emplace(e.name, entries_.size() - 1);
    }
  }
}

namespace {

void fill_uniform(Tensor& t, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data()) v = dist(rng);
}

}  // namespace

void add_conv(ParamSet& params, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
  Tensor& kernel = params.add(name + "/kernel", Shape{k, k, cin, cout});
  fill_uniform(kernel, std::sqrt(6.0 / static_cast<double>(k * k * cin)), rng);
  params.add(name + "/bias", Shape{cout});
}

void add_dense(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Tensor& w = params.add(name + "/weights", Shape{in, out});
  fill_uniform(w, std::sqrt(6.0 / static_cast<double>(in)), rng);
  params.add(name + "/bias", Shape{out});
}

}  // namespace pimms::ad
