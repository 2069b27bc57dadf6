#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <string_view>

#include "pimms/rng.hpp"
#include "pimms/tensor.hpp"

namespace pimms::ad {

/// Named collection of trainable tensors. Insertion order is preserved and
/// determines checkpoint order and optimizer iteration order.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  /// Adds a zero-filled, grad-requiring tensor; duplicate names throw.
  Tensor& add(const std::string& name, Shape shape);
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  /// Toggles requires_grad on every parameter whose name starts with `prefix`.
  void set_trainable(std::string_view prefix, bool on);
  /// Copies every entry of `other` whose name starts with `prefix`.
  void merge(const ParamSet& other, std::string_view prefix = "");

 private:
  void rebuild_index();

  std::deque<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

inline constexpr std::string_view kInitScheme = "he_uniform";

/// He-uniform kernel U(-sqrt(6/fan_in), +sqrt(6/fan_in)) with zero bias.
/// Creates `<name>/kernel` [k, k, cin, cout] and `<name>/bias` [cout].
void add_conv(ParamSet& params, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout, Rng& rng);
/// Creates `<name>/weights` [in, out] and `<name>/bias` [out].
void add_dense(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

}  // namespace pimms::ad
