#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epk/tensor.hpp"

namespace epk {

/// Named half-open index range [begin, end) of the flat parameter vector.
struct ComponentRange {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  friend bool operator==(const ComponentRange&, const ComponentRange&) = default;
};

/// Ordered partition of [0, D) into named components.
class Registry {
 public:
  Registry() = default;
  explicit Registry(std::vector<ComponentRange> components);

  const std::vector<ComponentRange>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  std::size_t dim() const { return components_.empty() ? 0 : components_.back().end; }

  /// Throws std::invalid_argument listing the valid names when `name` is unknown.
  const ComponentRange& find(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  std::string names() const;

  /// Ranges are contiguous, disjoint, in order and cover [0, dim).
  void validate(std::size_t dim) const;

  friend bool operator==(const Registry&, const Registry&) = default;

 private:
  std::vector<ComponentRange> components_;
};

/// One weight tensor inside the flat vector.
struct TensorSlot {
  std::string name;
  std::string component;
  std::size_t offset = 0;
  Shape shape;
  std::size_t fan_in = 1;
  bool is_bias = false;
  std::size_t size() const { return shape_size(shape); }
};

struct ParamVector {
  std::vector<double> data;
  Registry registry;

  std::size_t dim() const { return data.size(); }
  std::span<const double> component(std::string_view name) const {
    const auto& r = registry.find(name);
    return std::span<const double>(data).subspan(r.begin, r.size());
  }
};

}  // namespace epk
