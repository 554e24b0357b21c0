#include "epk/params.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace epk {

Registry::Registry(std::vector<ComponentRange> components) : components_(std::move(components)) {}

const ComponentRange& Registry::find(std::string_view name) const {
  auto it = std::find_if(components_.begin(), components_.end(), [&](const auto& c) { return c.name == name; });
  if (it == components_.end()) {
    throw std::invalid_argument("unknown component '" + std::string(name) + "'; valid components: " + names());
  }
  return *it;
}

bool Registry::contains(std::string_view name) const {
  return std::any_of(components_.begin(), components_.end(), [&](const auto& c) { return c.name == name; });
}

std::size_t Registry::index_of(std::string_view name) const {
  return static_cast<std::size_t>(&find(name) - components_.data());
}

std::string Registry::names() const {
  std::string out;
  for (const auto& c : components_) {
    if (!out.empty()) out += ", ";
    out += c.name;
  }
  return out;
}

void Registry::validate(std::size_t dim) const {
  std::set<std::string> seen;
  std::size_t cursor = 0;
  for (const auto& c : components_) {
    if (!seen.insert(c.name).second) throw std::logic_error("registry: duplicate component '" + c.name + "'");
    if (c.begin != cursor || c.end < c.begin) {
      throw std::logic_error("registry: component '" + c.name + "' does not start where the previous one ended");
    }
    cursor = c.end;
  }
  if (cursor != dim) {
    throw std::logic_error("registry covers " + std::to_string(cursor) + " of " + std::to_string(dim) +
                           " parameters");
  }
}

}  // namespace epk
