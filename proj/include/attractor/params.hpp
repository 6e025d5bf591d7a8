#pragma once

// Named parameter collections with a writable/static split. The writable
// subset is the model's memory: the only parameters the write rule may touch.
// Iteration order is fixed at construction, which keeps every reduction and
// serialization deterministic.

#include <stdexcept>
#include <string>
#include <vector>

#include "attractor/array.hpp"

namespace attractor {

template <typename Real>
struct ParameterSet {
  struct Item {
    std::string name;
    Array<Real> value;
    bool writable = false;
  };

  std::vector<Item> items;

  void add(std::string name, Array<Real> value, bool writable) {
    if (find(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    items.push_back({std::move(name), std::move(value), writable});
  }

  Item* find(const std::string& name) {
    for (auto& it : items)
      if (it.name == name) return &it;
    return nullptr;
  }
  const Item* find(const std::string& name) const {
    for (const auto& it : items)
      if (it.name == name) return &it;
    return nullptr;
  }

  Array<Real>& at(const std::string& name) {
    Item* it = find(name);
    if (!it) throw std::invalid_argument("no parameter '" + name + "'");
    return it->value;
  }
  const Array<Real>& at(const std::string& name) const {
    const Item* it = find(name);
    if (!it) throw std::invalid_argument("no parameter '" + name + "'");
    return it->value;
  }

  std::vector<std::string> writable_names() const {
    std::vector<std::string> out;
    for (const auto& it : items)
      if (it.writable) out.push_back(it.name);
    return out;
  }

  // Count of writable scalars: the memory size ("rate") of the model.
  long memory_size() const {
    long n = 0;
    for (const auto& it : items)
      if (it.writable) n += it.value.size();
    return n;
  }

  long total_size() const {
    long n = 0;
    for (const auto& it : items) n += it.value.size();
    return n;
  }

  bool same_layout(const ParameterSet& o) const {
    if (items.size() != o.items.size()) return false;
    for (size_t i = 0; i < items.size(); ++i)
      if (items[i].name != o.items[i].name || items[i].value.shape != o.items[i].value.shape ||
          items[i].writable != o.items[i].writable)
        return false;
    return true;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& it : items)
      out.items.push_back({it.name, it.value.template cast<Other>(), it.writable});
    return out;
  }
};

}  // namespace attractor
