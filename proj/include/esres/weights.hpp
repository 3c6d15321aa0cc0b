#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "esres/error.hpp"
#include "esres/model.hpp"

namespace esres::nn {

struct StoredTensor {
  std::vector<int> shape;
  std::vector<float> values;
};

// Insertion-ordered name -> tensor map, the on-disk unit.
using WeightStore = std::vector<std::pair<std::string, StoredTensor>>;

void save_weights(const WeightStore& store, const std::string& path);
WeightStore load_weights(const std::string& path);

template <typename T>
WeightStore snapshot(EsResNet<T>& model) {
  WeightStore store;
  for (auto& [name, p] : model.named_parameters()) {
    StoredTensor t;
    t.shape = p.shape();
    t.values.assign(p.value().begin(), p.value().end());
    store.emplace_back(name, std::move(t));
  }
  for (auto& buf : model.named_buffers()) {
    StoredTensor t;
    t.shape = {static_cast<int>(buf.data->size())};
    t.values.assign(buf.data->begin(), buf.data->end());
    store.emplace_back(buf.name, std::move(t));
  }
  return store;
}

// Copies stored tensors into the model by name. Head tensors ("fc." prefix)
// that are absent or shaped for a different class count are left at their
// fresh initialization; any other absent or mis-shaped tensor is an error.
// Stored names the model does not expect are ignored.
template <typename T>
void restore(EsResNet<T>& model, const WeightStore& store) {
  std::unordered_map<std::string, const StoredTensor*> by_name;
  for (const auto& [name, t] : store) by_name.emplace(name, &t);

  std::vector<std::string> missing;
  std::vector<std::string> mismatched;
  auto find = [&](const std::string& name, const std::vector<int>& shape,
                  bool is_head) -> const StoredTensor* {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (!is_head) missing.push_back(name);
      return nullptr;
    }
    if (it->second->shape != shape) {
      if (!is_head) mismatched.push_back(name);
      return nullptr;
    }
    return it->second;
  };

  for (auto& [name, p] : model.named_parameters()) {
    const bool is_head = name.rfind("fc.", 0) == 0;
    if (const StoredTensor* t = find(name, p.shape(), is_head)) {
      auto& v = p.value();
      for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t->values[i]);
    }
  }
  for (auto& buf : model.named_buffers()) {
    const std::vector<int> shape = {static_cast<int>(buf.data->size())};
    if (const StoredTensor* t = find(buf.name, shape, false)) {
      for (size_t i = 0; i < buf.data->size(); ++i)
        (*buf.data)[i] = static_cast<T>(t->values[i]);
    }
  }

  if (!missing.empty() || !mismatched.empty()) {
    std::string msg = "weights: ";
    if (!missing.empty()) {
      msg += "missing tensors:";
      for (const auto& n : missing) msg += " " + n;
    }
    if (!mismatched.empty()) {
      if (!missing.empty()) msg += "; ";
      msg += "shape mismatch:";
      for (const auto& n : mismatched) msg += " " + n;
    }
    throw DataError(msg);
  }
}

}  // namespace esres::nn
