#pragma once

#include <string>
#include <utility>
#include <vector>

#include "madp/tensor.hpp"

namespace madp {

// Flat registry of named parameter tensors. Modules register their weights
// here and keep integer handles; the optimizer and checkpoint code see one
// uniform list.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  int add(std::string name, Tensor value) {
    check(index_of(name) < 0, "params: duplicate name " + name);
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return static_cast<int>(values.size()) - 1;
  }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  Tensor& value(int id) { return values[static_cast<std::size_t>(id)]; }
  const Tensor& value(int id) const { return values[static_cast<std::size_t>(id)]; }
  int count() const { return static_cast<int>(values.size()); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const Tensor& t : values) n += t.numel();
    return n;
  }
};

// One forward pass: every parameter becomes a leaf on the given tape, in
// registry order, so gradients can be read back by handle after backward().
struct ForwardPass {
  Tape* tape;
  std::vector<Var> vars;

  ForwardPass(Tape& t, const ParamStore& store) : tape(&t) {
    vars.reserve(store.values.size());
    for (const Tensor& v : store.values) vars.push_back(t.leaf(v));
  }

  Var operator[](int id) const { return vars[static_cast<std::size_t>(id)]; }
};

}  // namespace madp
