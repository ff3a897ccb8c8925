// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "rdte/tensor.hpp"

namespace rdte {

/// One named entry. Non-trainable entries hold state such as batch-norm
/// running statistics; they are checkpointed but never optimized.
struct Param {
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

/// Named parameters keyed by dotted path ("enc.stage1.conv.w"). Iteration is
/// in lexicographic name order, which fixes checkpoint and optimizer order.
class ParamStore {
 public:
  using Map = std::map<std::string, Param>;

  Param& add(const std::string& name, Tensor value, bool trainable = true);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t size() const { return params_.size(); }
  /// Total scalar count; trainable entries only unless `all` is set.
  std::size_t scalar_count(bool all = false) const;
  std::vector<std::string> names() const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

}  // namespace rdte
