#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "edib/tensor.hpp"

namespace edib {

// Ordered, name-addressed parameter collection. Insertion order is part of
// the contract: it fixes the RNG stream during initialization, the layout of
// serialized weight files, and the alignment between parameters and
// optimizer moment vectors.
class ParamStore {
  public:
    int add(const std::string& name, Tensor value) {
        if (index_.count(name)) throw shape_error("duplicate parameter name: " + name);
        index_[name] = (int)names_.size();
        names_.push_back(name);
        values_.push_back(std::move(value));
        return (int)names_.size() - 1;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }

    int require(const std::string& name) const {
        int i = find(name);
        if (i < 0) throw shape_error("unknown parameter: " + name);
        return i;
    }

    int size() const { return (int)names_.size(); }
    const std::string& name(int i) const { return names_[i]; }
    const Tensor& value(int i) const { return values_[i]; }
    const Tensor& value(const std::string& name) const { return values_[require(name)]; }

    void set_value(int i, Tensor v) {
        if (!(v.shape() == values_[i].shape()))
            throw shape_error("parameter " + names_[i] + " expects shape " +
                              values_[i].shape().str() + ", got " + v.shape().str());
        values_[i] = std::move(v);
    }

    long long total_elements() const {
        long long n = 0;
        for (const Tensor& v : values_) n += v.numel();
        return n;
    }

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace edib
