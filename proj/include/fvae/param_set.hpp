#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fvae/common.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

// Ordered, named collection of tensors: a model's weights, the unit of
// aggregation and serialization. Two sets are aggregation-compatible iff
// names, order and shapes all match.
template <typename S>
class ParamSetT {
public:
    struct Entry {
        std::string name;
        TensorT<S> tensor;
    };

    void add(std::string name, TensorT<S> tensor) {
        if (index_.count(name) != 0) {
            throw ConfigError("duplicate parameter name: " + name);
        }
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(tensor)});
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    Entry& operator[](std::size_t i) { return entries_[i]; }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<S>& tensor(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("no such parameter: " + name);
        return entries_[it->second].tensor;
    }

    const TensorT<S>& tensor(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UsageError("no such parameter: " + name);
        return entries_[it->second].tensor;
    }

    bool compatible_with(const ParamSetT& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != other.entries_[i].name) return false;
            if (entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) return false;
        }
        return true;
    }

    void require_compatible(const ParamSetT& other, const std::string& context) const {
        if (!compatible_with(other)) {
            throw ProtocolError("incompatible parameter sets in " + context);
        }
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    bool bitwise_equal(const ParamSetT& other) const {
        if (!compatible_with(other)) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].tensor.vec() != other.entries_[i].tensor.vec()) return false;
        }
        return true;
    }

    template <typename T>
    ParamSetT<T> cast() const {
        ParamSetT<T> out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<T>());
        return out;
    }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamSet = ParamSetT<float>;
using ParamSet64 = ParamSetT<double>;

}  // namespace fvae
