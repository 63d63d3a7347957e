#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/numcore/tensor.hpp"

namespace alignkt::nc {

// Named learnable arrays, kept in registration order.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable = true;
    };

    Tensor add(const std::string& name, Array init, bool trainable = true) {
        if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
        entries_.push_back({name, Tensor(std::move(init), trainable), trainable});
        return entries_.back().tensor;
    }

    bool contains(const std::string& name) const {
        return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
    }

    const Tensor& get(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw std::out_of_range("ParamStore: no parameter '" + name + "'");
    }
    Tensor& get(const std::string& name) {
        return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t num_values() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    // Deep copy of values (gradients are not copied).
    ParamStore clone() const {
        ParamStore out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.value(), e.trainable);
        return out;
    }

    // Overwrites values from `other`; names and shapes must match exactly.
    void assign_from(const ParamStore& other) {
        if (other.size() != size()) throw std::invalid_argument("ParamStore: parameter count mismatch");
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& src = other.entries_[i];
            auto& dst = entries_[i];
            if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape())
                throw std::invalid_argument("ParamStore: mismatch at '" + dst.name + "'");
            dst.tensor.mutable_value() = src.tensor.value();
        }
    }

private:
    std::vector<Entry> entries_;
};

}  // namespace alignkt::nc
