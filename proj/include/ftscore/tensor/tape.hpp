#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ftscore/error.hpp"
#include "ftscore/tensor/ops.hpp"
#include "ftscore/tensor/tensor.hpp"

namespace ftscore {

using SlotId = std::size_t;

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, SlotId id) : tape_(tape), id_(id) {}

    [[nodiscard]] SlotId id() const noexcept { return id_; }
    [[nodiscard]] Tape* tape() const noexcept { return tape_; }
    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }

private:
    Tape* tape_ = nullptr;
    SlotId id_ = 0;
};

/// One recorded operation.
struct Record {
    OpKind kind;
    std::vector<SlotId> inputs;
    SlotId output;
    OpAttrs attrs;
    Saved saved;
};

/// Gradient of a seed with respect to every slot of a tape.
class Gradients {
public:
    explicit Gradients(std::vector<Tensor> by_slot) : by_slot_(std::move(by_slot)) {}
    [[nodiscard]] const Tensor& of(const Var& v) const { return by_slot_.at(v.id()); }
    [[nodiscard]] const Tensor& of(SlotId id) const { return by_slot_.at(id); }
    Tensor take(const Var& v) { return std::move(by_slot_.at(v.id())); }

private:
    std::vector<Tensor> by_slot_;
};

/// Append-only record of forward operations over the closed op set.
///
/// Slots are numbered in creation order, so the record list is topologically
/// sorted by construction. Leaves are either trainable (gradients reported) or
/// constants (no gradient ever flows into them).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    Var leaf(Tensor value, std::string name = {})
    {
        return push(std::move(value), true, std::nullopt, std::move(name));
    }

    Var constant(Tensor value) { return push(std::move(value), false, std::nullopt, {}); }

    Var apply(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {})
    {
        std::vector<const Tensor*> args;
        std::vector<SlotId> ids;
        bool grad = false;
        args.reserve(inputs.size());
        for (const Var& v : inputs) {
            if (v.tape() != this) {
                throw UsageError(std::string(op_name(kind)) + ": input belongs to another tape");
            }
            args.push_back(&values_[v.id()]);
            ids.push_back(v.id());
            grad = grad || requires_grad_[v.id()];
        }
        OpResult result = evaluate(kind, args, attrs);
        const SlotId out = values_.size();
        records_.push_back(Record{kind, std::move(ids), out, std::move(attrs),
                                  grad ? std::move(result.saved) : Saved{}});
        return push(std::move(result.value), grad, records_.size() - 1, {});
    }

    Var apply(OpKind kind, std::initializer_list<Var> inputs, OpAttrs attrs = {})
    {
        return apply(kind, std::span<const Var>(inputs.begin(), inputs.size()), std::move(attrs));
    }

    [[nodiscard]] const Tensor& value(SlotId id) const { return values_.at(id); }
    [[nodiscard]] bool requires_grad(SlotId id) const { return requires_grad_.at(id); }
    [[nodiscard]] bool is_leaf(SlotId id) const { return !producer_.at(id).has_value(); }
    [[nodiscard]] const std::string& name(SlotId id) const { return names_.at(id); }
    [[nodiscard]] std::size_t slot_count() const noexcept { return values_.size(); }
    [[nodiscard]] const std::vector<Record>& records() const noexcept { return records_; }

    /// Trainable leaves in creation order.
    [[nodiscard]] std::vector<SlotId> trainable_leaves() const
    {
        std::vector<SlotId> out;
        for (SlotId id = 0; id < values_.size(); ++id) {
            if (is_leaf(id) && requires_grad_[id]) {
                out.push_back(id);
            }
        }
        return out;
    }

    /// Reverse sweep from a one-element seed. `seed_grad` is d(objective)/d(seed);
    /// trainable leaves that the seed does not reach receive zero tensors.
    [[nodiscard]] Gradients backward(const Var& seed, double seed_grad = 1.0) const
    {
        if (seed.tape() != this) {
            throw UsageError("backward: seed belongs to another tape");
        }
        const Tensor& seed_value = values_.at(seed.id());
        if (seed_value.size() != 1) {
            throw ShapeError("backward: seed must be a scalar, got shape " +
                             shape_str(seed_value.shape()));
        }
        std::vector<Tensor> grads(values_.size());
        grads[seed.id()] = Tensor(seed_value.shape(), seed_grad);

        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            const Record& rec = *it;
            if (rec.output > seed.id() || grads[rec.output].empty() ||
                !requires_grad_[rec.output]) {
                continue;
            }
            std::vector<const Tensor*> args;
            std::vector<bool> need;
            for (SlotId id : rec.inputs) {
                args.push_back(&values_[id]);
                need.push_back(requires_grad_[id]);
            }
            std::vector<Tensor> local = backward_rule(rec.kind, args, values_[rec.output],
                                                      rec.attrs, rec.saved, grads[rec.output], need);
            for (std::size_t i = 0; i < rec.inputs.size(); ++i) {
                if (!need[i] || local[i].empty()) {
                    continue;
                }
                Tensor& acc = grads[rec.inputs[i]];
                if (acc.empty()) {
                    acc = std::move(local[i]);
                } else {
                    for (std::size_t j = 0; j < acc.size(); ++j) {
                        acc[j] += local[i][j];
                    }
                }
            }
            // intermediate gradients are no longer needed once propagated
            if (!is_leaf(rec.output)) {
                grads[rec.output] = Tensor();
            }
        }
        for (SlotId id = 0; id < values_.size(); ++id) {
            if (is_leaf(id) && requires_grad_[id] && grads[id].empty()) {
                grads[id] = Tensor(values_[id].shape());
            }
        }
        return Gradients(std::move(grads));
    }

    /// Recomputes every recorded op from the stored leaves.
    [[nodiscard]] std::vector<Tensor> replay() const
    {
        std::vector<Tensor> values(values_.size());
        for (SlotId id = 0; id < values_.size(); ++id) {
            if (is_leaf(id)) {
                values[id] = values_[id];
            }
        }
        for (const Record& rec : records_) {
            std::vector<const Tensor*> args;
            for (SlotId id : rec.inputs) {
                args.push_back(&values[id]);
            }
            values[rec.output] = forward(rec.kind, args, rec.attrs);
        }
        return values;
    }

    /// True when replay reproduces every recorded value bit-for-bit.
    [[nodiscard]] bool replay_matches() const
    {
        const std::vector<Tensor> again = replay();
        for (SlotId id = 0; id < values_.size(); ++id) {
            if (!again[id].identical(values_[id])) {
                return false;
            }
        }
        return true;
    }

private:
    Var push(Tensor value, bool grad, std::optional<std::size_t> producer, std::string name)
    {
        values_.push_back(std::move(value));
        requires_grad_.push_back(grad);
        producer_.push_back(producer);
        names_.push_back(std::move(name));
        return Var(this, values_.size() - 1);
    }

    std::vector<Tensor> values_;
    std::vector<bool> requires_grad_;
    std::vector<std::optional<std::size_t>> producer_;
    std::vector<std::string> names_;
    std::vector<Record> records_;
};

inline const Tensor& Var::value() const
{
    if (tape_ == nullptr) {
        throw UsageError("Var is not attached to a tape");
    }
    return tape_->value(id_);
}

} // namespace ftscore
