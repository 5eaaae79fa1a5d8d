// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "climber/core/tensor.hpp"

namespace climber {

// A named trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  // Accumulated by Tape::backward; mutable so that forward passes can take the
  // owning model by const reference.
  mutable Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::Zero(value.rows(), value.cols())) {}

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode record. Operations append nodes in evaluation order, so the node
// list is already topologically sorted and backward() is a reverse sweep.
//
// A tape built with record=false only evaluates values; it is what inference
// uses. Parameters are referenced, not copied, in both modes.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var param(const Parameter& p);

  // Appends an op result. `backward` receives the gradient w.r.t. the result
  // and must accumulate into its inputs via accumulate().
  Var push(Tensor value, BackwardFn backward);

  const Tensor& value(int id) const { return *nodes_[static_cast<std::size_t>(id)].value; }
  Tensor& grad(int id);
  void accumulate(const Var& v, const Tensor& g);
  // Direct access for sparse accumulation; allocates a zero gradient on first use.
  Tensor& grad_of(const Var& v) { return grad(v.id()); }

  // Seeds d(loss)/d(loss) = 1 and sweeps backward. Every parameter that was
  // registered through param() gets its node gradient added to Parameter::grad,
  // zero-valued when no path reaches the loss.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

  // Attention rows with every key blocked and no null slot.
  std::size_t degenerate_rows() const { return degenerate_rows_; }
  void count_degenerate(std::size_t n) { degenerate_rows_ += n; }

 private:
  struct Node {
    Tensor own;
    const Tensor* value = nullptr;
    Tensor grad;
    bool has_grad = false;
    BackwardFn backward;
    const Parameter* param = nullptr;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::size_t degenerate_rows_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Differentiable operations. All inputs must live on the same tape.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);
// x (rows x c) + bias (1 x c) broadcast over rows.
Var add_row(const Var& x, const Var& bias);
Var gelu(const Var& x);
inline constexpr Scalar kLayerNormEpsilon = 1e-5;
Var layer_norm(const Var& x, const Var& gain, const Var& bias);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// out.row(i) = table.row(rows[i]); gradients scatter-add back into the table.
Var gather_rows(const Var& table, std::vector<Index> rows);
// Sum of every entry, as a 1x1 tensor.
Var sum(const Var& x);
Var add_scalars(std::span<const Var> terms);

// Row-wise softmax over logits + mask where blocked(i, j) != 0 means -inf.
// Blocked entries get exactly zero weight. Rows with every entry blocked come
// back all-zero and are counted on the tape (Tape::degenerate_rows).
Var softmax_masked(const Var& logits, const MatrixT<std::uint8_t>& blocked);

// Query/key bookkeeping for fused multi-head attention over a ragged batch of
// sequences stacked row-wise.
struct AttentionLayout {
  Index heads = 1;
  std::vector<Index> key_offset;  // per sequence: first row in K/V
  std::vector<Index> key_length;  // per sequence: number of keys
  // Per query row of Q.
  std::vector<Index> query_seq;
  std::vector<Index> mask_offset;     // start of this query's row in `blocked` and `bucket`
  std::vector<std::uint8_t> blocked;  // 1 = key blocked for this query
  std::vector<Index> bucket;          // relative-bias column for (query, key)

  Index num_queries() const { return static_cast<Index>(query_seq.size()); }
  // Appends one query against sequence `seq`; `blocked_row` and `bucket_row`
  // must both have key_length[seq] entries.
  void add_query(Index seq, std::span<const std::uint8_t> blocked_row,
                 std::span<const Index> bucket_row);
};

struct AttentionParams {
  Var rel_bias;  // heads x buckets; optional
  Var null_key;  // 1 x d; optional, together with null_value
  Var null_value;
};

// softmax(q k^T / sqrt(d_head) + rel_bias + mask) v per head. q is
// (num_queries x d); k, v are (total keys x d).
Var multi_head_attention(const Var& q, const Var& k, const Var& v,
                         std::shared_ptr<const AttentionLayout> layout,
                         const AttentionParams& extra);

// Mean over rows r of -log softmax(scores_r) at the target column, where the
// softmax runs over {target_r} and negatives[r]. scores = queries * candidates^T.
Var sampled_softmax_loss(const Var& queries, const Var& candidates,
                         std::vector<Index> target, std::vector<std::vector<Index>> negatives);

// ---------------------------------------------------------------------------
// Plain kernels shared by ops and tests.

template <typename T>
struct MaskedSoftmaxRow {
  RowVectorT<T> weights;
  bool degenerate = false;
};

// Softmax over `logits` with blocked entries treated as -inf.
template <typename T>
MaskedSoftmaxRow<T> softmax_masked_row(const RowVectorT<T>& logits,
                                       std::span<const std::uint8_t> blocked) {
  if (static_cast<std::size_t>(logits.size()) != blocked.size())
    throw ConfigError("softmax_masked: logits length " + std::to_string(logits.size()) +
                      " != mask length " + std::to_string(blocked.size()));
  MaskedSoftmaxRow<T> out{RowVectorT<T>::Zero(logits.size()), false};
  bool any = false;
  T max_logit = T(0);
  for (Index j = 0; j < logits.size(); ++j) {
    if (blocked[static_cast<std::size_t>(j)]) continue;
    if (!any || logits[j] > max_logit) max_logit = logits[j];
    any = true;
  }
  if (!any) {
    out.degenerate = true;
    return out;
  }
  T total = T(0);
  for (Index j = 0; j < logits.size(); ++j) {
    if (blocked[static_cast<std::size_t>(j)]) continue;
    out.weights[j] = std::exp(logits[j] - max_logit);
    total += out.weights[j];
  }
  out.weights /= total;
  return out;
}

}  // namespace climber
