// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "climber/core/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace climber {

namespace {

void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ConfigError(std::string(op) + ": inputs on different tapes");
}

}  // namespace

Var Tape::constant(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  n.value = &n.own;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.value = &p.value;
  if (record_) n.param = &p;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Tensor value, BackwardFn backward) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  n.value = &n.own;
  if (record_) n.backward = std::move(backward);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad.setZero(n.value->rows(), n.value->cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) { grad(v.id()) += g; }

void Tape::backward(const Var& loss) {
  if (!record_) throw ConfigError("backward() on a tape that does not record");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ConfigError("backward() needs a scalar loss, got " + shape_string(loss.value()));
  grad(loss.id()).setConstant(1.0);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.param) continue;
    if (n.param->grad.rows() != n.param->value.rows() || n.param->grad.cols() != n.param->value.cols())
      n.param->zero_grad();
    if (n.has_grad) n.param->grad += n.grad;
  }
}

void AttentionLayout::add_query(Index seq, std::span<const std::uint8_t> blocked_row,
                                std::span<const Index> bucket_row) {
  const auto len = static_cast<std::size_t>(key_length.at(static_cast<std::size_t>(seq)));
  if (blocked_row.size() != len || bucket_row.size() != len)
    throw ConfigError("AttentionLayout::add_query: row length mismatch");
  query_seq.push_back(seq);
  mask_offset.push_back(static_cast<Index>(blocked.size()));
  blocked.insert(blocked.end(), blocked_row.begin(), blocked_row.end());
  bucket.insert(bucket.end(), bucket_row.begin(), bucket_row.end());
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows())
    throw ConfigError("matmul: dimension mismatch " + shape_string(a.value()) + " x " +
                      shape_string(b.value()));
  Tensor out = a.value() * b.value();
  return a.tape().push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g * b.value().transpose());
    t.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("add: shape mismatch " + shape_string(a.value()) + " vs " +
                      shape_string(b.value()));
  Tensor out = a.value() + b.value();
  return a.tape().push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("sub: shape mismatch " + shape_string(a.value()) + " vs " +
                      shape_string(b.value()));
  Tensor out = a.value() - b.value();
  return a.tape().push(std::move(out), [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.grad_of(b) -= g;
  });
}

Var scale(const Var& a, Scalar s) {
  Tensor out = a.value() * s;
  return a.tape().push(std::move(out), [a, s](Tape& t, const Tensor& g) { t.accumulate(a, g * s); });
}

Var add_row(const Var& x, const Var& bias) {
  require_same_tape(x, bias, "add_row");
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw ConfigError("add_row: bias " + shape_string(bias.value()) + " does not match " +
                      shape_string(x.value()));
  Tensor out = x.value().rowwise() + bias.value().row(0);
  return x.tape().push(std::move(out), [x, bias](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    t.grad_of(bias) += g.colwise().sum();
  });
}

Var gelu(const Var& x) {
  constexpr Scalar inv_sqrt2 = 0.70710678118654752440;
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.size(); ++i) {
    const Scalar v = xv.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return x.tape().push(std::move(out), [x](Tape& t, const Tensor& g) {
    const Scalar inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const Tensor& xv = x.value();
    Tensor& gx = t.grad_of(x);
    for (Index i = 0; i < xv.size(); ++i) {
      const Scalar v = xv.data()[i];
      const Scalar cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx.data()[i] += g.data()[i] * (cdf + v * pdf);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Tensor& xv = x.value();
  const Index cols = xv.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols)
    throw ConfigError("layer_norm: gain/bias must be 1x" + std::to_string(cols));
  Tensor normed(xv.rows(), cols);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const Scalar mean = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    normed.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  Tensor out = (normed.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  if (!x.tape().recording()) return x.tape().push(std::move(out), {});
  return x.tape().push(
      std::move(out), [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](
                          Tape& t, const Tensor& g) {
        const Index n = normed.cols();
        t.grad_of(gain) += (g.array() * normed.array()).colwise().sum().matrix();
        t.grad_of(bias) += g.colwise().sum();
        Tensor& gx = t.grad_of(x);
        for (Index r = 0; r < normed.rows(); ++r) {
          const RowVector dhat = (g.row(r).array() * gain.value().row(0).array()).matrix();
          const Scalar mean_d = dhat.sum() / static_cast<Scalar>(n);
          const Scalar mean_dx = dhat.dot(normed.row(r)) / static_cast<Scalar>(n);
          gx.row(r).array() +=
              inv_std[r] * (dhat.array() - mean_d - normed.row(r).array() * mean_dx);
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row count mismatch");
    require_same_tape(parts[0], p, "concat_cols");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), [inputs](Tape& t, const Tensor& g) {
    Index c = 0;
    for (const Var& p : inputs) {
      t.grad_of(p) += g.middleCols(c, p.cols());
      c += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ConfigError("concat_rows: column count mismatch");
    require_same_tape(parts[0], p, "concat_rows");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), [inputs](Tape& t, const Tensor& g) {
    Index r = 0;
    for (const Var& p : inputs) {
      t.grad_of(p) += g.middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

Var gather_rows(const Var& table, std::vector<Index> rows) {
  const Tensor& tv = table.value();
  Tensor out(static_cast<Index>(rows.size()), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= tv.rows())
      throw ConfigError("gather_rows: row " + std::to_string(rows[i]) + " out of range " +
                        shape_string(tv));
    out.row(static_cast<Index>(i)) = tv.row(rows[i]);
  }
  return table.tape().push(std::move(out), [table, rows = std::move(rows)](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad_of(table);
    for (std::size_t i = 0; i < rows.size(); ++i) gt.row(rows[i]) += g.row(static_cast<Index>(i));
  });
}

Var sum(const Var& x) {
  Tensor out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().push(std::move(out), [x](Tape& t, const Tensor& g) {
    t.grad_of(x).array() += g(0, 0);
  });
}

Var add_scalars(std::span<const Var> terms) {
  if (terms.empty()) throw ConfigError("add_scalars: no terms");
  Tensor out = Tensor::Zero(1, 1);
  for (const Var& v : terms) {
    if (v.rows() != 1 || v.cols() != 1) throw ConfigError("add_scalars: term is not 1x1");
    out(0, 0) += v.value()(0, 0);
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  return terms[0].tape().push(std::move(out), [inputs](Tape& t, const Tensor& g) {
    for (const Var& v : inputs) t.grad_of(v)(0, 0) += g(0, 0);
  });
}

Var softmax_masked(const Var& logits, const MatrixT<std::uint8_t>& blocked) {
  const Tensor& lv = logits.value();
  if (blocked.rows() != lv.rows() || blocked.cols() != lv.cols())
    throw ConfigError("softmax_masked: logits " + shape_string(lv) + " vs mask (" +
                      std::to_string(blocked.rows()) + "x" + std::to_string(blocked.cols()) + ")");
  Tensor out(lv.rows(), lv.cols());
  std::size_t degenerate = 0;
  for (Index r = 0; r < lv.rows(); ++r) {
    const std::span<const std::uint8_t> row(blocked.data() + r * blocked.cols(),
                                            static_cast<std::size_t>(blocked.cols()));
    auto res = softmax_masked_row<Scalar>(lv.row(r), row);
    out.row(r) = res.weights;
    degenerate += res.degenerate ? 1 : 0;
  }
  logits.tape().count_degenerate(degenerate);
  Tensor weights = out;
  return logits.tape().push(std::move(out), [logits, weights = std::move(weights)](
                                                Tape& t, const Tensor& g) {
    Tensor& gl = t.grad_of(logits);
    for (Index r = 0; r < weights.rows(); ++r) {
      const Scalar s = weights.row(r).dot(g.row(r));
      gl.row(r).array() += weights.row(r).array() * (g.row(r).array() - s);
    }
  });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v,
                         std::shared_ptr<const AttentionLayout> layout,
                         const AttentionParams& extra) {
  const AttentionLayout& L = *layout;
  const Index d = q.cols();
  const Index heads = L.heads;
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw ConfigError("multi_head_attention: q/k/v shapes " + shape_string(q.value()) + " " +
                      shape_string(k.value()) + " " + shape_string(v.value()));
  if (q.rows() != L.num_queries())
    throw ConfigError("multi_head_attention: " + std::to_string(q.rows()) + " query rows but layout has " +
                      std::to_string(L.num_queries()));
  const bool has_bias = extra.rel_bias.valid();
  const bool has_null = extra.null_key.valid();
  const Index dh = d / heads;
  const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(dh));

  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();

  // Attention weights per (query, head); slot `len` holds the null key.
  std::vector<Index> weight_offset(static_cast<std::size_t>(L.num_queries()));
  Index total = 0;
  for (Index r = 0; r < L.num_queries(); ++r) {
    weight_offset[static_cast<std::size_t>(r)] = total;
    total += heads * (L.key_length[static_cast<std::size_t>(L.query_seq[static_cast<std::size_t>(r)])] + 1);
  }
  std::vector<Scalar> weights(static_cast<std::size_t>(total), 0.0);

  Tensor out = Tensor::Zero(Q.rows(), d);
  std::size_t degenerate = 0;
  std::vector<Scalar> logit;
  for (Index r = 0; r < L.num_queries(); ++r) {
    const auto s = static_cast<std::size_t>(L.query_seq[static_cast<std::size_t>(r)]);
    const Index off = L.key_offset[s];
    const Index len = L.key_length[s];
    const std::uint8_t* blocked = L.blocked.data() + L.mask_offset[static_cast<std::size_t>(r)];
    const Index* bucket = L.bucket.data() + L.mask_offset[static_cast<std::size_t>(r)];
    logit.assign(static_cast<std::size_t>(len + 1), 0.0);
    for (Index h = 0; h < heads; ++h) {
      const auto qh = Q.row(r).segment(h * dh, dh);
      Scalar* w = weights.data() + weight_offset[static_cast<std::size_t>(r)] + h * (len + 1);
      bool any = false;
      Scalar max_logit = 0.0;
      for (Index j = 0; j < len; ++j) {
        if (blocked[j]) continue;
        Scalar z = qh.dot(K.row(off + j).segment(h * dh, dh)) * inv_sqrt;
        if (has_bias) z += extra.rel_bias.value()(h, bucket[j]);
        logit[static_cast<std::size_t>(j)] = z;
        if (!any || z > max_logit) max_logit = z;
        any = true;
      }
      if (has_null) {
        const Scalar z = qh.dot(extra.null_key.value().row(0).segment(h * dh, dh)) * inv_sqrt;
        logit[static_cast<std::size_t>(len)] = z;
        if (!any || z > max_logit) max_logit = z;
        any = true;
      }
      if (!any) {
        ++degenerate;
        continue;
      }
      Scalar norm = 0.0;
      for (Index j = 0; j < len; ++j) {
        if (blocked[j]) continue;
        w[j] = std::exp(logit[static_cast<std::size_t>(j)] - max_logit);
        norm += w[j];
      }
      if (has_null) {
        w[len] = std::exp(logit[static_cast<std::size_t>(len)] - max_logit);
        norm += w[len];
      }
      auto oh = out.row(r).segment(h * dh, dh);
      for (Index j = 0; j < len; ++j) {
        if (blocked[j]) continue;
        w[j] /= norm;
        oh += w[j] * V.row(off + j).segment(h * dh, dh);
      }
      if (has_null) {
        w[len] /= norm;
        oh += w[len] * extra.null_value.value().row(0).segment(h * dh, dh);
      }
    }
  }
  q.tape().count_degenerate(degenerate);
  if (!q.tape().recording()) return q.tape().push(std::move(out), {});

  return q.tape().push(
      std::move(out),
      [q, k, v, layout, extra, weights = std::move(weights),
       weight_offset = std::move(weight_offset), heads, dh, inv_sqrt, has_bias,
       has_null](Tape& t, const Tensor& g) {
        const AttentionLayout& L = *layout;
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        Tensor& gq = t.grad_of(q);
        Tensor& gk = t.grad_of(k);
        Tensor& gv = t.grad_of(v);
        Tensor* gb = has_bias ? &t.grad_of(extra.rel_bias) : nullptr;
        Tensor* gnk = has_null ? &t.grad_of(extra.null_key) : nullptr;
        Tensor* gnv = has_null ? &t.grad_of(extra.null_value) : nullptr;
        std::vector<Scalar> dz;
        for (Index r = 0; r < L.num_queries(); ++r) {
          const auto s = static_cast<std::size_t>(L.query_seq[static_cast<std::size_t>(r)]);
          const Index off = L.key_offset[s];
          const Index len = L.key_length[s];
          const std::uint8_t* blocked = L.blocked.data() + L.mask_offset[static_cast<std::size_t>(r)];
          const Index* bucket = L.bucket.data() + L.mask_offset[static_cast<std::size_t>(r)];
          dz.assign(static_cast<std::size_t>(len + 1), 0.0);
          for (Index h = 0; h < heads; ++h) {
            const Scalar* w = weights.data() + weight_offset[static_cast<std::size_t>(r)] + h * (len + 1);
            const auto gh = g.row(r).segment(h * dh, dh);
            Scalar dot_wdw = 0.0;
            for (Index j = 0; j < len; ++j) {
              if (blocked[j] || w[j] == 0.0) {
                dz[static_cast<std::size_t>(j)] = 0.0;
                continue;
              }
              const Scalar dw = gh.dot(V.row(off + j).segment(h * dh, dh));
              dz[static_cast<std::size_t>(j)] = dw;
              dot_wdw += w[j] * dw;
              gv.row(off + j).segment(h * dh, dh) += w[j] * gh;
            }
            Scalar dw_null = 0.0;
            if (has_null && w[len] != 0.0) {
              dw_null = gh.dot(extra.null_value.value().row(0).segment(h * dh, dh));
              dot_wdw += w[len] * dw_null;
              gnv->row(0).segment(h * dh, dh) += w[len] * gh;
            }
            auto gqh = gq.row(r).segment(h * dh, dh);
            const auto qh = Q.row(r).segment(h * dh, dh);
            for (Index j = 0; j < len; ++j) {
              if (blocked[j] || w[j] == 0.0) continue;
              const Scalar z = w[j] * (dz[static_cast<std::size_t>(j)] - dot_wdw);
              gqh += (z * inv_sqrt) * K.row(off + j).segment(h * dh, dh);
              gk.row(off + j).segment(h * dh, dh) += (z * inv_sqrt) * qh;
              if (has_bias) (*gb)(h, bucket[j]) += z;
            }
            if (has_null && w[len] != 0.0) {
              const Scalar z = w[len] * (dw_null - dot_wdw);
              gqh += (z * inv_sqrt) * extra.null_key.value().row(0).segment(h * dh, dh);
              gnk->row(0).segment(h * dh, dh) += (z * inv_sqrt) * qh;
            }
          }
        }
      });
}

Var sampled_softmax_loss(const Var& queries, const Var& candidates, std::vector<Index> target,
                         std::vector<std::vector<Index>> negatives) {
  require_same_tape(queries, candidates, "sampled_softmax_loss");
  const Index rows = queries.rows();
  if (queries.cols() != candidates.cols())
    throw ConfigError("sampled_softmax_loss: query width " + std::to_string(queries.cols()) +
                      " != candidate width " + std::to_string(candidates.cols()));
  if (static_cast<Index>(target.size()) != rows || static_cast<Index>(negatives.size()) != rows)
    throw ConfigError("sampled_softmax_loss: target/negative lists must have one entry per row");
  if (rows == 0) throw DataError("sampled_softmax_loss: empty batch");
  const Tensor& H = queries.value();
  const Tensor& E = candidates.value();
  for (Index r = 0; r < rows; ++r) {
    if (negatives[static_cast<std::size_t>(r)].empty())
      throw DataError("sampled_softmax_loss: empty negative set for row " + std::to_string(r));
    if (target[static_cast<std::size_t>(r)] < 0 || target[static_cast<std::size_t>(r)] >= E.rows())
      throw ConfigError("sampled_softmax_loss: target column out of range");
  }

  // Softmax weights over [target, negatives...] per row.
  std::vector<std::vector<Scalar>> probs(static_cast<std::size_t>(rows));
  Scalar total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const auto& neg = negatives[static_cast<std::size_t>(r)];
    auto& p = probs[static_cast<std::size_t>(r)];
    p.resize(neg.size() + 1);
    p[0] = H.row(r).dot(E.row(target[static_cast<std::size_t>(r)]));
    Scalar m = p[0];
    for (std::size_t j = 0; j < neg.size(); ++j) {
      p[j + 1] = H.row(r).dot(E.row(neg[j]));
      m = std::max(m, p[j + 1]);
    }
    Scalar norm = 0.0;
    for (Scalar& z : p) {
      z = std::exp(z - m);
      norm += z;
    }
    for (Scalar& z : p) z /= norm;
    total += -std::log(p[0]);
  }
  Tensor out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(rows);
  if (!queries.tape().recording()) return queries.tape().push(std::move(out), {});
  return queries.tape().push(
      std::move(out), [queries, candidates, target = std::move(target),
                       negatives = std::move(negatives), probs = std::move(probs)](
                          Tape& t, const Tensor& g) {
        const Tensor& H = queries.value();
        const Tensor& E = candidates.value();
        Tensor& gh = t.grad_of(queries);
        Tensor& ge = t.grad_of(candidates);
        const Scalar w = g(0, 0) / static_cast<Scalar>(H.rows());
        for (Index r = 0; r < H.rows(); ++r) {
          const auto& neg = negatives[static_cast<std::size_t>(r)];
          const auto& p = probs[static_cast<std::size_t>(r)];
          const Index tc = target[static_cast<std::size_t>(r)];
          // d(-log p0)/dz_j = p_j - [j == 0]
          const Scalar d0 = w * (p[0] - 1.0);
          gh.row(r) += d0 * E.row(tc);
          ge.row(tc) += d0 * H.row(r);
          for (std::size_t j = 0; j < neg.size(); ++j) {
            const Scalar dj = w * p[j + 1];
            gh.row(r) += dj * E.row(neg[j]);
            ge.row(neg[j]) += dj * H.row(r);
          }
        }
      });
}

}  // namespace climber
