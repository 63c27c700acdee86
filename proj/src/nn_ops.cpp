#include "enclab/nn_ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "op_support.hpp"

namespace enclab {

MaskDescriptor MaskDescriptor::full(int64_t seq) {
  MaskDescriptor m;
  m.kind = Kind::Full;
  m.seq_ = seq;
  return m;
}

MaskDescriptor MaskDescriptor::same_seq(std::vector<int32_t> seq_ids) {
  MaskDescriptor m;
  m.kind = Kind::SameSeq;
  m.seq_ = static_cast<int64_t>(seq_ids.size());
  m.seq_ids = std::move(seq_ids);
  return m;
}

MaskDescriptor MaskDescriptor::custom(int64_t seq, std::vector<uint8_t> allowed) {
  if (static_cast<int64_t>(allowed.size()) != seq * seq)
    throw std::invalid_argument("mask: custom matrix must cover seq x seq");
  MaskDescriptor m;
  m.kind = Kind::Custom;
  m.seq_ = seq;
  m.allowed = std::move(allowed);
  return m;
}

bool MaskDescriptor::is_allowed(int64_t q, int64_t k) const {
  switch (kind) {
    case Kind::Full:
      return true;
    case Kind::SameSeq:
      return seq_ids[q] >= 0 && seq_ids[q] == seq_ids[k];
    case Kind::Custom:
      return allowed[q * seq_ + k] != 0;
  }
  return false;
}

namespace ops {

using detail::OutWriter;

namespace {

bool grad_needed(std::initializer_list<const Tensor*> ins) {
  return detail::grad_needed_for(ins);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Tensor silu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  OutWriter w(out);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double z = xn_->value64(i);
    w.set(i, z * sigmoid(z));
  }

  if (grad_needed({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float* g = on->grad.data();
      for (int64_t i = 0; i < n; ++i) {
        double z = xn->data[i];
        double s = sigmoid(z);
        xn->grad[i] += static_cast<float>(g[i] * (s * (1.0 + z * (1.0 - s))));
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  OutWriter w(out);
  const int64_t n = x.numel();
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int64_t i = 0; i < n; ++i) {
    const double z = xn_->value64(i);
    w.set(i, 0.5 * z * (1.0 + std::erf(z * inv_sqrt2)));
  }

  if (grad_needed({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float* g = on->grad.data();
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
      for (int64_t i = 0; i < n; ++i) {
        double z = xn->data[i];
        double cdf = 0.5 * (1.0 + std::erf(z * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * z * z);
        xn->grad[i] += static_cast<float>(g[i] * (cdf + z * pdf));
      }
    });
  }
  return out;
}

namespace {

void check_rowwise(const Tensor& x, const Tensor& gain, const char* op) {
  if (x.rank() < 1 || gain.rank() != 1 || x.dim(x.rank() - 1) != gain.dim(0))
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                                shape_str(x.shape()) + " vs " +
                                shape_str(gain.shape()));
}

}  // namespace

Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps) {
  check_rowwise(x, gain, "rms_norm");
  if (eps < 0) throw std::invalid_argument("rms_norm: eps must be >= 0");
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  const auto* gn_ = gain.node();
  OutWriter w(out);
  for (int64_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double v = xn_->value64(r * d + j);
      ss += v * v;
    }
    const double inv = 1.0 / std::sqrt(ss / d + eps);
    for (int64_t j = 0; j < d; ++j)
      w.set(r * d + j, gn_->value64(j) * xn_->value64(r * d + j) * inv);
  }

  if (grad_needed({&x, &gain})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), gn = gain.node_ptr(), on = out.node_ptr();
    bool gx = x.requires_grad(), gg = gain.requires_grad();
    GradTape::active()->record(on, {xn, gn}, [=]() {
      const float* g = on->grad.data();
      if (gx) xn->ensure_grad();
      if (gg) gn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const float* row = xn->data.data() + r * d;
        double ss = 0.0;
        for (int64_t j = 0; j < d; ++j) ss += double(row[j]) * row[j];
        const double rstat = std::sqrt(ss / d + eps);
        const double inv = 1.0 / rstat;
        if (gx) {
          double dot = 0.0;  // sum_i dy_i * gain_i * x_i
          for (int64_t j = 0; j < d; ++j)
            dot += double(g[r * d + j]) * gn->data[j] * row[j];
          const double scale3 = dot / (d * rstat * rstat * rstat);
          for (int64_t j = 0; j < d; ++j)
            xn->grad[r * d + j] += static_cast<float>(
                double(g[r * d + j]) * gn->data[j] * inv - row[j] * scale3);
        }
        if (gg) {
          for (int64_t j = 0; j < d; ++j)
            gn->grad[j] += static_cast<float>(double(g[r * d + j]) * row[j] * inv);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, float eps) {
  check_rowwise(x, gain, "layer_norm");
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  const auto* gn_ = gain.node();
  OutWriter w(out);
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += xn_->value64(r * d + j);
    mean /= d;
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = xn_->value64(r * d + j) - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j)
      w.set(r * d + j,
            gn_->value64(j) * (xn_->value64(r * d + j) - mean) * inv);
  }

  if (grad_needed({&x, &gain})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), gn = gain.node_ptr(), on = out.node_ptr();
    bool gx = x.requires_grad(), gg = gain.requires_grad();
    GradTape::active()->record(on, {xn, gn}, [=]() {
      const float* g = on->grad.data();
      if (gx) xn->ensure_grad();
      if (gg) gn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const float* row = xn->data.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          double c = row[j] - mean;
          var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        // dyhat = gain .* dy; dx = inv * (dyhat - mean(dyhat) - xhat * mean(dyhat .* xhat))
        double m1 = 0.0, m2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          double xhat = (row[j] - mean) * inv;
          double dyh = double(g[r * d + j]) * gn->data[j];
          m1 += dyh;
          m2 += dyh * xhat;
        }
        m1 /= d;
        m2 /= d;
        for (int64_t j = 0; j < d; ++j) {
          double xhat = (row[j] - mean) * inv;
          if (gx) {
            double dyh = double(g[r * d + j]) * gn->data[j];
            xn->grad[r * d + j] +=
                static_cast<float>(inv * (dyh - m1 - xhat * m2));
          }
          if (gg)
            gn->grad[j] += static_cast<float>(double(g[r * d + j]) * xhat);
        }
      }
    });
  }
  return out;
}

std::vector<double> rope_frequencies(int64_t d_head, double theta,
                                     const std::optional<RopeScaling>& scaling) {
  const int64_t pairs = d_head / 2;
  std::vector<double> freq(static_cast<size_t>(pairs));
  for (int64_t i = 0; i < pairs; ++i)
    freq[i] = std::pow(theta, -2.0 * double(i) / double(d_head));
  if (scaling && scaling->scale != 1.0) {
    // Band ratio = rotations this band completes across the original
    // context. Fast bands keep their frequency, slow bands are interpolated
    // by 1/scale, with a linear ramp in between.
    const double lo = scaling->ramp_low, hi = scaling->ramp_high;
    for (int64_t i = 0; i < pairs; ++i) {
      const double wavelength = 2.0 * M_PI / freq[i];
      const double ratio = double(scaling->original_max_positions) / wavelength;
      double keep;
      if (ratio < lo)
        keep = 0.0;
      else if (ratio > hi)
        keep = 1.0;
      else
        keep = (ratio - lo) / (hi - lo);
      freq[i] = freq[i] * ((1.0 - keep) / scaling->scale + keep);
    }
  }
  return freq;
}

Tensor rope_apply(const Tensor& x, const std::vector<int32_t>& positions,
                  double theta, const std::optional<RopeScaling>& scaling) {
  if (x.rank() != 3)
    throw std::invalid_argument("rope_apply: expected [seq, heads, d_head], got " +
                                shape_str(x.shape()));
  const int64_t seq = x.dim(0), heads = x.dim(1), dh = x.dim(2);
  if (dh % 2 != 0)
    throw std::invalid_argument("rope_apply: d_head must be even, got " +
                                std::to_string(dh));
  if (static_cast<int64_t>(positions.size()) != seq)
    throw std::invalid_argument("rope_apply: positions length " +
                                std::to_string(positions.size()) +
                                " != seq " + std::to_string(seq));

  const std::vector<double> freq = rope_frequencies(dh, theta, scaling);
  const int64_t pairs = dh / 2;

  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  OutWriter w(out);
  for (int64_t s = 0; s < seq; ++s) {
    for (int64_t h = 0; h < heads; ++h) {
      const int64_t base = (s * heads + h) * dh;
      for (int64_t i = 0; i < pairs; ++i) {
        const double ang = double(positions[s]) * freq[i];
        const double c = std::cos(ang), sn = std::sin(ang);
        const double x0 = xn_->value64(base + 2 * i);
        const double x1 = xn_->value64(base + 2 * i + 1);
        w.set(base + 2 * i, x0 * c - x1 * sn);
        w.set(base + 2 * i + 1, x0 * sn + x1 * c);
      }
    }
  }

  if (grad_needed({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    auto pos = positions;
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float* g = on->grad.data();
      // Rotation is orthogonal: its gradient rotates by the opposite angle.
      for (int64_t s = 0; s < seq; ++s) {
        for (int64_t h = 0; h < heads; ++h) {
          const int64_t base = (s * heads + h) * dh;
          for (int64_t i = 0; i < pairs; ++i) {
            const double ang = double(pos[s]) * freq[i];
            const double c = std::cos(ang), sn = std::sin(ang);
            const double g0 = g[base + 2 * i], g1 = g[base + 2 * i + 1];
            xn->grad[base + 2 * i] += static_cast<float>(g0 * c + g1 * sn);
            xn->grad[base + 2 * i + 1] += static_cast<float>(-g0 * sn + g1 * c);
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Attention probabilities for one head in 64-bit, respecting the mask.
// Rows whose every key is masked come out all-zero.
void attention_probs(const enclab::detail::TensorNode* q,
                     const enclab::detail::TensorNode* k, int64_t h,
                     int64_t seq, int64_t heads, int64_t dh,
                     const MaskDescriptor& mask, bool precise,
                     std::vector<double>& probs) {
  const double inv_scale = 1.0 / std::sqrt(double(dh));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < seq; ++i) {
    double* prow = probs.data() + i * seq;
    double mx = neg_inf;
    for (int64_t j = 0; j < seq; ++j) {
      if (!mask.is_allowed(i, j)) {
        prow[j] = neg_inf;
        continue;
      }
      double dot = 0.0;
      const int64_t qb = (i * heads + h) * dh;
      const int64_t kb = (j * heads + h) * dh;
      if (precise) {
        for (int64_t c = 0; c < dh; ++c)
          dot += q->value64(qb + c) * k->value64(kb + c);
      } else {
        for (int64_t c = 0; c < dh; ++c)
          dot += double(q->data[qb + c]) * k->data[kb + c];
      }
      prow[j] = dot * inv_scale;
      mx = std::max(mx, prow[j]);
    }
    if (mx == neg_inf) {
      for (int64_t j = 0; j < seq; ++j) prow[j] = 0.0;
      continue;
    }
    double z = 0.0;
    for (int64_t j = 0; j < seq; ++j) {
      prow[j] = std::exp(prow[j] - mx);
      z += prow[j];
    }
    for (int64_t j = 0; j < seq; ++j) prow[j] /= z;
  }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const MaskDescriptor& mask) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument("attention: Q/K/V must share [seq, heads, d_head], got " +
                                shape_str(q.shape()) + " / " + shape_str(k.shape()) +
                                " / " + shape_str(v.shape()));
  const int64_t seq = q.dim(0), heads = q.dim(1), dh = q.dim(2);
  if (mask.seq_len() != seq)
    throw std::invalid_argument("attention: mask covers " +
                                std::to_string(mask.seq_len()) +
                                " positions, batch has " + std::to_string(seq));

  Tensor out = Tensor::zeros(q.shape());
  const auto* qn_ = q.node();
  const auto* kn_ = k.node();
  const auto* vn_ = v.node();
  OutWriter w(out);
  const bool precise = PreciseEval::active();
  {
    std::vector<double> probs(static_cast<size_t>(seq * seq));
    for (int64_t h = 0; h < heads; ++h) {
      attention_probs(qn_, kn_, h, seq, heads, dh, mask, precise, probs);
      for (int64_t i = 0; i < seq; ++i) {
        for (int64_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (int64_t j = 0; j < seq; ++j) {
            const int64_t vb = (j * heads + h) * dh + c;
            acc += probs[i * seq + j] *
                   (precise ? vn_->value64(vb) : double(vn_->data[vb]));
          }
          w.set((i * heads + h) * dh + c, acc);
        }
      }
    }
  }

  if (grad_needed({&q, &k, &v})) {
    out.set_requires_grad(true);
    auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr(),
         on = out.node_ptr();
    bool gq = q.requires_grad(), gk = k.requires_grad(), gv = v.requires_grad();
    MaskDescriptor m = mask;
    const double inv_scale = 1.0 / std::sqrt(double(dh));
    // P is recomputed per head in backward instead of being stored; seq stays
    // small at desk scale and it keeps tape entries light.
    GradTape::active()->record(on, {qn, kn, vn}, [=]() {
      if (gq) qn->ensure_grad();
      if (gk) kn->ensure_grad();
      if (gv) vn->ensure_grad();
      const float* g = on->grad.data();
      const float* dq = qn->data.data();
      const float* dk = kn->data.data();
      const float* dv = vn->data.data();
      std::vector<double> probs(static_cast<size_t>(seq * seq));
      std::vector<double> dscore(static_cast<size_t>(seq * seq));
      for (int64_t h = 0; h < heads; ++h) {
        attention_probs(qn.get(), kn.get(), h, seq, heads, dh, m, false, probs);
        // dP[i,j] = dO[i] . V[j]; dS = P .* (dP - sum_j dP .* P)
        for (int64_t i = 0; i < seq; ++i) {
          const float* grow = g + (i * heads + h) * dh;
          double dot_dp_p = 0.0;
          for (int64_t j = 0; j < seq; ++j) {
            double dp = 0.0;
            const float* vrow = dv + (j * heads + h) * dh;
            for (int64_t c = 0; c < dh; ++c) dp += double(grow[c]) * vrow[c];
            dscore[i * seq + j] = dp;
            dot_dp_p += dp * probs[i * seq + j];
          }
          for (int64_t j = 0; j < seq; ++j)
            dscore[i * seq + j] =
                probs[i * seq + j] * (dscore[i * seq + j] - dot_dp_p);
        }
        if (gv) {
          for (int64_t j = 0; j < seq; ++j) {
            float* vg = vn->grad.data() + (j * heads + h) * dh;
            for (int64_t c = 0; c < dh; ++c) {
              double acc = 0.0;
              for (int64_t i = 0; i < seq; ++i)
                acc += probs[i * seq + j] * g[(i * heads + h) * dh + c];
              vg[c] += static_cast<float>(acc);
            }
          }
        }
        if (gq) {
          for (int64_t i = 0; i < seq; ++i) {
            float* qg = qn->grad.data() + (i * heads + h) * dh;
            for (int64_t c = 0; c < dh; ++c) {
              double acc = 0.0;
              for (int64_t j = 0; j < seq; ++j)
                acc += dscore[i * seq + j] * dk[(j * heads + h) * dh + c];
              qg[c] += static_cast<float>(acc * inv_scale);
            }
          }
        }
        if (gk) {
          for (int64_t j = 0; j < seq; ++j) {
            float* kg = kn->grad.data() + (j * heads + h) * dh;
            for (int64_t c = 0; c < dh; ++c) {
              double acc = 0.0;
              for (int64_t i = 0; i < seq; ++i)
                acc += dscore[i * seq + j] * dq[(i * heads + h) * dh + c];
              kg[c] += static_cast<float>(acc * inv_scale);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor swiglu_ffn(const Tensor& x, const Tensor& w1, const Tensor& w2,
                  const Tensor& w3) {
  return matmul(mul(silu(matmul(x, w1)), matmul(x, w3)), w2);
}

Tensor mean_pool(const Tensor& hidden, const std::vector<uint8_t>& valid) {
  if (hidden.rank() != 2)
    throw std::invalid_argument("mean_pool: expected [tokens, d], got " +
                                shape_str(hidden.shape()));
  const int64_t m = hidden.dim(0), d = hidden.dim(1);
  if (static_cast<int64_t>(valid.size()) != m)
    throw std::invalid_argument("mean_pool: mask length " +
                                std::to_string(valid.size()) + " != rows " +
                                std::to_string(m));
  int64_t count = 0;
  for (uint8_t f : valid)
    if (f) ++count;
  if (count == 0) throw std::runtime_error("mean_pool: no valid tokens");

  Tensor out = Tensor::zeros({d});
  const auto* hn_ = hidden.node();
  OutWriter w(out);
  for (int64_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < m; ++i)
      if (valid[i]) acc += hn_->value64(i * d + j);
    w.set(j, acc / double(count));
  }

  if (grad_needed({&hidden})) {
    out.set_requires_grad(true);
    auto hn = hidden.node_ptr(), on = out.node_ptr();
    auto vmask = valid;
    GradTape::active()->record(on, {hn}, [=]() {
      hn->ensure_grad();
      const float* g = on->grad.data();
      const float inv = 1.0f / static_cast<float>(count);
      for (int64_t i = 0; i < m; ++i) {
        if (!vmask[i]) continue;
        for (int64_t j = 0; j < d; ++j) hn->grad[i * d + j] += g[j] * inv;
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2)
    throw std::invalid_argument("l2_normalize_rows: expected rank-2, got " +
                                shape_str(x.shape()));
  const int64_t m = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const auto* xn_ = x.node();
  OutWriter w(out);
  for (int64_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double v = xn_->value64(i * d + j);
      ss += v * v;
    }
    if (ss == 0.0)
      throw std::runtime_error("l2_normalize_rows: zero vector at row " +
                               std::to_string(i));
    const double inv = 1.0 / std::sqrt(ss);
    for (int64_t j = 0; j < d; ++j) w.set(i * d + j, xn_->value64(i * d + j) * inv);
  }

  if (grad_needed({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    GradTape::active()->record(on, {xn}, [=]() {
      xn->ensure_grad();
      const float* g = on->grad.data();
      for (int64_t i = 0; i < m; ++i) {
        const float* row = xn->data.data() + i * d;
        double ss = 0.0;
        for (int64_t j = 0; j < d; ++j) ss += double(row[j]) * row[j];
        const double norm = std::sqrt(ss);
        double dot = 0.0;  // u . dy with u = x / ||x||
        for (int64_t j = 0; j < d; ++j) dot += double(row[j]) / norm * g[i * d + j];
        for (int64_t j = 0; j < d; ++j)
          xn->grad[i * d + j] += static_cast<float>(
              (double(g[i * d + j]) - double(row[j]) / norm * dot) / norm);
      }
    });
  }
  return out;
}

}  // namespace ops

}  // namespace enclab
