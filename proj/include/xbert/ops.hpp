#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "xbert/tensor.hpp"

// Primitive tensor ops with reverse-mode rules, plus a few composites
// (attention, linear, L2 normalize) assembled from primitives so every
// gradient path stays finite-difference checkable.

namespace xbert {

namespace detail {

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void finish_op(const char* name, Tensor& out, bool record, std::function<void()> pull) {
  if (finite_checks_enabled()) out.check_finite(name);
  if (record) {
    out.set_requires_grad(true);
    active_tape()->record(out, std::move(pull));
  }
}

inline void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Rank-1 tensors are treated as a single row by the row-wise ops.
inline void row_view(const char* op, const Tensor& t, int& rows, int& cols) {
  if (t.rank() == 1) {
    rows = 1;
    cols = t.dim(0);
  } else if (t.rank() == 2) {
    rows = t.dim(0);
    cols = t.dim(1);
  } else {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " + shape_str(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.values().size();
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  detail::finish_op("add", out, detail::wants_grad({&a, &b}), [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    }
    if (b.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.values().size();
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  detail::finish_op("sub", out, detail::wants_grad({&a, &b}), [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    }
    if (b.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
    }
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const size_t n = a.values().size();
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  detail::finish_op("mul", out, detail::wants_grad({&a, &b}), [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * b.values()[i];
    }
    if (b.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i] * a.values()[i];
    }
  });
  return out;
}

inline Tensor add_scalar(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = a.values()[i] + c;
  detail::finish_op("add_scalar", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
  });
  return out;
}

inline Tensor mul_scalar(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = a.values()[i] * c;
  detail::finish_op("mul_scalar", out, detail::wants_grad({&a}), [a, out, c]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * c;
  });
  return out;
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

// Multiply by a 1-element tensor; gradient flows into both operands.
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scale must have 1 element, got " + shape_str(s.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float c = s.values()[0];
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = a.values()[i] * c;
  detail::finish_op("scale_by", out, detail::wants_grad({&a, &s}), [a, s, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      const float c2 = s.values()[0];
      for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * c2;
    }
    if (s.requires_grad()) {
      float acc = 0.0f;
      for (size_t i = 0; i < g.size(); ++i) acc += g[i] * a.values()[i];
      s.grad()[0] += acc;
    }
  });
  return out;
}

// ---------------------------------------------------------------- unary

inline Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = std::exp(a.values()[i]);
  detail::finish_op("exp", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * out.values()[i];
  });
  return out;
}

inline Tensor log(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = std::log(a.values()[i]);
  detail::finish_op("log", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] / a.values()[i];
  });
  return out;
}

inline Tensor sqrt(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = std::sqrt(a.values()[i]);
  detail::finish_op("sqrt", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * 0.5f / out.values()[i];
  });
  return out;
}

inline Tensor reciprocal(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = 1.0f / a.values()[i];
  detail::finish_op("reciprocal", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] -= g[i] * out.values()[i] * out.values()[i];
  });
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) out.values()[i] = std::max(0.0f, a.values()[i]);
  detail::finish_op("relu", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (a.values()[i] > 0.0f) a.grad()[i] += g[i];
    }
  });
  return out;
}

inline Tensor gelu(const Tensor& a) {
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  constexpr float inv_sqrt2pi = 0.39894228040143268f;
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < a.values().size(); ++i) {
    const float x = a.values()[i];
    out.values()[i] = 0.5f * x * (1.0f + std::erf(x * inv_sqrt2));
  }
  detail::finish_op("gelu", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const float x = a.values()[i];
      const float cdf = 0.5f * (1.0f + std::erf(x * inv_sqrt2));
      const float pdf = inv_sqrt2pi * std::exp(-0.5f * x * x);
      a.grad()[i] += g[i] * (cdf + x * pdf);
    }
  });
  return out;
}

// ---------------------------------------------------------------- shape ops

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  }
  Tensor out = Tensor::from(a.values(), std::move(new_shape));
  detail::finish_op("reshape", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank2("transpose", a);
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out.values()[static_cast<size_t>(j) * n + i] = a.values()[static_cast<size_t>(i) * m + j];
    }
  }
  detail::finish_op("transpose", out, detail::wants_grad({&a}), [a, out, n, m]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        a.grad()[static_cast<size_t>(i) * m + j] += g[static_cast<size_t>(j) * n + i];
      }
    }
  });
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input list");
  detail::require_rank2("concat_rows", parts[0]);
  const int cols = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat_rows", p);
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch, " + shape_str(p.shape()) + " vs expected cols " +
                       std::to_string(cols));
    }
    rows += p.dim(0);
  }
  Tensor out = Tensor::zeros({rows, cols});
  size_t offset = 0;
  bool rec = false;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<long>(offset));
    offset += p.values().size();
    rec = rec || (active_tape() && p.requires_grad());
  }
  detail::finish_op("concat_rows", out, rec, [parts, out]() mutable {
    const auto& g = out.grad();
    size_t off = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) {
        for (size_t i = 0; i < p.values().size(); ++i) p.grad()[i] += g[off + i];
      }
      off += p.values().size();
    }
  });
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_rank2("concat_cols", a);
  detail::require_rank2("concat_cols", b);
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: row mismatch, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out = Tensor::zeros({n, ca + cb});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < ca; ++j) {
      out.values()[static_cast<size_t>(i) * (ca + cb) + j] = a.values()[static_cast<size_t>(i) * ca + j];
    }
    for (int j = 0; j < cb; ++j) {
      out.values()[static_cast<size_t>(i) * (ca + cb) + ca + j] = b.values()[static_cast<size_t>(i) * cb + j];
    }
  }
  detail::finish_op("concat_cols", out, detail::wants_grad({&a, &b}), [a, b, out, n, ca, cb]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < ca; ++j) {
          a.grad()[static_cast<size_t>(i) * ca + j] += g[static_cast<size_t>(i) * (ca + cb) + j];
        }
      }
    }
    if (b.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < cb; ++j) {
          b.grad()[static_cast<size_t>(i) * cb + j] += g[static_cast<size_t>(i) * (ca + cb) + ca + j];
        }
      }
    }
  });
  return out;
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
  detail::require_rank2("slice_rows", a);
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") for shape " + shape_str(a.shape()));
  }
  const int cols = a.dim(1);
  Tensor out = Tensor::zeros({r1 - r0, cols});
  std::copy(a.values().begin() + static_cast<long>(r0) * cols, a.values().begin() + static_cast<long>(r1) * cols,
            out.values().begin());
  detail::finish_op("slice_rows", out, detail::wants_grad({&a}), [a, out, r0, cols]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[static_cast<size_t>(r0) * cols + i] += g[i];
  });
  return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  detail::require_rank2("slice_cols", a);
  if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for shape " + shape_str(a.shape()));
  }
  const int n = a.dim(0), m = a.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w; ++j) {
      out.values()[static_cast<size_t>(i) * w + j] = a.values()[static_cast<size_t>(i) * m + c0 + j];
    }
  }
  detail::finish_op("slice_cols", out, detail::wants_grad({&a}), [a, out, n, m, c0, w]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) {
        a.grad()[static_cast<size_t>(i) * m + c0 + j] += g[static_cast<size_t>(i) * w + j];
      }
    }
  });
  return out;
}

inline Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  detail::require_rank2("gather_rows", a);
  const int n = a.dim(0), cols = a.dim(1);
  for (int i : idx) {
    if (i < 0 || i >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
    }
  }
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy(a.values().begin() + static_cast<long>(idx[r]) * cols,
              a.values().begin() + static_cast<long>(idx[r] + 1) * cols,
              out.values().begin() + static_cast<long>(r) * cols);
  }
  detail::finish_op("gather_rows", out, detail::wants_grad({&a}), [a, out, idx, cols]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      for (int j = 0; j < cols; ++j) {
        a.grad()[static_cast<size_t>(idx[r]) * cols + j] += g[r * cols + j];
      }
    }
  });
  return out;
}

// out[i] = flags[i] ? b[i] : a[i], rowwise. Used to swap masked patch
// embeddings for the shared mask embedding.
inline Tensor select_rows(const Tensor& a, const Tensor& b, const std::vector<uint8_t>& flags) {
  detail::require_same_shape("select_rows", a, b);
  detail::require_rank2("select_rows", a);
  if (static_cast<int>(flags.size()) != a.dim(0)) {
    throw ShapeError("select_rows: flag count " + std::to_string(flags.size()) + " != rows " +
                     std::to_string(a.dim(0)));
  }
  const int cols = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < flags.size(); ++i) {
    const auto& src = flags[i] ? b.values() : a.values();
    std::copy(src.begin() + static_cast<long>(i) * cols, src.begin() + static_cast<long>(i + 1) * cols,
              out.values().begin() + static_cast<long>(i) * cols);
  }
  detail::finish_op("select_rows", out, detail::wants_grad({&a, &b}), [a, b, out, flags, cols]() mutable {
    const auto& g = out.grad();
    for (size_t i = 0; i < flags.size(); ++i) {
      Tensor t = flags[i] ? b : a;
      if (!t.requires_grad()) continue;
      for (int j = 0; j < cols; ++j) {
        t.grad()[i * static_cast<size_t>(cols) + j] += g[i * static_cast<size_t>(cols) + j];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------- reductions

inline Tensor sum_all(const Tensor& a) {
  float acc = 0.0f;
  for (float v : a.values()) acc += v;
  Tensor out = Tensor::from({acc}, {1});
  detail::finish_op("sum_all", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const float g = out.grad()[0];
    for (auto& gv : a.grad()) gv += g;
  });
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  float acc = 0.0f;
  for (float v : a.values()) acc += v;
  const float inv_n = 1.0f / static_cast<float>(a.numel());
  Tensor out = Tensor::from({acc * inv_n}, {1});
  detail::finish_op("mean_all", out, detail::wants_grad({&a}), [a, out, inv_n]() mutable {
    if (!a.requires_grad()) return;
    const float g = out.grad()[0] * inv_n;
    for (auto& gv : a.grad()) gv += g;
  });
  return out;
}

// Max over consecutive blocks of rows: (B*block, d) -> (B, d). Ties resolve
// to the lowest row. block == dim(0) gives a full column-wise max.
inline Tensor max_pool_rows(const Tensor& a, int block) {
  detail::require_rank2("max_pool_rows", a);
  if (block <= 0 || a.dim(0) % block != 0) {
    throw ShapeError("max_pool_rows: block " + std::to_string(block) + " does not divide rows of " +
                     shape_str(a.shape()));
  }
  const int groups = a.dim(0) / block, cols = a.dim(1);
  Tensor out = Tensor::zeros({groups, cols});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(groups) * cols);
  for (int b = 0; b < groups; ++b) {
    for (int j = 0; j < cols; ++j) {
      int best_row = b * block;
      float best = a.values()[static_cast<size_t>(best_row) * cols + j];
      for (int r = 1; r < block; ++r) {
        const float v = a.values()[static_cast<size_t>(b * block + r) * cols + j];
        if (v > best) {
          best = v;
          best_row = b * block + r;
        }
      }
      out.values()[static_cast<size_t>(b) * cols + j] = best;
      (*argmax)[static_cast<size_t>(b) * cols + j] = best_row;
    }
  }
  detail::finish_op("max_pool_rows", out, detail::wants_grad({&a}), [a, out, argmax, cols]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const int j = static_cast<int>(i % static_cast<size_t>(cols));
      a.grad()[static_cast<size_t>((*argmax)[i]) * cols + j] += g[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------- matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < n; ++i) {
    const float* arow = a.values().data() + static_cast<size_t>(i) * k;
    float* orow = out.values().data() + static_cast<size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b.values().data() + static_cast<size_t>(p) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  detail::finish_op("matmul", out, detail::wants_grad({&a, &b}), [a, b, out, n, k, m]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      // dA = G * B^T
      for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
          float acc = 0.0f;
          const float* grow = g.data() + static_cast<size_t>(i) * m;
          const float* brow = b.values().data() + static_cast<size_t>(p) * m;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          a.grad()[static_cast<size_t>(i) * k + p] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      // dB = A^T * G
      for (int p = 0; p < k; ++p) {
        for (int i = 0; i < n; ++i) {
          const float av = a.values()[static_cast<size_t>(i) * k + p];
          if (av == 0.0f) continue;
          const float* grow = g.data() + static_cast<size_t>(i) * m;
          float* brow = b.grad().data() + static_cast<size_t>(p) * m;
          for (int j = 0; j < m; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------- row-wise

inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  detail::require_rank2("add_rowvec", a);
  if (v.rank() != 1 || v.dim(0) != a.dim(1)) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " does not match cols of " +
                     shape_str(a.shape()));
  }
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out.values()[static_cast<size_t>(i) * m + j] = a.values()[static_cast<size_t>(i) * m + j] + v.values()[static_cast<size_t>(j)];
    }
  }
  detail::finish_op("add_rowvec", out, detail::wants_grad({&a, &v}), [a, v, out, n, m]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    }
    if (v.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) v.grad()[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * m + j];
      }
    }
  });
  return out;
}

inline Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  detail::require_rank2("mul_rowvec", a);
  if (v.rank() != 1 || v.dim(0) != a.dim(1)) {
    throw ShapeError("mul_rowvec: vector " + shape_str(v.shape()) + " does not match cols of " +
                     shape_str(a.shape()));
  }
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out.values()[static_cast<size_t>(i) * m + j] = a.values()[static_cast<size_t>(i) * m + j] * v.values()[static_cast<size_t>(j)];
    }
  }
  detail::finish_op("mul_rowvec", out, detail::wants_grad({&a, &v}), [a, v, out, n, m]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
          a.grad()[static_cast<size_t>(i) * m + j] += g[static_cast<size_t>(i) * m + j] * v.values()[static_cast<size_t>(j)];
        }
      }
    }
    if (v.requires_grad()) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
          v.grad()[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * m + j] * a.values()[static_cast<size_t>(i) * m + j];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------- normalizers

inline Tensor softmax_rows(const Tensor& a) {
  int n = 0, m = 0;
  detail::row_view("softmax_rows", a, n, m);
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < n; ++i) {
    const float* x = a.values().data() + static_cast<size_t>(i) * m;
    float* y = out.values().data() + static_cast<size_t>(i) * m;
    float mx = x[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, x[j]);
    float denom = 0.0f;
    for (int j = 0; j < m; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    for (int j = 0; j < m; ++j) y[j] /= denom;
  }
  detail::finish_op("softmax_rows", out, detail::wants_grad({&a}), [a, out, n, m]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (int i = 0; i < n; ++i) {
      const float* p = out.values().data() + static_cast<size_t>(i) * m;
      const float* gr = g.data() + static_cast<size_t>(i) * m;
      float dot = 0.0f;
      for (int j = 0; j < m; ++j) dot += p[j] * gr[j];
      for (int j = 0; j < m; ++j) a.grad()[static_cast<size_t>(i) * m + j] += p[j] * (gr[j] - dot);
    }
  });
  return out;
}

inline Tensor log_softmax_rows(const Tensor& a) {
  int n = 0, m = 0;
  detail::row_view("log_softmax_rows", a, n, m);
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < n; ++i) {
    const float* x = a.values().data() + static_cast<size_t>(i) * m;
    float* y = out.values().data() + static_cast<size_t>(i) * m;
    float mx = x[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, x[j]);
    float denom = 0.0f;
    for (int j = 0; j < m; ++j) denom += std::exp(x[j] - mx);
    const float lse = mx + std::log(denom);
    for (int j = 0; j < m; ++j) y[j] = x[j] - lse;
  }
  detail::finish_op("log_softmax_rows", out, detail::wants_grad({&a}), [a, out, n, m]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (int i = 0; i < n; ++i) {
      const float* y = out.values().data() + static_cast<size_t>(i) * m;
      const float* gr = g.data() + static_cast<size_t>(i) * m;
      float gsum = 0.0f;
      for (int j = 0; j < m; ++j) gsum += gr[j];
      for (int j = 0; j < m; ++j) {
        a.grad()[static_cast<size_t>(i) * m + j] += gr[j] - std::exp(y[j]) * gsum;
      }
    }
  });
  return out;
}

inline Tensor layer_norm_rows(const Tensor& a, float eps = 1e-5f) {
  int n = 0, m = 0;
  detail::row_view("layer_norm_rows", a, n, m);
  Tensor out = Tensor::zeros(a.shape());
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* x = a.values().data() + static_cast<size_t>(i) * m;
    float* y = out.values().data() + static_cast<size_t>(i) * m;
    float mu = 0.0f;
    for (int j = 0; j < m; ++j) mu += x[j];
    mu /= static_cast<float>(m);
    float var = 0.0f;
    for (int j = 0; j < m; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<float>(m);
    const float is = 1.0f / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = is;
    for (int j = 0; j < m; ++j) y[j] = (x[j] - mu) * is;
  }
  detail::finish_op("layer_norm_rows", out, detail::wants_grad({&a}), [a, out, inv_std, n, m]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (int i = 0; i < n; ++i) {
      const float* y = out.values().data() + static_cast<size_t>(i) * m;
      const float* gr = g.data() + static_cast<size_t>(i) * m;
      float mg = 0.0f, mgy = 0.0f;
      for (int j = 0; j < m; ++j) {
        mg += gr[j];
        mgy += gr[j] * y[j];
      }
      mg /= static_cast<float>(m);
      mgy /= static_cast<float>(m);
      const float is = (*inv_std)[static_cast<size_t>(i)];
      for (int j = 0; j < m; ++j) {
        a.grad()[static_cast<size_t>(i) * m + j] += is * (gr[j] - mg - y[j] * mgy);
      }
    }
  });
  return out;
}

// Hard one-hot of the row argmax on the forward path, identity on the
// backward path (straight-through).
inline Tensor straight_through_onehot(const Tensor& a) {
  detail::require_rank2("straight_through_onehot", a);
  const int n = a.dim(0), m = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < n; ++i) {
    const float* x = a.values().data() + static_cast<size_t>(i) * m;
    int best = 0;
    for (int j = 1; j < m; ++j) {
      if (x[j] > x[best]) best = j;
    }
    out.values()[static_cast<size_t>(i) * m + best] = 1.0f;
  }
  detail::finish_op("straight_through_onehot", out, detail::wants_grad({&a}), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const auto& g = out.grad();
    for (size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
  });
  return out;
}

// ---------------------------------------------------------------- composites

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  return reshape(matmul(a, transpose(b)), {1});
}

inline Tensor l2_normalize(const Tensor& v, float eps = 1e-12f) {
  Tensor sq = sum_all(mul(v, v));
  Tensor inv_norm = reciprocal(sqrt(add_scalar(sq, eps)));
  return scale_by(v, inv_norm);
}

inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  detail::require_rank2("scaled_dot_product_attention", q);
  if (k.dim(1) != q.dim(1) || v.dim(0) != k.dim(0)) {
    throw ShapeError("scaled_dot_product_attention: incompatible shapes q=" + shape_str(q.shape()) +
                     " k=" + shape_str(k.shape()) + " v=" + shape_str(v.shape()));
  }
  const float scale = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  Tensor att = softmax_rows(mul_scalar(matmul(q, transpose(k)), scale));
  return matmul(att, v);
}

inline std::vector<int> argmax_rows(const Tensor& a) {
  detail::require_rank2("argmax_rows", a);
  const int n = a.dim(0), m = a.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* x = a.values().data() + static_cast<size_t>(i) * m;
    int best = 0;
    for (int j = 1; j < m; ++j) {
      if (x[j] > x[best]) best = j;
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace xbert
