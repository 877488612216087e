#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xbert/geometry.hpp"
#include "xbert/layers.hpp"
#include "xbert/optim.hpp"
#include "xbert/rng.hpp"

// Discrete VAE over point patches: an edge-convolution encoder produces a
// distribution over a learnable codebook, a folding decoder maps token
// embeddings back to patch geometry.

namespace xbert {

// Row-stochastic g x |V| matrix on plain floats. This is the stop-gradient
// side of the training targets; the differentiable path stays in Tensors.
struct TokenDistribution {
  int rows = 0;
  int cols = 0;
  std::vector<float> p;

  static TokenDistribution from_tensor(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("TokenDistribution: expected rank-2, got " + shape_str(t.shape()));
    return {t.dim(0), t.dim(1), t.values()};
  }

  float at(int r, int c) const { return p[static_cast<size_t>(r) * cols + c]; }

  void validate(float tol = 1e-6f) const {
    if (static_cast<size_t>(rows) * cols != p.size()) throw ShapeError("TokenDistribution: bad payload size");
    for (int r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        const float v = at(r, c);
        if (v < 0.0f) throw std::runtime_error("TokenDistribution: negative entry");
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) {
        throw std::runtime_error("TokenDistribution: row " + std::to_string(r) + " sums to " +
                                 std::to_string(sum));
      }
    }
  }

  std::vector<int> argmax() const {
    std::vector<int> out(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      int best = 0;
      for (int c = 1; c < cols; ++c) {
        if (at(r, c) > at(r, best)) best = c;
      }
      out[static_cast<size_t>(r)] = best;
    }
    return out;
  }
};

struct DvaeConfig {
  int vocab = 128;
  int token_dim = 32;
  int edge_neighbors = 4;
  std::vector<int> encoder_channels = {32, 32, 32, 64};
  int head_hidden = 64;
  int grid_points = 16;  // m, decoder outputs per patch
  int fold_hidden = 64;
  float temp_start = 1.0f;
  float temp_end = 0.1f;
  int temp_decay_steps = 500;
  float kl_weight = 0.01f;
};

// Fixed 2D folding grid with m rows in [-1,1]^2, laid out a x b with a the
// largest divisor of m not above sqrt(m).
inline Tensor make_fold_grid(int m) {
  int a = 1;
  for (int d = 1; d * d <= m; ++d) {
    if (m % d == 0) a = d;
  }
  const int b = m / a;
  std::vector<float> data;
  data.reserve(static_cast<size_t>(m) * 2);
  for (int i = 0; i < a; ++i) {
    for (int j = 0; j < b; ++j) {
      data.push_back(a == 1 ? 0.0f : -1.0f + 2.0f * static_cast<float>(i) / static_cast<float>(a - 1));
      data.push_back(b == 1 ? 0.0f : -1.0f + 2.0f * static_cast<float>(j) / static_cast<float>(b - 1));
    }
  }
  return Tensor::from(std::move(data), {m, 2});
}

class Dvae {
 public:
  Dvae() = default;

  Dvae(const DvaeConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix = "dvae")
      : cfg_(cfg), grid_(make_fold_grid(cfg.grid_points)) {
    if (cfg.vocab < 2) throw std::runtime_error("Dvae: vocabulary needs at least 2 tokens");
    int c_in = 3;
    for (size_t l = 0; l < cfg.encoder_channels.size(); ++l) {
      const int c_out = cfg.encoder_channels[l];
      edge_.emplace_back(store, prefix + ".edge" + std::to_string(l), 2 * c_in, c_out, rng);
      c_in = c_out;
    }
    head1_ = Dense(store, prefix + ".head1", c_in, cfg.head_hidden, rng);
    head2_ = Dense(store, prefix + ".head2", cfg.head_hidden, cfg.vocab, rng);
    codebook_ = param_normal(store, prefix + ".codebook", {cfg.vocab, cfg.token_dim}, rng, 0.1f);
    fold1a_ = Dense(store, prefix + ".fold1a", 2 + cfg.token_dim, cfg.fold_hidden, rng);
    fold1b_ = Dense(store, prefix + ".fold1b", cfg.fold_hidden, cfg.fold_hidden, rng);
    fold1c_ = Dense(store, prefix + ".fold1c", cfg.fold_hidden, 3, rng);
    fold2a_ = Dense(store, prefix + ".fold2a", 3 + cfg.token_dim, cfg.fold_hidden, rng);
    fold2b_ = Dense(store, prefix + ".fold2b", cfg.fold_hidden, cfg.fold_hidden, rng);
    fold2c_ = Dense(store, prefix + ".fold2c", cfg.fold_hidden, 3, rng);
  }

  const DvaeConfig& config() const { return cfg_; }
  const Tensor& codebook() const { return codebook_; }

  // Per-patch logits over the vocabulary. The edge graph is built once from
  // the patch coordinates and shared by all four layers.
  Tensor tokenize_logits(const PatchSet& ps) const {
    const int g = ps.group_count();
    if (g == 0) throw std::runtime_error("tokenize: empty patch set");
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(g));
    for (int gi = 0; gi < g; ++gi) rows.push_back(patch_logits(ps.patches[static_cast<size_t>(gi)]));
    return concat_rows(rows);
  }

  // Softmax rows; differentiable, no argmax applied.
  Tensor tokenize(const PatchSet& ps) const { return softmax_rows(tokenize_logits(ps)); }

  // Gumbel-softmax relaxation of the distribution plus the hard argmax ids.
  std::pair<Tensor, std::vector<int>> quantize_gumbel(const Tensor& probs, float temperature,
                                                      Rng& rng) const {
    if (temperature <= 0.0f) throw std::runtime_error("quantize_gumbel: temperature must be positive");
    Tensor noise = Tensor::zeros(probs.shape());
    for (auto& v : noise.values()) {
      const double u = std::max(rng.uniform(), 1e-12);
      v = static_cast<float>(-std::log(-std::log(u)));
    }
    // The epsilon keeps log finite if a softmax row underflowed to 0.
    Tensor relaxed = softmax_rows(
        mul_scalar(add(xbert::log(add_scalar(probs, 1e-30f)), noise), 1.0f / temperature));
    return {relaxed, argmax_rows(relaxed)};
  }

  // Fold each token embedding over the 2D grid into m offsets around its
  // patch center; two fold stages, shared weights across patches.
  Tensor decode_embeddings(const Tensor& token_embeddings, const std::vector<Vec3>& centers) const {
    if (token_embeddings.rank() != 2 || token_embeddings.dim(1) != cfg_.token_dim) {
      throw ShapeError("decode: embeddings must be (g," + std::to_string(cfg_.token_dim) + "), got " +
                       shape_str(token_embeddings.shape()));
    }
    const int g = token_embeddings.dim(0);
    if (g != static_cast<int>(centers.size())) {
      throw ShapeError("decode: token count " + std::to_string(g) + " != center count " +
                       std::to_string(centers.size()));
    }
    const int m = cfg_.grid_points;
    const std::vector<int> rep(static_cast<size_t>(m), 0);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(g));
    for (int gi = 0; gi < g; ++gi) {
      Tensor emb = gather_rows(slice_rows(token_embeddings, gi, gi + 1), rep);  // m x token_dim
      Tensor h1 = gelu(fold1a_.forward(concat_cols(grid_, emb)));
      Tensor xyz1 = fold1c_.forward(gelu(fold1b_.forward(h1)));
      Tensor h2 = gelu(fold2a_.forward(concat_cols(xyz1, emb)));
      Tensor offsets = fold2c_.forward(gelu(fold2b_.forward(h2)));
      std::vector<float> center_rep;
      center_rep.reserve(static_cast<size_t>(m) * 3);
      for (int r = 0; r < m; ++r) {
        center_rep.push_back(centers[static_cast<size_t>(gi)][0]);
        center_rep.push_back(centers[static_cast<size_t>(gi)][1]);
        center_rep.push_back(centers[static_cast<size_t>(gi)][2]);
      }
      parts.push_back(add(offsets, Tensor::from(std::move(center_rep), {m, 3})));
    }
    return concat_rows(parts);
  }

  Tensor decode_ids(const std::vector<int>& ids, const std::vector<Vec3>& centers) const {
    for (int id : ids) {
      if (id < 0 || id >= cfg_.vocab) throw std::runtime_error("decode: token id out of vocabulary range");
    }
    return decode_embeddings(gather_rows(codebook_, ids), centers);
  }

  float temperature_at(int64_t step) const {
    const double t = std::min(1.0, static_cast<double>(step) / std::max<int64_t>(1, cfg_.temp_decay_steps));
    return static_cast<float>(cfg_.temp_start * std::pow(cfg_.temp_end / cfg_.temp_start, t));
  }

  struct StepStats {
    float loss = 0.0f;
    float reconstruction = 0.0f;
    float usage_kl = 0.0f;
    float temperature = 0.0f;
  };

  // One optimization step on a batch of patch sets. The reconstruction
  // target per patch is center + normalized patch; usage KL against the
  // uniform distribution discourages codebook collapse.
  StepStats train_step(const std::vector<PatchSet>& batch, ParamStore& params, AdamW& opt, float lr,
                       int64_t step, Rng& rng) {
    if (batch.empty()) throw std::runtime_error("dvae train_step: empty batch");
    const float temp = temperature_at(step);
    Tape tape;
    StepStats stats;
    stats.temperature = temp;
    {
      TapeScope scope(tape);
      Tensor recon_total;
      std::vector<Tensor> all_probs;
      for (const auto& ps : batch) {
        Tensor probs = tokenize(ps);
        all_probs.push_back(probs);
        auto [relaxed, ids] = quantize_gumbel(probs, temp, rng);
        Tensor emb = matmul(relaxed, codebook_);
        Tensor recon = decode_embeddings(emb, ps.centers);
        const int g = ps.group_count();
        Tensor cloud_loss;
        for (int gi = 0; gi < g; ++gi) {
          Tensor pred = slice_rows(recon, gi * cfg_.grid_points, (gi + 1) * cfg_.grid_points);
          Tensor target = patch_target(ps, gi);
          Tensor c = chamfer_loss(pred, target);
          cloud_loss = cloud_loss.defined() ? add(cloud_loss, c) : c;
        }
        cloud_loss = mul_scalar(cloud_loss, 1.0f / static_cast<float>(g));
        recon_total = recon_total.defined() ? add(recon_total, cloud_loss) : cloud_loss;
      }
      recon_total = mul_scalar(recon_total, 1.0f / static_cast<float>(batch.size()));

      Tensor stacked = concat_rows(all_probs);
      Tensor mean_usage = mul_scalar(matmul(Tensor::full({1, stacked.dim(0)}, 1.0f), stacked),
                                     1.0f / static_cast<float>(stacked.dim(0)));
      Tensor kl = sum_all(mul(mean_usage, xbert::log(mul_scalar(mean_usage, static_cast<float>(cfg_.vocab)))));

      Tensor loss = add(recon_total, mul_scalar(kl, cfg_.kl_weight));
      stats.loss = loss.item();
      stats.reconstruction = recon_total.item();
      stats.usage_kl = kl.item();

      params.zero_grads();
      tape.backward(loss);
    }
    opt.step(lr);
    return stats;
  }

  // Absolute-coordinate target for one patch: center + normalized points.
  static Tensor patch_target(const PatchSet& ps, int gi) {
    const auto& patch = ps.patches[static_cast<size_t>(gi)];
    const auto& c = ps.centers[static_cast<size_t>(gi)];
    std::vector<float> data;
    data.reserve(patch.size() * 3);
    for (const auto& p : patch) {
      data.push_back(p[0] + c[0]);
      data.push_back(p[1] + c[1]);
      data.push_back(p[2] + c[2]);
    }
    return Tensor::from(std::move(data), {static_cast<int>(patch.size()), 3});
  }

 private:
  Tensor patch_logits(const std::vector<Vec3>& patch) const {
    const int k = static_cast<int>(patch.size());
    const int e = cfg_.edge_neighbors;
    if (k <= e) {
      throw std::runtime_error("tokenize: patch size " + std::to_string(k) +
                               " too small for " + std::to_string(e) + " edge neighbors");
    }
    // Nearest neighbors within the patch, self excluded, ties by index.
    std::vector<int> center_idx(static_cast<size_t>(k) * e);
    std::vector<int> neighbor_idx(static_cast<size_t>(k) * e);
    std::vector<std::pair<float, int>> dist(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        dist[static_cast<size_t>(j)] = {squared_distance(patch[static_cast<size_t>(i)], patch[static_cast<size_t>(j)]), j};
      }
      dist[static_cast<size_t>(i)].first = std::numeric_limits<float>::max();
      std::partial_sort(dist.begin(), dist.begin() + e, dist.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second < b.second;
      });
      for (int j = 0; j < e; ++j) {
        center_idx[static_cast<size_t>(i) * e + j] = i;
        neighbor_idx[static_cast<size_t>(i) * e + j] = dist[static_cast<size_t>(j)].second;
      }
    }

    Tensor x = points_tensor(patch);
    for (const auto& layer : edge_) {
      Tensor xc = gather_rows(x, center_idx);
      Tensor xn = gather_rows(x, neighbor_idx);
      Tensor edge_feat = concat_cols(xc, sub(xn, xc));
      x = max_pool_rows(gelu(layer.forward(edge_feat)), e);
    }
    Tensor pooled = max_pool_rows(x, k);
    return head2_.forward(gelu(head1_.forward(pooled)));
  }

  DvaeConfig cfg_;
  std::vector<Dense> edge_;
  Dense head1_, head2_;
  Tensor codebook_;
  Dense fold1a_, fold1b_, fold1c_;
  Dense fold2a_, fold2b_, fold2c_;
  Tensor grid_;
};

}  // namespace xbert
