#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace xbert {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Opt-in NaN/Inf detection on every op output; tests switch it on.
inline bool& finite_checks_enabled() {
  static bool enabled = false;
  return enabled;
}

// Dense row-major fp32 tensor. Copies share storage (shared_ptr payload);
// the gradient buffer exists iff requires_grad is set.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->values.assign(static_cast<size_t>(shape_numel(t.p_->shape)), 0.0f);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor full(Shape shape, float value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.values()) v = value;
    return t;
  }

  static Tensor from(std::vector<float> data, Shape shape) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
      throw ShapeError("Tensor::from: data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = std::move(shape);
    t.p_->values = std::move(data);
    return t;
  }

  static Tensor scalar(float v) { return from({v}, {1}); }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(p_->values.size()); }

  // Tensors are shared handles; const-ness of a handle is shallow, like
  // shared_ptr, so a by-value lambda capture can still write the payload.
  std::vector<float>& values() const { return p_->values; }

  float item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return p_->values[0];
  }

  bool requires_grad() const { return p_ && p_->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    p_->requires_grad = on;
    if (on && p_->grad.size() != p_->values.size()) p_->grad.assign(p_->values.size(), 0.0f);
    if (!on) p_->grad.clear();
    return *this;
  }

  std::vector<float>& grad() const {
    if (!requires_grad()) throw std::runtime_error("grad: tensor does not require grad");
    return p_->grad;
  }

  void zero_grad() const {
    if (requires_grad()) p_->grad.assign(p_->values.size(), 0.0f);
  }

  // Stable identity of the underlying storage, used by the tape.
  const void* id() const { return p_.get(); }

  void check_finite(const char* op) const {
    for (float v : p_->values) {
      if (!std::isfinite(v)) {
        throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
      }
    }
  }

 private:
  struct Payload {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Payload> p_;
};

// Reverse-mode tape. Ops append themselves in execution order; backward
// replays pull closures in reverse. Intermediate grads are recomputed from
// scratch on every backward call, leaf grads accumulate across calls.
class Tape {
 public:
  void record(Tensor output, std::function<void()> pull) {
    output_ids_.insert(output.id());
    nodes_.push_back(Node{std::move(output), std::move(pull)});
  }

  bool contains(const void* id) const { return output_ids_.count(id) > 0; }
  size_t size() const { return nodes_.size(); }

  void backward(Tensor loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ShapeError("backward: loss must be a 1-element tensor");
    }
    if (!contains(loss.id())) {
      throw std::runtime_error("backward: loss is not an output recorded on this tape");
    }
    for (auto& n : nodes_) n.output.zero_grad();
    loss.grad()[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
  }

  void clear() {
    nodes_.clear();
    output_ids_.clear();
  }

 private:
  struct Node {
    Tensor output;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const void*> output_ids_;
};

inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

// RAII scope installing a tape; ops record only while one is active.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(active_tape()) { active_tape() = &t; }
  ~TapeScope() { active_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

class NoTapeScope {
 public:
  NoTapeScope() : prev_(active_tape()) { active_tape() = nullptr; }
  ~NoTapeScope() { active_tape() = prev_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace xbert
