#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hatetiny/errors.hpp"

namespace hatetiny {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<MatX<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const MatX<S>>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <class S>
struct TensorStorage {
  VecX<S> value;
  VecX<S> grad;  // size 0 means "no gradient accumulated yet"
};

template <class S>
class Tape;

// Dense tensor of rank 0, 1 or 2, stored flat in row-major order. Copies
// share storage; gradients accumulate into the shared storage when a tape
// runs backward. requires_grad is a property of the handle, and the model
// structs hold the canonical handles for all parameters.
template <class S>
class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape)
      : st_(std::make_shared<TensorStorage<S>>()), shape_(std::move(shape)) {
    validate_shape(shape_);
    st_->value = VecX<S>::Zero(shape_numel(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, S v) {
    Tensor t(std::move(shape));
    t.st_->value.setConstant(v);
    return t;
  }

  static Tensor from_values(Shape shape, std::initializer_list<S> vals) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(vals.size()) != t.numel())
      throw DimensionError("Tensor::from_values: " + std::to_string(vals.size()) +
                           " values for shape " + shape_str(t.shape_));
    Index i = 0;
    for (S v : vals) t.st_->value[i++] = v;
    return t;
  }

  static Tensor from_flat(Shape shape, VecX<S> flat) {
    Tensor t;
    t.shape_ = std::move(shape);
    validate_shape(t.shape_);
    if (flat.size() != shape_numel(t.shape_))
      throw DimensionError("Tensor::from_flat: " + std::to_string(flat.size()) +
                           " values for shape " + shape_str(t.shape_));
    t.st_->value = std::move(flat);
    return t;
  }

  static Tensor scalar_value(S v) { return constant(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index numel() const { return st_->value.size(); }

  Index dim(int i) const {
    if (i < 0 || i >= rank())
      throw IndexError("Tensor::dim: axis " + std::to_string(i) + " out of range for rank " +
                       std::to_string(rank()));
    return shape_[static_cast<std::size_t>(i)];
  }

  // Rows/cols of the 2-D view: rank 2 is (d0, d1), rank 1 a row vector,
  // rank 0 a 1x1 matrix.
  Index rows() const { return rank() == 2 ? shape_[0] : 1; }
  Index cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  VecX<S>& value() { return st_->value; }
  const VecX<S>& value() const { return st_->value; }

  MatMap<S> mat() { return MatMap<S>(st_->value.data(), rows(), cols()); }
  ConstMatMap<S> mat() const { return ConstMatMap<S>(st_->value.data(), rows(), cols()); }

  S scalar() const {
    if (numel() != 1)
      throw ContractError("Tensor::scalar: tensor has shape " + shape_str(shape_));
    return st_->value[0];
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  bool has_grad() const { return st_->grad.size() != 0; }
  VecX<S>& grad() {
    if (!has_grad()) throw StateError("Tensor::grad: no gradient accumulated");
    return st_->grad;
  }
  const VecX<S>& grad() const {
    if (!has_grad()) throw StateError("Tensor::grad: no gradient accumulated");
    return st_->grad;
  }
  MatMap<S> grad_mat() { return MatMap<S>(grad().data(), rows(), cols()); }
  void clear_grad() { st_->grad.resize(0); }

  // Deep copy with fresh storage; detached from any tape.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_->value = st_->value;
    t.requires_grad_ = requires_grad_;
    return t;
  }

  bool all_finite() const { return st_->value.allFinite(); }

  // Tape linkage, managed by ops and Tape::record_node.
  Tape<S>* tape() const { return tape_; }
  int node_id() const { return node_; }
  std::uint64_t tape_generation() const { return gen_; }
  void link_tape(Tape<S>* t, int node, std::uint64_t gen) {
    tape_ = t;
    node_ = node;
    gen_ = gen;
  }

  const std::shared_ptr<TensorStorage<S>>& storage() const { return st_; }

 private:
  static void validate_shape(const Shape& s) {
    if (s.size() > 2)
      throw DimensionError("Tensor: rank " + std::to_string(s.size()) + " not supported");
    for (Index d : s)
      if (d <= 0) throw DimensionError("Tensor: non-positive dimension in " + shape_str(s));
  }

  std::shared_ptr<TensorStorage<S>> st_;
  Shape shape_;
  bool requires_grad_ = false;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
  std::uint64_t gen_ = 0;
};

// Reverse-mode tape. A forward pass executed inside a Tape::Scope records
// one step per differentiable op; backward replays the steps in exact
// reverse order, then flushes leaf gradients additively into the leaves'
// shared storage. A tape is single-shot: backward marks it consumed, and
// clear() makes it reusable while invalidating node ids from earlier
// generations.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // RAII activation; ops record on the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }

  std::size_t num_steps() const { return steps_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t generation() const { return gen_; }

  // Node id for an op input: reuses the node of an intermediate recorded in
  // the current generation, registers a leaf node for tensors that require
  // grad, and returns -1 when no gradient should flow.
  int input_id(const Tensor<S>& t) {
    if (t.tape() == this && t.tape_generation() == gen_ && t.node_id() >= 0) return t.node_id();
    if (!t.requires_grad()) return -1;
    const void* key = t.storage().get();
    auto [it, inserted] = leaf_ids_.try_emplace(key, static_cast<int>(nodes_.size()));
    if (inserted) nodes_.push_back(Node{t.storage(), t.numel()});
    return it->second;
  }

  // Registers the op output as a new node and links the tensor to it.
  int record_node(Tensor<S>& out) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{nullptr, out.numel()});
    out.link_tape(this, id, gen_);
    out.set_requires_grad(true);
    return id;
  }

  // fn(tape) runs during backward; it reads grad_flat(out) and calls
  // accumulate on its inputs.
  template <class Fn>
  void add_step(int out, Fn&& fn) {
    steps_.push_back(Step{out, std::function<void(Tape&)>(std::forward<Fn>(fn))});
  }

  const VecX<S>& grad_flat(int node) const { return grads_[static_cast<std::size_t>(node)]; }

  template <class Derived>
  void accumulate(int node, const Eigen::MatrixBase<Derived>& flat_grad) {
    auto& buf = grads_[static_cast<std::size_t>(node)];
    if (buf.size() == 0)
      buf = flat_grad;
    else
      buf += flat_grad;
  }

  void backward(const Tensor<S>& loss) {
    if (consumed_) throw StateError("Tape::backward: tape already consumed");
    if (loss.numel() != 1)
      throw ContractError("Tape::backward: loss must be a scalar, got shape " +
                          shape_str(loss.shape()));
    if (loss.tape() != this || loss.tape_generation() != gen_ || loss.node_id() < 0)
      throw ContractError("Tape::backward: loss was not recorded on this tape");
    consumed_ = true;
    grads_.assign(nodes_.size(), VecX<S>());
    grads_[static_cast<std::size_t>(loss.node_id())] = VecX<S>::Ones(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it)
      if (grads_[static_cast<std::size_t>(it->out)].size() != 0) it->fn(*this);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (!n.leaf || grads_[i].size() == 0) continue;
      if (n.leaf->grad.size() == 0)
        n.leaf->grad = grads_[i];
      else
        n.leaf->grad += grads_[i];
    }
    grads_.clear();
  }

  void clear() {
    steps_.clear();
    nodes_.clear();
    leaf_ids_.clear();
    grads_.clear();
    consumed_ = false;
    ++gen_;
  }

 private:
  struct Node {
    std::shared_ptr<TensorStorage<S>> leaf;  // non-null for leaf parameters
    Index numel = 0;
  };
  struct Step {
    int out;
    std::function<void(Tape&)> fn;
  };

  static thread_local Tape* active_;
  std::vector<Node> nodes_;
  std::vector<Step> steps_;
  std::unordered_map<const void*, int> leaf_ids_;
  std::vector<VecX<S>> grads_;
  std::uint64_t gen_ = 1;
  bool consumed_ = false;
};

template <class S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

// Runs backward on the tape that recorded the loss.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.tape() == nullptr || loss.node_id() < 0)
    throw ContractError("backward: loss was not recorded on any tape");
  loss.tape()->backward(loss);
}

}  // namespace hatetiny
