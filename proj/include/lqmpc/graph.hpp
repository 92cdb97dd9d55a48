#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "lqmpc/linalg.hpp"

namespace lqmpc {

// Reverse-mode tape over matrix-valued operations. Nodes are appended during
// the forward pass (tape is topologically ordered by construction) and the
// whole tape is consumed by one backward() call.
class Tape;

struct NodeRef {
  int id = -1;
  Tape* tape = nullptr;
};

enum class OpKind {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMatmul,
  kTranspose,
  kScalarMul,
  kConcatRows,
  kConcatCols,
  kCustom,
};

class Tape {
 public:
  using CustomBackward = std::function<std::vector<Matrix>(
      const std::vector<Matrix>& parent_values, const Matrix& value,
      const Matrix& adjoint)>;

  // Leaf nodes. Inputs receive gradients; constants do not.
  NodeRef input(const Matrix& value);
  NodeRef constant(const Matrix& value);

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef matmul(NodeRef a, NodeRef b);
  NodeRef transpose(NodeRef a);
  NodeRef scalar_mul(double c, NodeRef a);
  // Vertical / horizontal stacking of conforming blocks.
  NodeRef concat_rows(const std::vector<NodeRef>& blocks);
  NodeRef concat_cols(const std::vector<NodeRef>& blocks);
  // Custom node: caller supplies the forward value and the backward rule.
  NodeRef custom(const std::vector<NodeRef>& parents, Matrix value,
                 CustomBackward backward);

  const Matrix& value(NodeRef n) const;

  // Reverse traversal from seed. Returns nothing; adjoints are queried with
  // adjoint(). Seed adjoint dimensions must match the seed value.
  void backward(NodeRef seed, const Matrix& seed_adjoint);

  // Zero matrix of the node's shape when the node was not reached.
  Matrix adjoint(NodeRef n) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> parents;
    Matrix value;
    double scalar = 0.0;          // kScalarMul factor
    CustomBackward custom_back;   // kCustom only
  };

  NodeRef append(Node node);
  void accumulate(int id, const Matrix& g);
  const Node& at(int id) const { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;  // empty matrix = not reached
};

}  // namespace lqmpc
