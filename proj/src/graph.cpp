#include "lqmpc/graph.hpp"

#include <stdexcept>

namespace lqmpc {

NodeRef Tape::append(Node node) {
  nodes_.push_back(std::move(node));
  return NodeRef{static_cast<int>(nodes_.size()) - 1, this};
}

NodeRef Tape::input(const Matrix& value) {
  return append(Node{OpKind::kInput, {}, value, 0.0, nullptr});
}

NodeRef Tape::constant(const Matrix& value) {
  return append(Node{OpKind::kConstant, {}, value, 0.0, nullptr});
}

NodeRef Tape::add(NodeRef a, NodeRef b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw std::invalid_argument("tape add: shape mismatch");
  return append(Node{OpKind::kAdd, {a.id, b.id}, va + vb, 0.0, nullptr});
}

NodeRef Tape::sub(NodeRef a, NodeRef b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw std::invalid_argument("tape sub: shape mismatch");
  return append(Node{OpKind::kSub, {a.id, b.id}, va - vb, 0.0, nullptr});
}

NodeRef Tape::matmul(NodeRef a, NodeRef b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.rows())
    throw std::invalid_argument("tape matmul: inner dimension mismatch");
  return append(Node{OpKind::kMatmul, {a.id, b.id}, va * vb, 0.0, nullptr});
}

NodeRef Tape::transpose(NodeRef a) {
  return append(
      Node{OpKind::kTranspose, {a.id}, value(a).transpose(), 0.0, nullptr});
}

NodeRef Tape::scalar_mul(double c, NodeRef a) {
  return append(Node{OpKind::kScalarMul, {a.id}, c * value(a), c, nullptr});
}

NodeRef Tape::concat_rows(const std::vector<NodeRef>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(blocks[0]).cols();
  std::vector<int> parents;
  for (const NodeRef& b : blocks) {
    if (value(b).cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch");
    rows += value(b).rows();
    parents.push_back(b.id);
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const NodeRef& b : blocks) {
    out.middleRows(r, value(b).rows()) = value(b);
    r += value(b).rows();
  }
  return append(Node{OpKind::kConcatRows, parents, out, 0.0, nullptr});
}

NodeRef Tape::concat_cols(const std::vector<NodeRef>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = value(blocks[0]).rows();
  std::vector<int> parents;
  for (const NodeRef& b : blocks) {
    if (value(b).rows() != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    cols += value(b).cols();
    parents.push_back(b.id);
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const NodeRef& b : blocks) {
    out.middleCols(c, value(b).cols()) = value(b);
    c += value(b).cols();
  }
  return append(Node{OpKind::kConcatCols, parents, out, 0.0, nullptr});
}

NodeRef Tape::custom(const std::vector<NodeRef>& parents, Matrix value,
                     CustomBackward backward) {
  if (!backward) throw std::invalid_argument("custom node: missing rule");
  std::vector<int> ids;
  for (const NodeRef& p : parents) ids.push_back(p.id);
  return append(
      Node{OpKind::kCustom, ids, std::move(value), 0.0, std::move(backward)});
}

const Matrix& Tape::value(NodeRef n) const {
  if (n.id < 0 || n.id >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("tape: bad node id");
  return at(n.id).value;
}

void Tape::accumulate(int id, const Matrix& g) {
  Matrix& slot = adjoints_[static_cast<size_t>(id)];
  if (slot.size() == 0)
    slot = g;
  else
    slot += g;
}

void Tape::backward(NodeRef seed, const Matrix& seed_adjoint) {
  const Matrix& sv = value(seed);
  if (sv.rows() != seed_adjoint.rows() || sv.cols() != seed_adjoint.cols())
    throw std::invalid_argument("backward: seed adjoint shape mismatch");
  adjoints_.assign(nodes_.size(), Matrix());
  accumulate(seed.id, seed_adjoint);
  for (int id = seed.id; id >= 0; --id) {
    const Matrix& g = adjoints_[static_cast<size_t>(id)];
    if (g.size() == 0) continue;  // not reached
    const Node& node = at(id);
    switch (node.kind) {
      case OpKind::kInput:
      case OpKind::kConstant:
        break;
      case OpKind::kAdd:
        accumulate(node.parents[0], g);
        accumulate(node.parents[1], g);
        break;
      case OpKind::kSub:
        accumulate(node.parents[0], g);
        accumulate(node.parents[1], -g);
        break;
      case OpKind::kMatmul: {
        const Matrix& a = at(node.parents[0]).value;
        const Matrix& b = at(node.parents[1]).value;
        accumulate(node.parents[0], g * b.transpose());
        accumulate(node.parents[1], a.transpose() * g);
        break;
      }
      case OpKind::kTranspose:
        accumulate(node.parents[0], g.transpose());
        break;
      case OpKind::kScalarMul:
        accumulate(node.parents[0], node.scalar * g);
        break;
      case OpKind::kConcatRows: {
        Eigen::Index r = 0;
        for (int pid : node.parents) {
          const Eigen::Index pr = at(pid).value.rows();
          accumulate(pid, g.middleRows(r, pr));
          r += pr;
        }
        break;
      }
      case OpKind::kConcatCols: {
        Eigen::Index c = 0;
        for (int pid : node.parents) {
          const Eigen::Index pc = at(pid).value.cols();
          accumulate(pid, g.middleCols(c, pc));
          c += pc;
        }
        break;
      }
      case OpKind::kCustom: {
        std::vector<Matrix> pv;
        pv.reserve(node.parents.size());
        for (int pid : node.parents) pv.push_back(at(pid).value);
        std::vector<Matrix> pg = node.custom_back(pv, node.value, g);
        if (pg.size() != node.parents.size())
          throw std::runtime_error("custom backward: wrong adjoint count");
        for (size_t k = 0; k < pg.size(); ++k) {
          if (pg[k].size() != 0) accumulate(node.parents[k], pg[k]);
        }
        break;
      }
    }
  }
}

Matrix Tape::adjoint(NodeRef n) const {
  if (n.id < 0 || n.id >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("tape: bad node id");
  const Matrix& g = adjoints_.at(static_cast<size_t>(n.id));
  if (g.size() == 0) {
    const Matrix& v = at(n.id).value;
    return Matrix::Zero(v.rows(), v.cols());
  }
  return g;
}

}  // namespace lqmpc
