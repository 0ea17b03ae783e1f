#pragma once

#include <functional>
#include <vector>

#include "common.hpp"

namespace gs4::ad {

// Reverse-mode tape over 2-D double arrays. Node values are materialized
// eagerly; backward closures accumulate into input gradients. The tape owns
// all storage; node handles are plain ints.
class Tape {
 public:
  struct Node {
    Mat val;
    Mat grad;  // empty until touched
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
  };

  int leaf(Mat v, bool needs_grad = true);
  int constant(Mat v) { return leaf(std::move(v), false); }

  const Mat& val(int id) const { return nodes_[std::size_t(id)].val; }
  bool needs_grad(int id) const { return nodes_[std::size_t(id)].needs_grad; }
  const Mat& grad(int id) const;
  void add_grad(int id, const Mat& g);

  // Elementwise; shapes must match exactly.
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int neg(int a);
  int scale(int a, double s);
  int add_const(int a, double s);
  int exp_op(int a);
  int sqrt_op(int a);
  int square(int a);
  int relu(int a);
  int gelu(int a);

  int matmul(int a, int b);
  int transpose(int a);
  int sum_all(int a);   // 1x1
  int row_sum(int a);   // n x 1
  int scale_by(int a, int scalar_node);        // broadcast 1x1 node
  int add_row_broadcast(int a, int row_node);  // row_node is 1 x C
  int select_rows(int a, std::vector<int> rows);
  int vconcat(int a, int b);
  int diag_embed(int a);  // n x 1 -> n x n

  // Arbitrary op: caller supplies the forward value and a backward closure
  // that reads grad(self) and calls add_grad on the inputs.
  int custom(Mat val, bool needs_grad, std::function<void(Tape&, int)> back);

  void backward(int loss_id);

  std::size_t size() const { return nodes_.size(); }

 private:
  int push(Mat val, bool needs_grad, std::function<void(Tape&, int)> back);
  std::vector<Node> nodes_;
};

// Complex value as a pair of real nodes.
struct CNode {
  int re = -1;
  int im = -1;
};

CNode cleaf(Tape& t, const CMat& v, bool needs_grad = true);
CMat cval(const Tape& t, CNode a);
CNode cadd(Tape& t, CNode a, CNode b);
CNode csub(Tape& t, CNode a, CNode b);
CNode cmul(Tape& t, CNode a, CNode b);  // elementwise
CNode cmatmul(Tape& t, CNode a, CNode b);
CNode cconj(Tape& t, CNode a);
CNode cscale(Tape& t, CNode a, double s);
CNode cscale_by(Tape& t, CNode a, int scalar_node);  // real 1x1 node
CNode cdiag_embed(Tape& t, CNode a);

// Complex matrix inverse as a node pair; gradient is -X^H G X^H.
CNode cinverse(Tape& t, CNode a);

}  // namespace gs4::ad
