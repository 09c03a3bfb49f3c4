#ifndef COSTFLOW_TENSOR_HPP
#define COSTFLOW_TENSOR_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

// Minimal reverse-mode autodiff over dense double matrices. A Tape lives for
// one forward/backward pass; parameter leaves accumulate into external grad
// buffers so an optimizer can step after any number of passes.

namespace costflow {

using Mat = Eigen::MatrixXd;

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> backward;
  };

  int constant(Mat v) { return push(std::move(v)); }

  // Leaf tied to a parameter: after backward(), d(loss)/d(param) is added
  // into *grad_out.
  int param(const Mat& value, Mat* grad_out) {
    int id = push(value);
    nodes_[id].backward = [this, id, grad_out]() { *grad_out += nodes_[id].grad; };
    return id;
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }

  int matmul(int a, int b);
  int matmul_nt(int a, int b);  // a * b^T
  int add(int a, int b);        // same shape
  int add_rowvec(int a, int bias);  // bias is 1 x cols, broadcast over rows
  int scale(int a, double s);
  int mul_elem(int a, int b);
  int tanh_(int a);
  int relu(int a);
  int sigmoid(int a);
  int layernorm_rows(int a, int gamma, int beta);  // gamma/beta 1 x cols
  // Row-wise softmax; `addmask` (same shape) is added to the logits first
  // (use large negative entries for blocked positions). Pass -1 for none.
  int softmax_rows(int a, int addmask_node);
  int log_softmax_rows(int a);
  int gather_rows(const Mat& table, const std::vector<int>& rows, Mat* grad_out);
  int slice_rows(int a, int begin, int len);
  int slice_cols(int a, int begin, int len);
  int concat_rows(const std::vector<int>& parts);
  int concat_cols(const std::vector<int>& parts);
  int pick(int a, int r, int c);      // 1x1
  int neg(int a);
  int sum(const std::vector<int>& scalars);  // all 1x1
  int softplus(int a);                       // elementwise log(1+e^x)

  void backward(int loss);

  size_t size() const { return nodes_.size(); }

 private:
  int push(Mat v) {
    Node n;
    n.value = std::move(v);
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_.push_back(std::move(n));
    return (int)nodes_.size() - 1;
  }
  std::vector<Node> nodes_;
};

}  // namespace costflow

#endif  // COSTFLOW_TENSOR_HPP
