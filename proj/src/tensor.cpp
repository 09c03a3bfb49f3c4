#include "costflow/tensor.hpp"

#include <cmath>
#include <memory>

namespace costflow {

int Tape::matmul(int a, int b) {
  int id = push(nodes_[a].value * nodes_[b].value);
  nodes_[id].backward = [this, id, a, b]() {
    nodes_[a].grad += nodes_[id].grad * nodes_[b].value.transpose();
    nodes_[b].grad += nodes_[a].value.transpose() * nodes_[id].grad;
  };
  return id;
}

int Tape::matmul_nt(int a, int b) {
  int id = push(nodes_[a].value * nodes_[b].value.transpose());
  nodes_[id].backward = [this, id, a, b]() {
    nodes_[a].grad += nodes_[id].grad * nodes_[b].value;
    nodes_[b].grad += nodes_[id].grad.transpose() * nodes_[a].value;
  };
  return id;
}

int Tape::add(int a, int b) {
  int id = push(nodes_[a].value + nodes_[b].value);
  nodes_[id].backward = [this, id, a, b]() {
    nodes_[a].grad += nodes_[id].grad;
    nodes_[b].grad += nodes_[id].grad;
  };
  return id;
}

int Tape::add_rowvec(int a, int bias) {
  Mat v = nodes_[a].value;
  v.rowwise() += nodes_[bias].value.row(0);
  int id = push(std::move(v));
  nodes_[id].backward = [this, id, a, bias]() {
    nodes_[a].grad += nodes_[id].grad;
    nodes_[bias].grad.row(0) += nodes_[id].grad.colwise().sum();
  };
  return id;
}

int Tape::scale(int a, double s) {
  int id = push(nodes_[a].value * s);
  nodes_[id].backward = [this, id, a, s]() {
    nodes_[a].grad += nodes_[id].grad * s;
  };
  return id;
}

int Tape::mul_elem(int a, int b) {
  int id = push(nodes_[a].value.cwiseProduct(nodes_[b].value));
  nodes_[id].backward = [this, id, a, b]() {
    nodes_[a].grad += nodes_[id].grad.cwiseProduct(nodes_[b].value);
    nodes_[b].grad += nodes_[id].grad.cwiseProduct(nodes_[a].value);
  };
  return id;
}

int Tape::tanh_(int a) {
  int id = push(nodes_[a].value.array().tanh().matrix());
  nodes_[id].backward = [this, id, a]() {
    nodes_[a].grad.array() +=
        nodes_[id].grad.array() * (1.0 - nodes_[id].value.array().square());
  };
  return id;
}

int Tape::relu(int a) {
  int id = push(nodes_[a].value.cwiseMax(0.0));
  nodes_[id].backward = [this, id, a]() {
    nodes_[a].grad.array() +=
        nodes_[id].grad.array() * (nodes_[a].value.array() > 0.0).cast<double>();
  };
  return id;
}

int Tape::sigmoid(int a) {
  Mat v = (1.0 / (1.0 + (-nodes_[a].value.array()).exp())).matrix();
  int id = push(std::move(v));
  nodes_[id].backward = [this, id, a]() {
    nodes_[a].grad.array() += nodes_[id].grad.array() *
                              nodes_[id].value.array() *
                              (1.0 - nodes_[id].value.array());
  };
  return id;
}

int Tape::layernorm_rows(int a, int gamma, int beta) {
  const Mat& x = nodes_[a].value;
  const long n = x.rows(), d = x.cols();
  Mat mu = x.rowwise().mean();
  Mat centered = x.colwise() - mu.col(0);
  Mat var = centered.array().square().rowwise().mean();
  Mat inv_sd = (var.array() + 1e-5).rsqrt();
  Mat xhat = centered.array().colwise() * inv_sd.col(0).array();
  Mat out = xhat;
  out.array().rowwise() *= nodes_[gamma].value.row(0).array();
  out.rowwise() += nodes_[beta].value.row(0);
  int id = push(std::move(out));
  // keep what backward needs
  auto xhat_p = std::make_shared<Mat>(std::move(xhat));
  auto inv_p = std::make_shared<Mat>(std::move(inv_sd));
  nodes_[id].backward = [this, id, a, gamma, beta, xhat_p, inv_p, n, d]() {
    const Mat& g = nodes_[id].grad;
    const Mat& gm = nodes_[gamma].value;
    nodes_[gamma].grad.row(0) +=
        (g.array() * xhat_p->array()).colwise().sum().matrix().row(0);
    nodes_[beta].grad.row(0) += g.colwise().sum();
    Mat gxhat = g;
    gxhat.array().rowwise() *= gm.row(0).array();
    // per-row: dx = inv_sd * (gxhat - mean(gxhat) - xhat * mean(gxhat*xhat))
    Mat m1 = gxhat.rowwise().mean();
    Mat m2 = (gxhat.array() * xhat_p->array()).rowwise().mean();
    Mat dx = gxhat;
    dx.colwise() -= m1.col(0);
    dx.array() -= xhat_p->array().colwise() * m2.col(0).array();
    dx.array().colwise() *= inv_p->col(0).array();
    nodes_[a].grad += dx;
  };
  return id;
}

int Tape::softmax_rows(int a, int addmask_node) {
  Mat logits = nodes_[a].value;
  if (addmask_node >= 0) logits += nodes_[addmask_node].value;
  Mat mx = logits.rowwise().maxCoeff();
  Mat e = (logits.colwise() - mx.col(0)).array().exp();
  Mat sum = e.rowwise().sum();
  Mat p = e.array().colwise() / sum.col(0).array();
  int id = push(std::move(p));
  nodes_[id].backward = [this, id, a]() {
    const Mat& p = nodes_[id].value;
    const Mat& g = nodes_[id].grad;
    Mat dot = (g.array() * p.array()).rowwise().sum();
    nodes_[a].grad.array() += p.array() * (g.array().colwise() - dot.col(0).array());
  };
  return id;
}

int Tape::log_softmax_rows(int a) {
  const Mat& x = nodes_[a].value;
  Mat mx = x.rowwise().maxCoeff();
  Mat sh = x.colwise() - mx.col(0);
  Mat lse = sh.array().exp().rowwise().sum().log();
  Mat out = sh.colwise() - lse.col(0);
  int id = push(std::move(out));
  nodes_[id].backward = [this, id, a]() {
    const Mat& g = nodes_[id].grad;
    Mat p = nodes_[id].value.array().exp();
    Mat rowsum = g.rowwise().sum();
    nodes_[a].grad.array() +=
        g.array() - p.array().colwise() * rowsum.col(0).array();
  };
  return id;
}

int Tape::gather_rows(const Mat& table, const std::vector<int>& rows,
                      Mat* grad_out) {
  Mat v(rows.size(), table.cols());
  for (size_t i = 0; i < rows.size(); ++i) v.row(i) = table.row(rows[i]);
  int id = push(std::move(v));
  auto rows_copy = std::make_shared<std::vector<int>>(rows);
  nodes_[id].backward = [this, id, grad_out, rows_copy]() {
    if (!grad_out) return;
    for (size_t i = 0; i < rows_copy->size(); ++i)
      grad_out->row((*rows_copy)[i]) += nodes_[id].grad.row(i);
  };
  return id;
}

int Tape::slice_rows(int a, int begin, int len) {
  int id = push(nodes_[a].value.middleRows(begin, len));
  nodes_[id].backward = [this, id, a, begin, len]() {
    nodes_[a].grad.middleRows(begin, len) += nodes_[id].grad;
  };
  return id;
}

int Tape::slice_cols(int a, int begin, int len) {
  int id = push(nodes_[a].value.middleCols(begin, len));
  nodes_[id].backward = [this, id, a, begin, len]() {
    nodes_[a].grad.middleCols(begin, len) += nodes_[id].grad;
  };
  return id;
}

int Tape::concat_cols(const std::vector<int>& parts) {
  long cols = 0;
  for (int p : parts) cols += nodes_[p].value.cols();
  Mat v(nodes_[parts[0]].value.rows(), cols);
  long at = 0;
  for (int p : parts) {
    v.middleCols(at, nodes_[p].value.cols()) = nodes_[p].value;
    at += nodes_[p].value.cols();
  }
  int id = push(std::move(v));
  auto parts_copy = std::make_shared<std::vector<int>>(parts);
  nodes_[id].backward = [this, id, parts_copy]() {
    long at = 0;
    for (int p : *parts_copy) {
      long c = nodes_[p].value.cols();
      nodes_[p].grad += nodes_[id].grad.middleCols(at, c);
      at += c;
    }
  };
  return id;
}

int Tape::concat_rows(const std::vector<int>& parts) {
  long rows = 0;
  for (int p : parts) rows += nodes_[p].value.rows();
  Mat v(rows, nodes_[parts[0]].value.cols());
  long at = 0;
  for (int p : parts) {
    v.middleRows(at, nodes_[p].value.rows()) = nodes_[p].value;
    at += nodes_[p].value.rows();
  }
  int id = push(std::move(v));
  auto parts_copy = std::make_shared<std::vector<int>>(parts);
  nodes_[id].backward = [this, id, parts_copy]() {
    long at = 0;
    for (int p : *parts_copy) {
      long r = nodes_[p].value.rows();
      nodes_[p].grad += nodes_[id].grad.middleRows(at, r);
      at += r;
    }
  };
  return id;
}

int Tape::pick(int a, int r, int c) {
  Mat v(1, 1);
  v(0, 0) = nodes_[a].value(r, c);
  int id = push(std::move(v));
  nodes_[id].backward = [this, id, a, r, c]() {
    nodes_[a].grad(r, c) += nodes_[id].grad(0, 0);
  };
  return id;
}

int Tape::neg(int a) { return scale(a, -1.0); }

int Tape::sum(const std::vector<int>& scalars) {
  Mat v(1, 1);
  v(0, 0) = 0;
  for (int s : scalars) v(0, 0) += nodes_[s].value(0, 0);
  int id = push(std::move(v));
  auto copy = std::make_shared<std::vector<int>>(scalars);
  nodes_[id].backward = [this, id, copy]() {
    for (int s : *copy) nodes_[s].grad(0, 0) += nodes_[id].grad(0, 0);
  };
  return id;
}

int Tape::softplus(int a) {
  // numerically stable log(1 + e^x)
  Mat v = nodes_[a].value.array().unaryExpr([](double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  int id = push(std::move(v));
  nodes_[id].backward = [this, id, a]() {
    nodes_[a].grad.array() +=
        nodes_[id].grad.array() *
        nodes_[a].value.array().unaryExpr(
            [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  };
  return id;
}

void Tape::backward(int loss) {
  nodes_[loss].grad.setOnes();
  for (int i = (int)nodes_.size() - 1; i >= 0; --i)
    if (nodes_[i].backward) nodes_[i].backward();
}

}  // namespace costflow
