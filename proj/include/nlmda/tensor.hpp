#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace nlmda {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// throws std::invalid_argument when cond is false
void check(bool cond, const std::string& msg);

// Dense row-major f64 tensor. Copies are shallow (shared storage); use
// clone() for an independent snapshot. Gradient buffer is allocated lazily
// and always matches the data shape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }
  std::size_t extent(std::size_t axis) const { return s_->shape[axis]; }

  double* data() { return s_->data.data(); }
  const double* data() const { return s_->data.data(); }
  std::vector<double>& vec() { return s_->data; }
  const std::vector<double>& vec() const { return s_->data; }

  // scalar access; requires numel() == 1
  double value() const;

  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return !s_->grad.empty(); }
  // allocates a zeroed buffer on first use
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  int node_id() const { return s_->node_id; }
  void set_node_id(int id) { s_->node_id = id; }

  // deep copy, detached from any tape; keeps requires_grad, drops grad
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty: absent
    bool requires_grad = false;
    int node_id = -1;
  };
  std::shared_ptr<Storage> s_;

  explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}
};

// Reverse-mode tape. Construction activates it for the current thread
// (stack discipline); ops record backward closures while a tape is active
// and at least one operand requires gradients. backward() replays the
// closures exactly once, in reverse recorded order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // seeds d(loss)=1 and accumulates into .grad() of all reachable inputs;
  // loss must be scalar and recorded on this tape
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

  // returns the node id
  int record(const char* op, std::function<void()> back);

 private:
  struct Node {
    const char* op;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// true when a tape is active and any listed tensor wants gradients
bool grad_enabled(std::initializer_list<const Tensor*> inputs);

}  // namespace nlmda
