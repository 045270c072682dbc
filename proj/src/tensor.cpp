#include "nlmda/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace nlmda {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  for (std::size_t e : shape) check(e > 0, "tensor extents must be positive");
  auto s = std::make_shared<Storage>();
  s->data.assign(shape_numel(shape), 0.0);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.s_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
  check(shape_numel(shape) == values.size(),
        "from_data: " + shape_str(shape) + " does not hold " +
            std::to_string(values.size()) + " values");
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->data = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::value() const {
  check(numel() == 1, "value(): tensor " + shape_str(shape()) + " is not scalar");
  return s_->data[0];
}

static std::size_t flat_index(const Shape& shape,
                              std::initializer_list<std::size_t> idx) {
  check(idx.size() == shape.size(), "at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    check(i < shape[axis], "at(): index out of range");
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return s_->data[flat_index(s_->shape, idx)];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return s_->data[flat_index(s_->shape, idx)];
}

Tensor& Tensor::set_requires_grad(bool v) {
  s_->requires_grad = v;
  return *this;
}

std::vector<double>& Tensor::grad() {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
  return s_->grad;
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> empty;
  return s_->grad.empty() ? empty : s_->grad;
}

void Tensor::zero_grad() {
  if (!s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  auto s = std::make_shared<Storage>();
  s->shape = s_->shape;
  s->data = s_->data;
  s->requires_grad = s_->requires_grad;
  return Tensor(std::move(s));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::record(const char* op, std::function<void()> back) {
  nodes_.push_back(Node{op, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
  check(loss.numel() == 1,
        "backward: loss must be scalar, got " + shape_str(loss.shape()));
  check(loss.node_id() >= 0 &&
            loss.node_id() < static_cast<int>(nodes_.size()),
        "backward: loss is not recorded on this tape");
  if (consumed_)
    throw std::logic_error("backward: tape already consumed");
  consumed_ = true;
  const_cast<Tensor&>(loss).grad()[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    nodes_[i].back();
  }
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace nlmda
