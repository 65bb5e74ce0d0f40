#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mismatch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised for any shape or argument contract violation inside the engine.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

/// One value in the differentiation graph. Ops own their inputs through
/// `inputs`, so a graph lives exactly as long as its root is referenced.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward_fn;
  std::string op = "leaf";

  /// Allocates a zero gradient buffer on first use and returns it.
  std::vector<double>& grad_buffer();
};

/// Handle to a dense row-major float64 array that may take part in
/// reverse-mode differentiation. Copies share the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view. Only valid on leaves; mutating an op output would
  /// desynchronise it from the values its backward rule captured.
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  /// A new leaf holding a copy of the values; no gradient flows back.
  Tensor detach() const;
  /// Deep copy preserving requires_grad but detached from the graph.
  Tensor clone() const;

  const NodePtr& node() const { return node_; }
  const std::string& op() const;

 private:
  NodePtr node_;
};

/// Creates the output node of a custom op. `backward` is skipped and not
/// stored when none of the inputs require a gradient.
Tensor make_op(std::string name, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs, BackwardFn backward);

/// Topologically ordered view of every grad-requiring node reachable from a
/// root. Building it never mutates the graph.
class Graph {
 public:
  static Graph from(const Tensor& root);

  const std::vector<Node*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds the root gradient and runs every backward rule once, in reverse
  /// topological order. Gradients accumulate into existing buffers.
  void backward(const Tensor& root, std::span<const double> seed) const;

 private:
  std::vector<Node*> order_;
};

/// d(loss)/d(t) for every grad-requiring t reachable from a scalar loss.
void backward(const Tensor& loss);
/// Vector-Jacobian product from an arbitrary-shaped root.
void backward(const Tensor& root, std::span<const double> seed);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

enum class Activation { relu, sigmoid, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation kind);

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t stride = 1;

  std::size_t effective_extent() const { return dilation * (kernel - 1) + 1; }
  /// Output extent for an input extent, or throws if the kernel does not fit.
  std::size_t output_extent(std::size_t input_extent) const;
  /// Padding that keeps the spatial size at stride 1.
  static std::size_t same_padding(std::size_t kernel, std::size_t dilation) {
    return dilation * (kernel - 1) / 2;
  }
};

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
              const Tensor& bias);

Tensor apply_activation(const Tensor& input, Activation kind);
Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);

enum class ResampleMode { maxpool2, upsample2_nearest };
Tensor resample(const Tensor& input, ResampleMode mode);

/// Per-sample, per-channel spatial standardisation followed by affine gain
/// and shift of shape [C].
inline constexpr double kNormEpsilon = 1e-5;
Tensor normalize_features(const Tensor& input, const Tensor& gain, const Tensor& shift);

/// Per-pixel standardisation across the batch axis. Identity when N == 1.
Tensor standardize_over_batch(const Tensor& input, double epsilon = kNormEpsilon);

enum class MorphOp { dilate, erode };
/// Grayscale max (dilate) or min (erode) filter over a square window of side
/// 2*radius+1, per channel. Out-of-image taps are ignored. The gradient goes
/// to the first extremum in row-major window order.
Tensor morph_filter(const Tensor& input, MorphOp op, std::size_t radius);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Concatenates two [N,C,H,W] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Element-wise weighted sum reducing to a scalar, with fixed weights.
Tensor dot_with(const Tensor& a, std::span<const double> weights);

}  // namespace mismatch
