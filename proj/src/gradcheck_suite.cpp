#include "emovad/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "emovad/gradcheck.hpp"
#include "emovad/ops.hpp"
#include "emovad/pipeline.hpp"

namespace emovad::check {

using namespace emovad::grad;

namespace {

using Builder = std::function<Var<double>(Graph<double>&)>;

Tensor<double> gaussian(std::mt19937_64& rng, Dims dims, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor<double> t(std::move(dims));
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

// Fixed non-uniform linear read-out so every output entry matters.
Var<double> probe(Var<double> y) {
  Tensor<double> w(y.dims());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * double(i) + 0.3);
  return sum(hadamard(y, y.graph->constant(std::move(w))));
}

Var<double> faulty_identity(Var<double> x) {
  return x.graph->emit(x.value(), {x}, [x](Graph<double>& g, std::span<const double> adj) {
    auto in = g.adjoint(x);
    for (std::size_t i = 0; i < adj.size(); ++i) in[i] += 1.5 * adj[i];
  });
}

template <typename Params>
std::vector<Tensor<double>*> tensors_of(Params& p) {
  std::vector<Tensor<double>*> out;
  p.visit([&](const std::string&, Tensor<double>& t) { out.push_back(&t); });
  return out;
}

struct Runner {
  const SuiteOptions& opts;
  std::vector<CheckOutcome> results;

  void run(const std::string& name, const Builder& f, std::vector<Tensor<double>*> inputs, std::size_t coords = 0) {
    GradCheckOptions o;
    o.max_coords_per_input = coords;
    o.seed = opts.seed;
    o.step = opts.step;
    auto wrapped = [&](Graph<double>& g) {
      auto y = f(g);
      return opts.inject_fault ? faulty_identity(y) : y;
    };
    auto r = grad_check(wrapped, inputs, o);
    results.push_back({name, r.max_rel_error, r.coords_checked, r.worst, r.max_rel_error <= opts.tolerance});
  }
};

}  // namespace

std::vector<CheckOutcome> run_gradcheck_suite(const SuiteOptions& opts) {
  Runner R{opts, {}};
  std::mt19937_64 rng(opts.seed);

  // Primitives.
  {
    auto a = gaussian(rng, {3, 4}), b = gaussian(rng, {4, 5});
    R.run("matmul", [&](Graph<double>& g) { return probe(matmul(g.param(a), g.param(b))); }, {&a, &b});
  }
  {
    auto x = gaussian(rng, {3, 9}), w = gaussian(rng, {4, 3, 3}), b = gaussian(rng, {4});
    R.run("conv1d", [&](Graph<double>& g) { return probe(conv1d(g.param(x), g.param(w), g.param(b))); },
          {&x, &w, &b});
  }
  for (std::size_t axis : {0u, 1u}) {
    auto x = gaussian(rng, {4, 5});
    R.run("softmax/axis" + std::to_string(axis),
          [&](Graph<double>& g) { return probe(softmax(g.param(x), axis)); }, {&x});
  }
  {
    auto x = gaussian(rng, {4, 6});
    R.run("leaky_relu", [&](Graph<double>& g) { return probe(leaky_relu(g.param(x), 0.01)); }, {&x});
    R.run("relu", [&](Graph<double>& g) { return probe(relu(g.param(x))); }, {&x});
  }
  {
    auto a = gaussian(rng, {4, 6}), b = gaussian(rng, {4, 6}), m = gaussian(rng, {4, 1});
    R.run("hadamard", [&](Graph<double>& g) { return probe(hadamard(g.param(a), g.param(b))); }, {&a, &b});
    R.run("hadamard/broadcast", [&](Graph<double>& g) { return probe(hadamard(g.param(a), g.param(m))); },
          {&a, &m});
  }
  {
    auto x = gaussian(rng, {3, 9});
    R.run("mean_pool", [&](Graph<double>& g) { return probe(mean_pool(g.param(x), 2, 2)); }, {&x});
  }
  {
    auto z = gaussian(rng, {5, 3});
    std::vector<int> labels{0, 2, 1, 1, 0};
    R.run("cross_entropy",
          [&](Graph<double>& g) { return cross_entropy(softmax(g.param(z), 1), labels); }, {&z});
  }
  {
    auto x = gaussian(rng, {3, 5}), b = gaussian(rng, {5});
    R.run("transpose", [&](Graph<double>& g) { return probe(transpose(g.param(x))); }, {&x});
    R.run("reshape", [&](Graph<double>& g) { return probe(reshape(g.param(x), {5, 3})); }, {&x});
    R.run("add_bias", [&](Graph<double>& g) { return probe(add_bias(g.param(x), g.param(b))); }, {&x, &b});
    R.run("column", [&](Graph<double>& g) { return probe(column(g.param(x), 2)); }, {&x});
    R.run("scale", [&](Graph<double>& g) { return probe(scale(g.param(x), -1.7)); }, {&x});
  }

  // Blocks, at D = 8 and T = 10.
  const std::size_t D = 8, T = 10;
  auto init = pipeline::make_params(nn::init_params(opts.seed, D)).cast<double>();
  // Off-uniform featurizers and unsaturated VAD outputs.
  for (auto* f : {&init.feat_vad.logits, &init.feat_ser.logits})
    for (auto& v : f->storage()) v = std::normal_distribution<double>(0.0, 0.5)(rng);
  auto stack = gaussian(rng, {nn::kNumLayers, T, D});
  auto feats = gaussian(rng, {T, D});
  std::vector<int> frame_labels(T);
  for (std::size_t t = 0; t < T; ++t) frame_labels[t] = (t / 3) % 2;

  {
    auto& logits = init.feat_vad.logits;
    R.run("block/featurizer",
          [&](Graph<double>& g) { return probe(nn::featurizer_forward(g.param(stack), init.feat_vad)); },
          {&logits, &stack});
  }
  {
    auto inputs = tensors_of(init.vad);
    inputs.push_back(&feats);
    R.run("block/vad",
          [&](Graph<double>& g) {
            return cross_entropy(nn::vad_forward(g.param(feats), init.vad).probs, frame_labels);
          },
          inputs, opts.sampled_coords);
  }
  {
    auto h = gaussian(rng, {T, 6}), u = gaussian(rng, {6});
    R.run("block/attention_pool",
          [&](Graph<double>& g) { return probe(nn::self_attention_pool(g.param(h), g.param(u))); }, {&h, &u});
  }
  {
    auto inputs = tensors_of(init.ser);
    inputs.push_back(&feats);
    const int label[] = {2};
    R.run("block/ser",
          [&](Graph<double>& g) { return cross_entropy(nn::ser_forward(g.param(feats), init.ser), label); },
          inputs, opts.sampled_coords);
  }
  {
    auto m = gaussian(rng, {T, 1});
    R.run("block/apply_mask",
          [&](Graph<double>& g) { return probe(nn::apply_mask(g.param(feats), g.param(m))); }, {&feats, &m});
  }

  // End-to-end SER loss through the soft mask, every parameter group.
  {
    std::vector<Tensor<double>*> inputs;
    init.visit([&](pipeline::Group, const std::string&, Tensor<double>& t) { inputs.push_back(&t); });
    R.run("pipeline/soft_mask_ser_loss",
          [&](Graph<double>& g) {
            auto trace = pipeline::forward(g, stack, init, pipeline::Condition::kFtBoth, nn::MaskMode::kSoft);
            return pipeline::ser_loss(trace, 1);
          },
          inputs, opts.sampled_coords);
  }
  return R.results;
}

}  // namespace emovad::check
