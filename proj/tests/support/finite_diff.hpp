#pragma once

// Central-difference gradient oracle in double precision. Independent of the
// tape's backward closures: it only ever evaluates forward values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mimco/params.hpp"
#include "mimco/tensor.hpp"

namespace mimco::testing {

inline constexpr double kFdStep = 1e-3;

// Relative error per tensor: ‖analytic − numeric‖₂ / max(‖analytic‖₂,
// ‖numeric‖₂); 0 when both vanish. The worst tensor is reported.
struct GradReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;  // tensors

  void add(const std::string& where, const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0, worst_abs = -1.0;
    std::size_t worst_i = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double d = analytic[i] - numeric[i];
      diff += d * d;
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
      if (std::abs(d) > worst_abs) {
        worst_abs = std::abs(d);
        worst_i = i;
      }
    }
    const double denom = std::sqrt(std::max(na, nn));
    const double rel = denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
    if (checked++ == 0 || rel > max_rel) {
      max_rel = rel;
      std::ostringstream os;
      os << where << " rel " << rel << ", largest gap at [" << worst_i << "]: analytic " << analytic[worst_i]
         << " vs numeric " << numeric[worst_i];
      worst = os.str();
    }
  }
};

struct Input {
  Shape shape;
  std::vector<double> data;
};

// Uniform in [−scale, scale].
inline Input random_input(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Input in{shape, std::vector<double>(numel(shape))};
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : in.data) v = u(rng);
  return in;
}

using TapeFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline double eval_scalar(const std::vector<Input>& inputs, const TapeFn& f) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.shape, in.data));
  return f(tape, leaves).item();
}

// f must build a scalar from the leaves it is given.
inline GradReport check_gradients(std::vector<Input> inputs, const TapeFn& f, double h = kFdStep) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.shape, in.data));
  auto loss = f(tape, leaves);
  tape.backward(loss);
  GradReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = tape.grad(leaves[k]);
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
      const double orig = inputs[k].data[i];
      inputs[k].data[i] = orig + h;
      const double up = eval_scalar(inputs, f);
      inputs[k].data[i] = orig - h;
      const double down = eval_scalar(inputs, f);
      inputs[k].data[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    rep.add("input" + std::to_string(k), analytic, numeric);
  }
  return rep;
}

using ModelFn = std::function<Var<double>(Binder<double>&, const ModelParams<double>&)>;

// Checks every parameter element that took part in the graph; parameters the
// loss never touched must have exactly zero numeric gradient too.
inline GradReport check_model_gradients(ModelParams<double> params, const ModelFn& f, double h = kFdStep) {
  auto value = [&]() {
    Tape<double> tape;
    Binder<double> bind(tape);
    return f(bind, params).item();
  };
  Tape<double> tape;
  Binder<double> bind(tape);
  auto loss = f(bind, params);
  tape.backward(loss);
  GradReport rep;
  for (auto* p : params.list()) {
    const auto analytic = bind.grad(*p);
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double orig = p->data[i];
      p->data[i] = orig + h;
      const double up = value();
      p->data[i] = orig - h;
      const double down = value();
      p->data[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    rep.add(p->name, analytic, numeric);
  }
  return rep;
}

}  // namespace mimco::testing
