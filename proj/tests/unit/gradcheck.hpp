#pragma once

// Analytic vs central-difference gradients for a tiny generator feeding a
// tiny discriminator. Shared by the unit suite and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "earsr/networks.hpp"
#include "earsr/nn/ops.hpp"

namespace gradcheck {

struct Worst {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct Report {
  std::size_t checked = 0;
  Worst worst;
};

// |a - n| / max(|a|, |n|, floor): the floor keeps parameters whose gradient is
// zero by construction (biases feeding an instance norm) from turning
// finite-difference round-off into a large relative error.
inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Report run(double h = 1e-5, double floor = 1e-6) {
  using namespace earsr;
  using namespace earsr::nn;
  networks::GeneratorConfig gc;
  gc.base_width = 4;
  gc.n_res_blocks = 1;
  gc.dropout_rate = 0.5;
  networks::DiscriminatorConfig dc;
  dc.base_width = 4;
  dc.n_layers = 1;
  networks::Generator gen(gc);
  networks::Discriminator disc(dc);
  Rng init(2024);
  gen.init_weights(init);
  disc.init_weights(init);
  // Larger weights than the 0.02 training init so every path carries signal.
  for (auto* list : {&gen.params(), &disc.params()})
    for (auto& p : list->items())
      for (double& v : p.var->value.data) v = 0.3 * init.normal();

  Tensor x(2, 1, 8, 8), target(2, 1, 8, 8);
  for (double& v : x.data) v = init.uniform();
  for (double& v : target.data) v = init.uniform();
  const Var xv = constant(x), tv = constant(target);

  auto loss = [&]() {
    Rng masks(99);  // identical dropout masks on every evaluation
    const Var fake = gen.forward(xv, networks::Mode::Stochastic, &masks);
    return weighted_sum({{mean_abs_diff(fake, tv), 10.0},
                         {mean_log(disc.forward(tv), 1e-7), 1.0},
                         {mean_log1m(disc.forward(fake), 1e-7), 1.0}});
  };

  networks::ParamList all;
  all.extend("gen", gen.params());
  all.extend("disc", disc.params());
  all.zero_grad();
  backward(loss());

  Report rep;
  for (const auto& p : all.items()) {
    auto& data = p.var->value.data;
    const auto& grad = p.var->grad.data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      double plus, minus;
      {
        NoGradGuard ng;
        data[i] = keep + h;
        plus = scalar(loss());
        data[i] = keep - h;
        minus = scalar(loss());
      }
      data[i] = keep;
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = grad.empty() ? 0.0 : grad[i];
      const double err = relative_error(analytic, numeric, floor);
      ++rep.checked;
      if (err > rep.worst.rel_error || rep.checked == 1) rep.worst = {p.name, i, analytic, numeric, err};
    }
  }
  return rep;
}

}  // namespace gradcheck
