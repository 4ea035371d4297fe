#pragma once

#include "seq2align/autodiff.hpp"
#include "seq2align/model.hpp"
#include "seq2align/rng.hpp"
#include "seq2align/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace gradcheck {

using seq2align::Graph;
using seq2align::Parameter;
using seq2align::Var;

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries that are both
/// essentially zero from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Result {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients of `build` (returning a 1x1 loss) with central
/// differences for every entry of every parameter.
inline Result check(std::vector<Parameter*> params, const std::function<Var(Graph&)>& build, double eps = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  auto eval = [&] {
    Graph g;
    return g.value(build(g))(0, 0);
  };
  Result r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + eps;
      const double up = eval();
      p->value[i] = keep - eps;
      const double down = eval();
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      r.max_relative_error = std::max(r.max_relative_error, relative_error(p->gradient[i], numeric));
      ++r.checked;
    }
  }
  return r;
}

/// A tiny model of the given widths with random weights, including the biases.
inline seq2align::ModelParameters random_model(std::uint64_t seed, std::size_t content_tokens = 3,
                                               std::size_t width = 3) {
  seq2align::ModelShape s;
  s.source_vocab = s.target_vocab = seq2align::Vocabulary::reserved_count + content_tokens;
  s.embed = width;
  s.encoder_hidden = width;
  s.decoder_hidden = width + 1;
  s.attention = width;
  s.readout = width;
  seq2align::ModelParameters m(s);
  seq2align::Rng rng(seed);
  const auto set = m.parameters();
  for (auto* p : set.items())
    for (auto& v : p->value.values()) v = 1.6 * rng.uniform() - 0.8;
  return m;
}

/// Finite-difference check of the teacher-forced sentence loss on one batch.
inline Result check_sentence_loss(seq2align::ModelParameters& model, const seq2align::Batch& batch,
                                  double eps = 1e-5) {
  auto set = model.parameters();
  std::vector<Parameter*> params(set.items().begin(), set.items().end());
  return check(params,
               [&](Graph& g) {
                 const auto bound = seq2align::bind(g, model);
                 return seq2align::sentence_loss(g, bound, batch);
               },
               eps);
}

}  // namespace gradcheck
