#include "dcav/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dcav/error.hpp"
#include "dcav/model.hpp"
#include "dcav/training.hpp"

namespace dcav::gradcheck {

bool SuiteReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_error: size mismatch");
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

namespace {

// Scalar objective: the output itself when scalar, else Σ out ∘ R.
Var<double> reduce(Tape<double>& tape, const Var<double>& out, const Tensor<double>& projection) {
  if (out.value().size() == 1) return out;
  return sum(mul(out, tape.constant(projection)));
}

Tensor<double> projection_for(const Shape& shape) {
  std::mt19937_64 rng(shape_size(shape) * 2654435761ULL + shape.size());
  return uniform_tensor<double>(shape, 1.0, rng);
}

}  // namespace

CheckResult check_function(const std::string& name, const Fn& fn,
                           const std::vector<Tensor<double>>& inputs, double h, double tolerance) {
  Tensor<double> projection;
  const auto evaluate = [&](const std::vector<Tensor<double>>& values, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const Tensor<double>& v : values) vars.push_back(tape.input(v));
    const Var<double> out = fn(tape, vars);
    if (projection.empty() && out.value().size() != 1) projection = projection_for(out.shape());
    const Var<double> loss = reduce(tape, out, projection);
    if (grads) {
      tape.backward(loss);
      for (const Var<double>& v : vars) grads->push_back(v.grad());
    }
    return loss.value()[0];
  };

  std::vector<Tensor<double>> analytic;
  evaluate(inputs, &analytic);
  double worst = 0;
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = work[k][i];
      work[k][i] = saved + h;
      const double up = evaluate(work, nullptr);
      work[k][i] = saved - h;
      const double down = evaluate(work, nullptr);
      work[k][i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic[k].data(), numeric));
  }
  return {name, worst, worst <= tolerance};
}

CheckResult check_parameters(const std::string& name, ParameterStore<double>& store,
                             const std::function<Var<double>(Tape<double>&)>& loss, double h,
                             double tolerance) {
  store.zero_grad();
  {
    Tape<double> tape;
    const Var<double> l = loss(tape);
    if (l.value().size() != 1) throw ShapeError("check_parameters: loss must be scalar");
    tape.backward(l);
  }
  const auto value_at = [&] {
    Tape<double> tape;
    return loss(tape).value()[0];
  };
  double worst = 0;
  for (auto& p : store) {
    std::vector<double> numeric(p->value().size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double saved = p->value()[i];
      p->value()[i] = saved + h;
      const double up = value_at();
      p->value()[i] = saved - h;
      const double down = value_at();
      p->value()[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(p->grad().data(), numeric));
  }
  store.zero_grad();
  return {name, worst, worst <= tolerance};
}

namespace {

model::ModelConfig tiny_config(model::Modality modality, model::Fusion fusion) {
  model::ModelConfig c;
  c.hidden = 4;
  c.embed = 3;
  c.video_dim = 5;
  c.audio_dim = 6;
  c.audio_proj = 4;
  c.vocab_size = 9;
  c.modality = modality;
  c.fusion = fusion;
  c.mutan_rank = 3;
  c.mutan_out_rank = 2;
  c.mutan_out = 3;
  c.max_caption_len = 6;
  c.mask_scale = 10;
  return c;
}

}  // namespace

SuiteReport run_suite(std::uint64_t seed, double tolerance) {
  SuiteReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  const auto rand = [&](Shape s, double bound = 1.0) { return uniform_tensor<double>(std::move(s), bound, rng); };
  const auto add_check = [&](const std::string& name, const Fn& fn, std::vector<Tensor<double>> inputs) {
    report.results.push_back(check_function(name, fn, inputs, 1e-5, tolerance));
  };
  using V = std::span<const Var<double>>;

  // Primitives.
  add_check("matmul", [](Tape<double>&, V v) { return matmul(v[0], v[1]); }, {rand({3, 4}), rand({4, 2})});
  add_check("transpose", [](Tape<double>&, V v) { return transpose(v[0]); }, {rand({3, 4})});
  add_check("add", [](Tape<double>&, V v) { return add(v[0], v[1]); }, {rand({2, 3}), rand({2, 3})});
  add_check("sub", [](Tape<double>&, V v) { return sub(v[0], v[1]); }, {rand({2, 3}), rand({2, 3})});
  add_check("mul", [](Tape<double>&, V v) { return mul(v[0], v[1]); }, {rand({2, 3}), rand({2, 3})});
  add_check("add_row", [](Tape<double>&, V v) { return add_row(v[0], v[1]); }, {rand({3, 4}), rand({1, 4})});
  add_check("scale", [](Tape<double>&, V v) { return scale(v[0], -1.7); }, {rand({2, 2})});
  add_check("sum", [](Tape<double>&, V v) { return sum(v[0]); }, {rand({3, 2})});
  add_check("concat_rows", [](Tape<double>&, V v) { return concat(v, 0); }, {rand({1, 3}), rand({2, 3})});
  add_check("concat_cols", [](Tape<double>&, V v) { return concat(v, 1); }, {rand({2, 1}), rand({2, 3})});
  add_check("slice_cols", [](Tape<double>&, V v) { return slice_cols(v[0], 1, 3); }, {rand({2, 4})});
  add_check("slice_rows", [](Tape<double>&, V v) { return slice_rows(v[0], 1, 3); }, {rand({4, 2})});
  add_check("reshape", [](Tape<double>&, V v) { return reshape(v[0], {3, 2}); }, {rand({2, 3})});
  add_check("sigmoid", [](Tape<double>&, V v) { return sigmoid(v[0]); }, {rand({2, 3}, 3.0)});
  add_check("tanh", [](Tape<double>&, V v) { return tanh(v[0]); }, {rand({2, 3}, 2.0)});
  add_check("softmax_rows", [](Tape<double>&, V v) { return softmax(v[0], 1); }, {rand({2, 4}, 2.0)});
  add_check("softmax_cols", [](Tape<double>&, V v) { return softmax(v[0], 0); }, {rand({3, 2}, 2.0)});
  for (std::size_t mode = 1; mode <= 3; ++mode) {
    const std::size_t extent = mode + 1;  // tensor is 2×3×4
    add_check("mode_product_" + std::to_string(mode),
              [mode](Tape<double>&, V v) { return mode_product(v[0], v[1], mode); },
              {rand({2, 3, 4}), rand({2, extent})});
  }
  add_check("cross_entropy",
            [](Tape<double>&, V v) {
              static const int targets[] = {2, 0, 3};
              return cross_entropy(v[0], std::span<const int>(targets));
            },
            {rand({3, 5}, 2.0)});
  add_check("l2", [](Tape<double>&, V v) { return l2(v[0], v[1]); }, {rand({1, 2}), rand({1, 2})});
  add_check("gather_rows",
            [](Tape<double>&, V v) {
              static const int ids[] = {1, 3, 1};
              return gather_rows(v[0], std::span<const int>(ids));
            },
            {rand({4, 3})});
  add_check("clamp",
            [](Tape<double>&, V v) {
              return clamp(v[0], Tensor<double>({1, 4}, -0.5), Tensor<double>({1, 4}, 0.5));
            },
            {Tensor<double>({1, 4}, {-0.9, -0.2, 0.3, 0.8})});
  add_check("soft_mask", [](Tape<double>&, V v) { return soft_mask(v[0], 8, 10.0); },
            {Tensor<double>({1, 2}, {0.45, 0.4})});
  add_check("weighted_mean", [](Tape<double>&, V v) { return weighted_mean(v[0], v[1]); },
            {Tensor<double>({1, 3}, {0.2, 0.9, 0.5}), rand({3, 2})});

  // Composite blocks with free inputs.
  add_check("caption_attention",
            [](Tape<double>& t, V v) { return model::attend(t, v[0], v[1], v[2]); },
            {rand({1, 3}), rand({3, 3}), rand({4, 3})});
  add_check("soft_mask_clip",
            [](Tape<double>& t, V v) { return model::clip_context(t, v[0], v[1], 10.0); },
            {Tensor<double>({1, 2}, {0.55, 0.35}), rand({8, 3})});
  add_check("multiplicative_mixture",
            [](Tape<double>& t, V v) { return model::multiplicative_mixture(t, v[0], v[1]); },
            {rand({1, 3}), rand({1, 3})});

  // Blocks with parameters: gradients w.r.t. inputs and w.r.t. parameters.
  {
    ParameterStore<double> store;
    const model::Gru<double> gru(store, "gru", 3, 4, rng);
    for (auto& p : store) p->value() = uniform_tensor<double>(p->value().shape(), 0.8, rng);
    add_check("gru_step_inputs", [&gru](Tape<double>& t, V v) { return gru.step(t, v[0], v[1]); },
              {rand({1, 3}), rand({1, 4})});
    const Tensor<double> x = rand({1, 3}), h = rand({1, 4}), r = rand({1, 4});
    report.results.push_back(check_parameters(
        "gru_step_params", store,
        [&](Tape<double>& t) { return sum(mul(gru.step(t, t.constant(x), t.constant(h)), t.constant(r))); },
        1e-5, tolerance));
    const Tensor<double> xs = rand({4, 3}), rs = rand({4, 4});
    report.results.push_back(check_parameters(
        "encode_sequence", store,
        [&](Tape<double>& t) { return sum(mul(gru.encode(t, t.constant(xs)).outputs, t.constant(rs))); },
        1e-5, tolerance));
  }
  {
    ParameterStore<double> store;
    const model::Linear<double> fc(store, "fc", 9, 3, rng);
    for (auto& p : store) p->value() = uniform_tensor<double>(p->value().shape(), 0.8, rng);
    add_check("attention_feature_fusion",
              [&fc](Tape<double>& t, V v) { return model::attention_feature_fusion(t, v, fc); },
              {rand({1, 3}), rand({1, 3}), rand({1, 3})});
    const Tensor<double> a = rand({1, 3}), b = rand({1, 3}), c = rand({1, 3}), r = rand({1, 9});
    report.results.push_back(check_parameters(
        "attention_feature_fusion_params", store,
        [&](Tape<double>& t) {
          const std::vector<Var<double>> parts{t.constant(a), t.constant(b), t.constant(c)};
          return sum(mul(model::attention_feature_fusion<double>(t, parts, fc), t.constant(r)));
        },
        1e-5, tolerance));
  }
  {
    ParameterStore<double> store;
    const model::Linear<double> fc(store, "fc", 6, 3, rng);
    for (auto& p : store) p->value() = uniform_tensor<double>(p->value().shape(), 0.8, rng);
    add_check("multimodal_context_fusion",
              [&fc](Tape<double>& t, V v) { return model::multimodal_context_fusion(t, v[0], v[1], fc); },
              {rand({1, 3}), rand({1, 3})});
    const Tensor<double> a = rand({1, 3}), b = rand({1, 3}), r = rand({1, 9});
    report.results.push_back(check_parameters(
        "multimodal_context_fusion_params", store,
        [&](Tape<double>& t) {
          return sum(mul(model::multimodal_context_fusion(t, t.constant(a), t.constant(b), fc), t.constant(r)));
        },
        1e-5, tolerance));
  }
  {
    ParameterStore<double> store;
    model::MutanParams<double> p;
    p.w_video = &store.create("w_video", rand({3, 2}));
    p.w_audio = &store.create("w_audio", rand({3, 2}));
    p.core = &store.create("core", rand({2, 2, 3}));
    p.w_out = &store.create("w_out", rand({3, 4}));
    add_check("mutan_fusion", [&p](Tape<double>& t, V v) { return model::mutan_fusion(t, v[0], v[1], p); },
              {rand({1, 3}), rand({1, 3})});
    const Tensor<double> a = rand({1, 3}), b = rand({1, 3}), r = rand({1, 4});
    report.results.push_back(check_parameters(
        "mutan_fusion_params", store,
        [&](Tape<double>& t) {
          return sum(mul(model::mutan_fusion(t, t.constant(a), t.constant(b), p), t.constant(r)));
        },
        1e-5, tolerance));
  }

  // Whole-model objectives on a tiny configuration.
  const Tensor<double> video = rand({6, 5}), audio = rand({7, 6});
  const std::vector<int> caption{1, 4, 7, 5, 2};
  for (model::Fusion fusion : {model::Fusion::mixture, model::Fusion::context, model::Fusion::mutan}) {
    model::Model<double> m(tiny_config(model::Modality::both, fusion), seed + 1);
    for (auto& p : m.parameters()) p->value() = uniform_tensor<double>(p->value().shape(), 0.6, rng);
    const std::string tag = model::to_string(fusion);
    report.results.push_back(check_parameters(
        "caption_loss_" + tag, m.parameters(),
        [&](Tape<double>& t) {
          const auto ctx = m.encode_contexts(t, &video, &audio);
          return m.caption_loss(t, ctx, t.constant(Tensor<double>({1, 2}, {0.4, 0.5})), caption);
        },
        1e-5, tolerance));
    add_check("caption_loss_segment_" + tag,
              [&](Tape<double>& t, V v) {
                const auto ctx = m.encode_contexts(t, &video, &audio);
                return m.caption_loss(t, ctx, v[0], caption);
              },
              {Tensor<double>({1, 2}, {0.4, 0.5})});
  }
  {
    model::Model<double> m(tiny_config(model::Modality::both, model::Fusion::mutan), seed + 2);
    for (auto& p : m.parameters()) p->value() = uniform_tensor<double>(p->value().shape(), 0.6, rng);
    const Tensor<double> r = rand({1, 15});
    report.results.push_back(check_parameters(
        "localizer", m.parameters(),
        [&](Tape<double>& t) {
          const auto ctx = m.encode_contexts(t, &video, &audio);
          const auto out = m.localize(t, ctx, caption);
          return add(sum(mul(out.logits, t.constant(r))), sum(out.segment));
        },
        1e-5, tolerance));
    report.results.push_back(check_parameters(
        "cycle_loss", m.parameters(),
        [&](Tape<double>& t) {
          const auto ctx = m.encode_contexts(t, &video, &audio);
          return training::cycle_step(m, t, ctx, caption, 0.1, 0.1).total;
        },
        1e-5, tolerance));
  }
  for (model::Modality modality : {model::Modality::video, model::Modality::audio}) {
    model::Model<double> m(tiny_config(modality, model::Fusion::mutan), seed + 3);
    for (auto& p : m.parameters()) p->value() = uniform_tensor<double>(p->value().shape(), 0.6, rng);
    report.results.push_back(check_parameters(
        "cycle_loss_" + model::to_string(modality), m.parameters(),
        [&](Tape<double>& t) {
          const auto ctx = m.encode_contexts(t, &video, &audio);
          return training::cycle_step(m, t, ctx, caption, 0.1, 0.1).total;
        },
        1e-5, tolerance));
  }
  return report;
}

}  // namespace dcav::gradcheck
