#include "msinfluence/autodiff.hpp"

#include <cmath>
#include <cstddef>

namespace msi::ad {

namespace {

// Output offsets for each requested segment, in request order.
std::vector<std::pair<std::string, std::size_t>> wrt_offsets(const ParamVector& params,
                                                             std::span<const std::string> wrt) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t cursor = 0;
  for (const std::string& name : wrt) {
    out.emplace_back(name, cursor);
    cursor += params.segment(name).length;
  }
  return out;
}

template <typename T>
void check_finite_loss(const Tape<T>& tape, int out_node) {
  if (!is_finite(tape.value(out_node))) {
    throw NumericError("differentiation error: non-finite loss value");
  }
}

// Copies leaf adjoints (value or tangent part) into the flat output laid out
// per `wrt`. Leaves for segments outside `wrt` are ignored; segments in `wrt`
// the loss never touched stay zero.
template <typename T>
void collect_adjoints(const Tape<T>& tape, const BuildCtx<T>& ctx, const ParamVector& params,
                      std::span<const std::string> wrt, bool tangent_part,
                      std::vector<double>& out) {
  auto offsets = wrt_offsets(params, wrt);
  out.assign(params.total_length(wrt), 0.0);
  for (const LeafInfo& leaf : ctx.leaves()) {
    const std::pair<std::string, std::size_t>* slot = nullptr;
    for (const auto& entry : offsets) {
      if (entry.first == leaf.segment) {
        slot = &entry;
        break;
      }
    }
    if (!slot) continue;
    auto adj = tape.adjoint(leaf.node);
    const std::size_t base = slot->second + leaf.sub_offset;
    for (std::size_t i = 0; i < leaf.count; ++i) {
      double g = tangent_part ? tangent_of(adj[i]) : value_of(adj[i]);
      if (!std::isfinite(g)) {
        throw NumericError("differentiation error: non-finite derivative in segment '" +
                           leaf.segment + "'");
      }
      out[base + i] = g;
    }
  }
}

}  // namespace

double value(const LossFunction& loss, const ParamVector& params, const Batch& batch) {
  Tape<double> tape;
  BuildCtx<double> ctx(tape, params);
  int out = loss.build_graph(ctx, batch);
  check_finite_loss(tape, out);
  return tape.value(out);
}

double value_and_grad(const LossFunction& loss, const ParamVector& params, const Batch& batch,
                      std::span<const std::string> wrt, std::vector<double>& grad_out) {
  Tape<double> tape;
  BuildCtx<double> ctx(tape, params);
  int out = loss.build_graph(ctx, batch);
  check_finite_loss(tape, out);
  tape.backward(out);
  collect_adjoints(tape, ctx, params, wrt, /*tangent_part=*/false, grad_out);
  return tape.value(out);
}

std::vector<double> grad(const LossFunction& loss, const ParamVector& params, const Batch& batch,
                         std::span<const std::string> wrt) {
  std::vector<double> g;
  value_and_grad(loss, params, batch, wrt, g);
  return g;
}

std::vector<double> hvp(const LossFunction& loss, const ParamVector& params, const Batch& batch,
                        std::span<const std::string> wrt, std::span<const double> v) {
  if (v.size() != params.total_length(wrt)) {
    throw std::invalid_argument("hvp: direction length does not match wrt segments");
  }
  Tape<Dual> tape;
  BuildCtx<Dual> ctx(tape, params);
  std::size_t cursor = 0;
  for (const std::string& name : wrt) {
    const std::size_t len = params.segment(name).length;
    ctx.set_tangent(name, v.subspan(cursor, len));
    cursor += len;
  }
  int out = loss.build_graph(ctx, batch);
  check_finite_loss(tape, out);
  tape.backward(out);
  std::vector<double> result;
  collect_adjoints(tape, ctx, params, wrt, /*tangent_part=*/true, result);
  return result;
}

std::vector<double> cross_hvp(const LossFunction& loss, const ParamVector& params,
                              const Batch& batch, const std::string& row_seg,
                              const std::string& col_seg, std::span<const double> v) {
  if (v.size() != params.segment(col_seg).length) {
    throw std::invalid_argument("cross_hvp: direction length does not match col segment");
  }
  Tape<Dual> tape;
  BuildCtx<Dual> ctx(tape, params);
  ctx.set_tangent(col_seg, v);
  int out = loss.build_graph(ctx, batch);
  check_finite_loss(tape, out);
  tape.backward(out);
  std::vector<double> result;
  const std::string wrt[] = {row_seg};
  collect_adjoints(tape, ctx, params, wrt, /*tangent_part=*/true, result);
  return result;
}

}  // namespace msi::ad
