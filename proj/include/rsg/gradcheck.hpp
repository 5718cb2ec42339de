#pragma once

#include <functional>

#include "rsg/ops.hpp"

namespace rsg {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_leaf;
    int64_t worst_coord = -1;
    double analytic = 0.0, numeric = 0.0;
    bool pass = false;
};

// Central finite differences against tape gradients.
//
// `f` rebuilds a scalar loss from the current values of `leaves` on every
// call; the leaves must be requires-grad tensors bound to one tape. When
// `max_coords` >= 0 only that many coordinates per leaf are probed (chosen by
// `seed`), which keeps deep composites affordable.
//
// Relative error uses denominator max(|analytic|, |numeric|, 0.01): large
// enough to ride over finite-difference noise, small enough that a wrong
// backward rule on any meaningful coordinate lands far above tol.
template <typename S>
GradCheckReport gradcheck(const std::function<Tensor<S>()>& f,
                          std::vector<std::pair<std::string, Tensor<S>>> leaves, double step,
                          double tol, int64_t max_coords = -1, uint64_t seed = 0) {
    static_assert(std::is_floating_point_v<S>);
    if (step <= 0) throw ContractError("gradcheck: step must be positive");
    if (leaves.empty()) throw ContractError("gradcheck: no leaves");
    Tape<S>* tape = leaves[0].second.tape();
    if (!tape) throw ContractError("gradcheck: leaves must be bound to a tape");

    for (auto& [name, t] : leaves) t.zero_grad();
    Tensor<S> loss = f();
    if (loss.numel() != 1) throw ContractError("gradcheck: f must be scalar-valued");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericalError("gradcheck: non-finite loss");
    tape->backward(loss);

    std::vector<std::vector<S>> analytic(leaves.size());
    for (size_t i = 0; i < leaves.size(); ++i)
        analytic[i] = leaves[i].second.has_grad()
                          ? leaves[i].second.grad_view()
                          : std::vector<S>(static_cast<size_t>(leaves[i].second.numel()), S(0));

    auto eval = [&]() -> double {
        typename Tape<S>::NoGrad guard(*tape);
        Tensor<S> l = f();
        double v = static_cast<double>(l.item());
        if (!std::isfinite(v)) throw NumericalError("gradcheck: non-finite loss during probing");
        return v;
    };

    GradCheckReport rep;
    rep.pass = true;
    Rng pick(mix_seed(seed, 0xfdc1));
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor<S>& leaf = leaves[li].second;
        int64_t n = leaf.numel();
        std::vector<int64_t> coords;
        if (max_coords < 0 || max_coords >= n) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            for (int64_t i = 0; i < max_coords; ++i) coords.push_back(pick.uniform_int(0, n - 1));
        }
        for (int64_t c : coords) {
            S orig = leaf.values()[c];
            leaf.values()[c] = orig + static_cast<S>(step);
            double up = eval();
            leaf.values()[c] = orig - static_cast<S>(step);
            double dn = eval();
            leaf.values()[c] = orig;
            double num = (up - dn) / (2.0 * step);
            double ana = static_cast<double>(analytic[li][c]);
            double denom = std::max({std::abs(ana), std::abs(num), 0.01});
            double rel = std::abs(ana - num) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_leaf = leaves[li].first;
                rep.worst_coord = c;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace rsg
