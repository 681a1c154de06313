#pragma once

#include <cmarl/diffcore.hpp>

#include <cstdint>
#include <functional>
#include <string>

namespace cmarl::critic {

using diff::Tape;
using diff::Tensor;
using diff::Var;

/// 3-layer perceptron over the concatenated flattened agent state and the
/// action pre-normalized by delta into [-1, 1].
struct CriticParams {
    Tensor w1, b1;
    Tensor w2, b2;
    Tensor w3, b3;

    static CriticParams init(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng);
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
};

/// Twin online critics plus their target copies.
struct TwinCritics {
    CriticParams q1, q2;
    CriticParams target1, target2;

    static TwinCritics init(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);
};

/// input is K x (state_dim + 2); returns K x 1.
Var critic_forward(CriticParams& p, const Var& input, Tape& tape);

/// target <- tau * online + (1 - tau) * target, elementwise.
void soft_update(const CriticParams& online, CriticParams& target, double tau);
void soft_update_all(TwinCritics& critics, double tau);

}  // namespace cmarl::critic
