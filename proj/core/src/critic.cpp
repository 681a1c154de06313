#include <cmarl/critic.hpp>

#include <cmath>
#include <stdexcept>

namespace cmarl::critic {

using namespace cmarl::diff;

CriticParams CriticParams::init(std::size_t input_dim, std::size_t hidden,
                                std::mt19937_64& rng) {
    CriticParams p;
    p.w1 = randn({input_dim, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(input_dim)));
    p.b1 = Tensor::zeros({hidden});
    p.w2 = randn({hidden, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.b2 = Tensor::zeros({hidden});
    p.w3 = randn({hidden, 1}, rng, 0.01);
    p.b3 = Tensor::zeros({1});
    return p;
}

void CriticParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
    fn("w3", w3);
    fn("b3", b3);
}

TwinCritics TwinCritics::init(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    TwinCritics c;
    c.q1 = CriticParams::init(input_dim, hidden, rng);
    c.q2 = CriticParams::init(input_dim, hidden, rng);
    c.target1 = c.q1;
    c.target2 = c.q2;
    return c;
}

Var critic_forward(CriticParams& p, const Var& input, Tape& tape) {
    if (input->value.cols() != p.w1.rows())
        throw std::invalid_argument("critic_forward: input width " +
                                    input->value.shape_str() + " vs w1 " + p.w1.shape_str());
    Var h = tanh_op(add(matmul(input, tape.param(p.w1)), tape.param(p.b1)));
    h = tanh_op(add(matmul(h, tape.param(p.w2)), tape.param(p.b2)));
    return add(matmul(h, tape.param(p.w3)), tape.param(p.b3));
}

void soft_update(const CriticParams& online, CriticParams& target, double tau) {
    if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: bad tau");
    auto blend = [tau](const Tensor& on, Tensor& tg) {
        for (std::size_t i = 0; i < tg.size(); ++i)
            tg[i] = tau * on[i] + (1.0 - tau) * tg[i];
    };
    blend(online.w1, target.w1);
    blend(online.b1, target.b1);
    blend(online.w2, target.w2);
    blend(online.b2, target.b2);
    blend(online.w3, target.w3);
    blend(online.b3, target.b3);
}

void soft_update_all(TwinCritics& critics, double tau) {
    soft_update(critics.q1, critics.target1, tau);
    soft_update(critics.q2, critics.target2, tau);
}

}  // namespace cmarl::critic
