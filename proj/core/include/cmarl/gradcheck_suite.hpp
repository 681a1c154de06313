#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmarl::gradcheck {

struct BlockResult {
    std::string name;
    double max_err = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

/// Blocks in dependency order: ops, ss2d, bchfm, layer, head, policy,
/// logprob, critic, critic_loss, policy_loss.
std::vector<std::string> block_names();

/// Max relative error over `trials` random instances. `inject_fault`
/// corrupts the backward pass of the final node so the block must fail;
/// used to exercise the failure path.
BlockResult run_block(const std::string& name, double eps, int trials, std::uint64_t seed,
                      bool inject_fault = false);

/// Runs every block; `fault_block` (optional) is corrupted as above.
std::vector<BlockResult> run_all(double eps, int trials, std::uint64_t seed,
                                 const std::string& fault_block = "");

}  // namespace cmarl::gradcheck
