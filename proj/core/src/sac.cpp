#include <cmarl/sac.hpp>

#include <cmarl/checkpoint.hpp>
#include <cmarl/geometry.hpp>
#include <cmarl/trace.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace cmarl::sac {

namespace fs = std::filesystem;
using diff::Tape;
using env::Vec2;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
    if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(Transition t) {
    if (store_.size() < capacity_) {
        store_.push_back(std::move(t));
    } else {
        store_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t k) {
    if (store_.empty()) throw std::logic_error("ReplayBuffer: empty");
    std::uniform_int_distribution<std::size_t> pick(0, store_.size() - 1);
    std::vector<const Transition*> out(k);
    for (auto& p : out) p = &store_[pick(rng_)];
    return out;
}

void SacConfig::set(const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto i = [&] { return std::stoi(value); };
    if (key == "gamma_discount") gamma_discount = d();
    else if (key == "tau") tau = d();
    else if (key == "batch_k") batch_k = i();
    else if (key == "alpha0") alpha0 = d();
    else if (key == "beta") beta = d();
    else if (key == "lambda1") lambda1 = d();
    else if (key == "lambda2") lambda2 = d();
    else if (key == "w0") w0 = d();
    else if (key == "w1") w1 = d();
    else if (key == "w2") w2 = d();
    else if (key == "w3") w3 = d();
    else if (key == "delta") delta = d();
    else if (key == "n_points") n_points = i();
    else if (key == "horizon_t") horizon_t = i();
    else if (key == "epochs") epochs = i();
    else if (key == "lr_start") lr_start = d();
    else if (key == "lr_end") lr_end = d();
    else if (key == "replay_capacity") replay_capacity = std::stoll(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "d_h") d_h = i();
    else if (key == "layers") layers = i();
    else if (key == "window") window = i();
    else if (key == "head_hidden") head_hidden = i();
    else if (key == "critic_hidden") critic_hidden = i();
    else if (key == "k_neighbors") k_neighbors = i();
    else if (key == "embed_dim") embed_dim = i();
    else if (key == "feature_radius") feature_radius = d();
    else if (key == "update_rounds") update_rounds = i();
    else if (key == "weight_decay") weight_decay = d();
    else if (key == "train_shift_frac") train_shift_frac = d();
    else if (key == "train_scale_frac") train_scale_frac = d();
    else if (key == "warmup_episodes") warmup_episodes = i();
    else if (key == "actor_lr_scale") actor_lr_scale = d();
    else if (key == "demo_period") demo_period = i();
    else if (key == "explore_period") explore_period = i();
    else throw std::invalid_argument("SacConfig: unknown key '" + key + "'");
}

SacConfig SacConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("SacConfig: cannot open " + path);
    SacConfig cfg;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        cfg.set(key, value);
    }
    return cfg;
}

void SacConfig::write(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("SacConfig: cannot write " + path);
    os.precision(17);
    os << "gamma_discount = " << gamma_discount << "\n";
    os << "tau = " << tau << "\n";
    os << "batch_k = " << batch_k << "\n";
    os << "alpha0 = " << alpha0 << "\n";
    os << "beta = " << beta << "\n";
    os << "lambda1 = " << lambda1 << "\n";
    os << "lambda2 = " << lambda2 << "\n";
    os << "w0 = " << w0 << "\n";
    os << "w1 = " << w1 << "\n";
    os << "w2 = " << w2 << "\n";
    os << "w3 = " << w3 << "\n";
    os << "delta = " << delta << "\n";
    os << "n_points = " << n_points << "\n";
    os << "horizon_t = " << horizon_t << "\n";
    os << "epochs = " << epochs << "\n";
    os << "lr_start = " << lr_start << "\n";
    os << "lr_end = " << lr_end << "\n";
    os << "replay_capacity = " << replay_capacity << "\n";
    os << "seed = " << seed << "\n";
    os << "d_h = " << d_h << "\n";
    os << "layers = " << layers << "\n";
    os << "window = " << window << "\n";
    os << "head_hidden = " << head_hidden << "\n";
    os << "critic_hidden = " << critic_hidden << "\n";
    os << "k_neighbors = " << k_neighbors << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "feature_radius = " << feature_radius << "\n";
    os << "update_rounds = " << update_rounds << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    os << "train_shift_frac = " << train_shift_frac << "\n";
    os << "train_scale_frac = " << train_scale_frac << "\n";
    os << "warmup_episodes = " << warmup_episodes << "\n";
    os << "actor_lr_scale = " << actor_lr_scale << "\n";
    os << "demo_period = " << demo_period << "\n";
    os << "explore_period = " << explore_period << "\n";
}

std::size_t SacConfig::state_dim(int grid_channels) const {
    return 2 + 25 * static_cast<std::size_t>(grid_channels) +
           static_cast<std::size_t>(k_neighbors) * static_cast<std::size_t>(embed_dim);
}

env::EnvConfig SacConfig::env_config() const {
    env::EnvConfig e;
    e.k_neighbors = k_neighbors;
    e.embed_dim = embed_dim;
    e.feature_radius = feature_radius;
    e.delta = delta;
    e.horizon = horizon_t;
    e.weights = {w0, w1, w2, w3};
    return e;
}

policy::PolicyConfig SacConfig::policy_config(int grid_channels) const {
    policy::PolicyConfig p;
    p.state_dim = state_dim(grid_channels);
    p.d_h = static_cast<std::size_t>(d_h);
    p.layers = static_cast<std::size_t>(layers);
    p.window = window;
    p.head_hidden = static_cast<std::size_t>(head_hidden);
    return p;
}

double eram_alpha(double alpha0, double beta, double c_index) {
    if (alpha0 <= 0.0 || beta < 0.0 || c_index < 0.0)
        throw std::invalid_argument("eram_alpha: bad arguments");
    return alpha0 / (1.0 + beta * c_index);
}

double cosine_lr(double lr_start, double lr_end, std::int64_t step, std::int64_t total) {
    if (total <= 0) return lr_start;
    const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total),
                                   0.0, 1.0);
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

Trainer::Trainer(const SacConfig& config)
    : cfg(config),
      actor(policy::PolicyParams::init(cfg.policy_config(), splitmix64(cfg.seed ^ 0xAC70ULL))),
      critics(critic::TwinCritics::init(cfg.state_dim() + 2,
                                        static_cast<std::size_t>(cfg.critic_hidden),
                                        splitmix64(cfg.seed ^ 0xC217ULL))),
      actor_opt(0.9, 0.999, 1e-8, cfg.weight_decay),
      critic_opt(0.9, 0.999, 1e-8, cfg.weight_decay) {}

void Trainer::save_checkpoint(const std::string& path, int epoch) {
    std::vector<std::pair<std::string, Tensor>> items;
    items.emplace_back("meta.epoch", Tensor::scalar(epoch));
    items.emplace_back("meta.state_dim", Tensor::scalar(static_cast<double>(cfg.state_dim())));
    auto collect = [&items](const std::string& prefix) {
        return [&items, prefix](const std::string& name, Tensor& t) {
            items.emplace_back(prefix + name, t);
        };
    };
    actor.visit(collect("actor."));
    critics.q1.visit(collect("critic1."));
    critics.q2.visit(collect("critic2."));
    critics.target1.visit(collect("target1."));
    critics.target2.visit(collect("target2."));
    actor_opt.visit_state(collect("opt_actor."));
    critic_opt.visit_state(collect("opt_critic."));
    diff::save_tensors(path, items);
}

int Trainer::load_checkpoint(const std::string& path, bool with_optimizer) {
    auto named = diff::load_tensors(path);
    auto meta = named.find("meta.state_dim");
    if (meta == named.end() ||
        static_cast<std::size_t>(meta->second[0]) != cfg.state_dim())
        throw diff::CheckpointError("checkpoint mismatch: state_dim differs or missing");
    auto assign = [&named](const std::string& prefix) {
        return [&named, prefix](const std::string& name, Tensor& t) {
            auto it = named.find(prefix + name);
            if (it == named.end())
                throw diff::CheckpointError("checkpoint mismatch: missing " + prefix + name);
            if (!(it->second.shape() == t.shape()))
                throw diff::CheckpointError("checkpoint mismatch: shape of " + prefix + name);
            t = it->second;
        };
    };
    actor.visit(assign("actor."));
    critics.q1.visit(assign("critic1."));
    critics.q2.visit(assign("critic2."));
    critics.target1.visit(assign("target1."));
    critics.target2.visit(assign("target2."));
    if (with_optimizer) {
        auto sub = [&named](const std::string& prefix) {
            std::map<std::string, Tensor> out;
            for (const auto& [k, v] : named)
                if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
            return out;
        };
        actor_opt.restore_state(sub("opt_actor."));
        critic_opt.restore_state(sub("opt_critic."));
    }
    auto ep = named.find("meta.epoch");
    return ep == named.end() ? 0 : static_cast<int>(ep->second[0]);
}

namespace {

Tensor batch_states(const std::vector<const Transition*>& batch, bool next) {
    const auto& first = next ? batch[0]->s_next : batch[0]->s;
    Tensor m = Tensor::zeros({batch.size(), first.size()});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& v = next ? batch[i]->s_next : batch[i]->s;
        for (std::size_t j = 0; j < v.size(); ++j) m.at(i, j) = v[j];
    }
    return m;
}

Tensor batch_actions_normalized(const std::vector<const Transition*>& batch, double delta) {
    Tensor a = Tensor::zeros({batch.size(), 2});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        a.at(i, 0) = batch[i]->ax / delta;
        a.at(i, 1) = batch[i]->ay / delta;
    }
    return a;
}

}  // namespace

TargetBatch compute_target(const std::vector<const Transition*>& batch, Trainer& tr,
                           double alpha, std::mt19937_64& rng) {
    if (batch.empty()) throw std::invalid_argument("compute_target: empty batch");
    const std::size_t k = batch.size();
    const Tensor s_next = batch_states(batch, true);
    Tape tape;
    const auto out = policy::policy_forward_single(s_next, tr.actor, tape);
    Tensor noise = Tensor::zeros({k, 2});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : noise.data()) v = nd(rng);
    const auto sampled = policy::squashed_sample(out.mu, out.sigma, noise, tr.cfg.delta);
    const Tensor& a_next = sampled.action->value;
    const Tensor& logpi = sampled.logpi->value;

    Tensor input = Tensor::zeros({k, s_next.cols() + 2});
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < s_next.cols(); ++j) input.at(i, j) = s_next.at(i, j);
        input.at(i, s_next.cols()) = a_next.at(i, 0) / tr.cfg.delta;
        input.at(i, s_next.cols() + 1) = a_next.at(i, 1) / tr.cfg.delta;
    }
    const Var in_var = diff::constant(input);
    const Tensor q1 = critic::critic_forward(tr.critics.target1, in_var, tape)->value;
    const Tensor q2 = critic::critic_forward(tr.critics.target2, in_var, tape)->value;

    TargetBatch tb;
    tb.y = Tensor::zeros({k, 1});
    for (std::size_t i = 0; i < k; ++i) {
        if (batch[i]->terminal) {
            tb.y.at(i, 0) = batch[i]->r;
        } else {
            const double qmin = std::min(q1.at(i, 0), q2.at(i, 0));
            tb.y.at(i, 0) =
                batch[i]->r + tr.cfg.gamma_discount * (qmin - alpha * logpi[i]);
        }
    }
    return tb;
}

CriticLosses critic_loss(const std::vector<const Transition*>& batch, const Tensor& y,
                         Trainer& tr, Tape& tape) {
    if (batch.empty()) throw std::invalid_argument("critic_loss: empty batch");
    const Tensor s = batch_states(batch, false);
    const Tensor a = batch_actions_normalized(batch, tr.cfg.delta);
    const Var input = diff::concat({diff::constant(s), diff::constant(a)}, 1);
    const Var target = diff::constant(y);
    auto mse = [&](critic::CriticParams& p) {
        const Var q = critic::critic_forward(p, input, tape);
        const Var diff_v = diff::sub(target, q);
        return diff::mean_all(diff::mul(diff_v, diff_v));
    };
    return {mse(tr.critics.q1), mse(tr.critics.q2)};
}

Var policy_loss(const std::vector<const Transition*>& batch, Trainer& tr, double alpha,
                std::mt19937_64& rng, Tape& tape) {
    if (batch.empty()) throw std::invalid_argument("policy_loss: empty batch");
    const std::size_t k = batch.size();
    const Tensor s = batch_states(batch, false);
    const auto out = policy::policy_forward_single(s, tr.actor, tape);
    Tensor noise = Tensor::zeros({k, 2});
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : noise.data()) v = nd(rng);
    const auto sampled = policy::squashed_sample(out.mu, out.sigma, noise, tr.cfg.delta);
    const Var input = diff::concat(
        {diff::constant(s), diff::scale(sampled.action, 1.0 / tr.cfg.delta)}, 1);
    const Var q1 = critic::critic_forward(tr.critics.q1, input, tape);
    const Var q2 = critic::critic_forward(tr.critics.q2, input, tape);
    const Var qmin = diff::sum_axis(diff::minimum(q1, q2), 1);  // K
    return diff::mean_all(diff::sub(diff::scale(sampled.logpi, alpha), qmin));
}

namespace {

struct LoadedEntry {
    const synth::CorpusEntry* entry;
    geom::BinaryMask mask;
    env::FeatureGrid grid;
};

std::vector<LoadedEntry> load_split(const synth::Manifest& manifest, const std::string& split) {
    std::vector<LoadedEntry> out;
    for (const auto& e : manifest.entries) {
        if (e.split != split) continue;
        LoadedEntry le;
        le.entry = &e;
        le.mask = synth::load_mask_pgm((fs::path(manifest.dir) / e.mask_path).string());
        le.grid = synth::load_grid((fs::path(manifest.dir) / e.grid_path).string());
        out.push_back(std::move(le));
    }
    return out;
}

env::EpisodeState make_episode(const LoadedEntry& le, const geom::BoundingBox& box,
                               const SacConfig& cfg, int n_points, int horizon) {
    env::EnvConfig ec = cfg.env_config();
    ec.horizon = horizon;
    geom::Contour init = geom::uniform_resample(geom::octagon_from_bbox(box),
                                                static_cast<std::size_t>(n_points));
    env::EpisodeState ep(std::move(init), le.mask, le.grid, ec);
    ep.init_reward = env::reward_init(box, le.mask, ec.weights);
    return ep;
}

std::vector<Vec2> boundary_pixel_centers(const geom::BinaryMask& mask) {
    const geom::BinaryMask b = metrics::boundary_pixels(mask);
    std::vector<Vec2> out;
    for (int r = 0; r < b.height; ++r)
        for (int c = 0; c < b.width; ++c)
            if (b.at(c, r)) out.push_back({c + 0.5, r + 0.5});
    return out;
}

// Warmup behavior: seed the replay buffer with boundary-seeking demonstrations
// (even episodes) and uniform random exploration (odd episodes). The critic
// needs action-diverse data with differentiated returns before the policy
// update can follow a meaningful value gradient.
std::vector<Vec2> warmup_actions(const env::EpisodeState& ep,
                                 const std::vector<Vec2>& boundary, bool demo,
                                 double delta, std::mt19937_64& rng) {
    const std::size_t n = ep.contour.size();
    std::vector<Vec2> acts(n);
    if (demo && !boundary.empty()) {
        std::uniform_real_distribution<double> noise(-delta / 4.0, delta / 4.0);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& p = ep.contour[i];
            double best = std::numeric_limits<double>::max();
            Vec2 target = p;
            for (const Vec2& q : boundary) {
                const double d2 = (q.x - p.x) * (q.x - p.x) + (q.y - p.y) * (q.y - p.y);
                if (d2 < best) { best = d2; target = q; }
            }
            const double dist = std::sqrt(best);
            const double step_len = std::min(dist, delta);
            Vec2 a{0.0, 0.0};
            if (dist > 1e-9) {
                a.x = (target.x - p.x) / dist * step_len;
                a.y = (target.y - p.y) / dist * step_len;
            }
            acts[i] = env::clamp_action({a.x + noise(rng), a.y + noise(rng)}, delta);
        }
    } else {
        std::uniform_real_distribution<double> uniform(-delta / 2.0, delta / 2.0);
        for (std::size_t i = 0; i < n; ++i)
            acts[i] = env::clamp_action({uniform(rng), uniform(rng)}, delta);
    }
    return acts;
}

std::vector<diff::AdamW::Entry> grad_entries(
    Tape& tape, const std::vector<std::pair<std::string, Tensor*>>& named) {
    std::vector<diff::AdamW::Entry> out;
    out.reserve(named.size());
    for (const auto& [name, t] : named) out.push_back({name, t, tape.grad_of(*t)});
    return out;
}

std::vector<std::pair<std::string, Tensor*>> collect_named(policy::PolicyParams& p) {
    std::vector<std::pair<std::string, Tensor*>> out;
    p.visit([&out](const std::string& n, Tensor& t) { out.emplace_back("actor." + n, &t); });
    return out;
}

std::vector<std::pair<std::string, Tensor*>> collect_named(critic::TwinCritics& c) {
    std::vector<std::pair<std::string, Tensor*>> out;
    c.q1.visit([&out](const std::string& n, Tensor& t) { out.emplace_back("critic1." + n, &t); });
    c.q2.visit([&out](const std::string& n, Tensor& t) { out.emplace_back("critic2." + n, &t); });
    return out;
}

}  // namespace

TrainResult train(const SacConfig& cfg, const synth::Manifest& manifest,
                  const std::string& out_dir, bool resume) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const std::string ckpt_path = (fs::path(out_dir) / "ckpt_latest.bin").string();
    const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
    cfg.write((fs::path(out_dir) / "resolved.cfg").string());

    auto corpus = load_split(manifest, "train");
    if (corpus.empty()) throw std::invalid_argument("train: empty train split");

    Trainer tr(cfg);
    int start_epoch = 0;
    if (resume && fs::exists(ckpt_path)) {
        start_epoch = tr.load_checkpoint(ckpt_path, true);
    } else {
        tr.save_checkpoint(ckpt_path, 0);
        std::ofstream log(log_path, std::ios::trunc);
        log << "epoch,miou,mdice,mboundf,alpha_mean,critic_loss,policy_loss\n";
    }

    ReplayBuffer buffer(static_cast<std::size_t>(cfg.replay_capacity),
                        splitmix64(cfg.seed ^ 0xB0FFULL));
    std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x5EEDULL) + static_cast<std::uint64_t>(start_epoch));

    const std::int64_t updates_per_episode =
        static_cast<std::int64_t>(cfg.horizon_t) * cfg.update_rounds;
    const std::int64_t total_updates =
        static_cast<std::int64_t>(cfg.epochs) * static_cast<std::int64_t>(corpus.size()) *
        updates_per_episode;
    std::int64_t global_update =
        static_cast<std::int64_t>(start_epoch) * static_cast<std::int64_t>(corpus.size()) *
        updates_per_episode;

    TrainResult result;
    result.checkpoint_path = ckpt_path;
    result.log_path = log_path;

    const double W = corpus[0].mask.width, H = corpus[0].mask.height;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::int64_t episode_index =
        static_cast<std::int64_t>(start_epoch) * static_cast<std::int64_t>(corpus.size());

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double ep_miou = 0.0, ep_mdice = 0.0, ep_mboundf = 0.0, ep_alpha = 0.0;
        double ep_closs = 0.0, ep_ploss = 0.0;
        std::int64_t n_updates = 0, n_alpha = 0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const LoadedEntry& le = corpus[order[oi]];
            geom::BoundingBox box = le.entry->bbox;
            if (cfg.train_shift_frac > 0.0 || cfg.train_scale_frac > 0.0) {
                box = geom::perturb_bbox(box, cfg.train_shift_frac, cfg.train_scale_frac,
                                         rng());
            }
            env::EpisodeState ep = make_episode(le, box, cfg, cfg.n_points, cfg.horizon_t);
            const std::size_t n = ep.contour.size();
            const bool warmup = episode_index < cfg.warmup_episodes;
            // After warmup, demonstration and random episodes keep refreshing the
            // replay buffer so the critic's value landscape does not drift toward
            // whatever narrow action distribution the policy currently emits. The
            // actor still updates on every post-warmup episode.
            const bool demo_ep =
                warmup ? episode_index % 2 == 0
                       : cfg.demo_period > 0 && episode_index % cfg.demo_period == 0;
            const bool explore_ep =
                warmup ? episode_index % 2 == 1
                       : cfg.explore_period > 0 &&
                             episode_index % cfg.explore_period == cfg.explore_period / 2;
            const bool scripted = demo_ep || explore_ep;
            const std::vector<Vec2> boundary =
                demo_ep ? boundary_pixel_centers(le.mask) : std::vector<Vec2>{};
            double ep_return = 0.0;
            env::StepResult last;
            for (int t = 0; t < cfg.horizon_t; ++t) {
                const double c_index = geom::consistency_index(
                    ep.contour, {cfg.lambda1, cfg.lambda2});
                const double alpha = eram_alpha(cfg.alpha0, cfg.beta, c_index);
                ep_alpha += alpha;
                ++n_alpha;

                const auto states = env::build_states(ep);
                std::vector<Vec2> actions(n);
                if (scripted) {
                    actions = warmup_actions(ep, boundary, demo_ep, cfg.delta, rng);
                } else {
                    const Tensor s_mat = policy::states_to_matrix(states, W, H);
                    Tape rollout_tape;
                    const auto out = policy::policy_forward(s_mat, tr.actor, rollout_tape);
                    const auto sampled = policy::sample_action(
                        out.mu->value, out.sigma->value, cfg.delta, rng);
                    for (std::size_t i = 0; i < n; ++i) {
                        actions[i] = env::clamp_action(
                            {sampled.actions.at(i, 0), sampled.actions.at(i, 1)}, cfg.delta);
                    }
                }
                last = env::step(ep, actions);
                const auto next_states = env::build_states(ep);
                for (std::size_t i = 0; i < n; ++i) {
                    Transition trn;
                    trn.s = states[i].flatten(W, H);
                    trn.ax = actions[i].x;
                    trn.ay = actions[i].y;
                    trn.r = last.rewards[i];
                    trn.s_next = next_states[i].flatten(W, H);
                    trn.terminal = last.done;
                    buffer.push(std::move(trn));
                    ep_return += last.rewards[i];
                }

                const bool lr_live = cfg.lr_start > 0.0 || cfg.lr_end > 0.0;
                if (lr_live && buffer.size() >= static_cast<std::size_t>(cfg.batch_k)) {
                    for (int round = 0; round < cfg.update_rounds; ++round) {
                        const auto batch = buffer.sample(
                            static_cast<std::size_t>(cfg.batch_k));
                        const auto target = compute_target(batch, tr, alpha, rng);
                        const double lr = cosine_lr(cfg.lr_start, cfg.lr_end, global_update,
                                                    total_updates);
                        {
                            Tape tape;
                            const auto losses = critic_loss(batch, target.y, tr, tape);
                            const Var total = diff::add(losses.l1, losses.l2);
                            if (!std::isfinite(total->value[0]))
                                throw NanAbort("NaN critic loss at update " +
                                               std::to_string(global_update));
                            diff::backward(total);
                            tr.critic_opt.step(
                                lr, grad_entries(tape, collect_named(tr.critics)));
                            ep_closs += 0.5 * total->value[0];
                        }
                        if (!warmup) {
                            Tape tape;
                            const Var lpi = policy_loss(batch, tr, alpha, rng, tape);
                            if (!std::isfinite(lpi->value[0]))
                                throw NanAbort("NaN policy loss at update " +
                                               std::to_string(global_update));
                            diff::backward(lpi);
                            tr.actor_opt.step(lr * cfg.actor_lr_scale,
                                              grad_entries(tape, collect_named(tr.actor)));
                            ep_ploss += lpi->value[0];
                        }
                        critic::soft_update_all(tr.critics, cfg.tau);
                        ++global_update;
                        ++n_updates;
                    }
                }
            }
            ep_miou += last.miou;
            ep_mdice += last.mdice;
            ep_mboundf += last.mboundf;
            result.episode_returns.push_back(ep_return / static_cast<double>(n));
            ++result.episodes;
            ++episode_index;
        }

        for (const auto& [name, t] : collect_named(tr.actor))
            for (double v : t->data())
                if (!std::isfinite(v))
                    throw NanAbort("non-finite parameter " + name + " after epoch " +
                                   std::to_string(epoch));

        const double eps_count = static_cast<double>(order.size());
        std::ofstream log(log_path, std::ios::app);
        log << (epoch + 1) << ',' << ep_miou / eps_count << ',' << ep_mdice / eps_count << ','
            << ep_mboundf / eps_count << ',' << (n_alpha ? ep_alpha / n_alpha : 0.0) << ','
            << (n_updates ? ep_closs / n_updates : 0.0) << ','
            << (n_updates ? ep_ploss / n_updates : 0.0) << '\n';
        tr.save_checkpoint(ckpt_path, epoch + 1);
    }
    return result;
}

metrics::MetricReport evaluate(const std::string& checkpoint_path, const SacConfig& cfg,
                               const synth::Manifest& manifest, const EvalOptions& opts) {
    Trainer tr(cfg);
    tr.load_checkpoint(checkpoint_path, false);
    const auto corpus = load_split(manifest, "eval");
    if (corpus.empty()) throw std::invalid_argument("evaluate: empty eval split");
    const int n_points = opts.n_points > 0 ? opts.n_points : cfg.n_points;
    const int horizon = opts.horizon > 0 ? opts.horizon : cfg.horizon_t;
    const double W = corpus[0].mask.width, H = corpus[0].mask.height;

    std::vector<geom::BinaryMask> preds, gts;
    for (const auto& le : corpus) {
        geom::BoundingBox box = le.entry->bbox;
        if (opts.shift_frac > 0.0 || opts.scale_frac > 0.0) {
            box = geom::perturb_bbox(
                box, opts.shift_frac, opts.scale_frac,
                splitmix64(opts.perturb_seed ^ static_cast<std::uint64_t>(le.entry->id)));
        }
        env::EpisodeState ep = make_episode(le, box, cfg, n_points, horizon);
        env::PolicyFn policy_fn = [&](const std::vector<env::AgentState>& states) {
            const Tensor s_mat = policy::states_to_matrix(states, W, H);
            Tape tape;
            const auto out = policy::policy_forward(s_mat, tr.actor, tape);
            const Tensor a = policy::deterministic_action(out.mu->value, cfg.delta);
            std::vector<Vec2> actions(states.size());
            for (std::size_t i = 0; i < states.size(); ++i)
                actions[i] = {a.at(i, 0), a.at(i, 1)};
            return actions;
        };
        const auto res = env::run_episode(std::move(ep), policy_fn, opts.trace);
        if (opts.trace && !opts.trace_dir.empty()) {
            fs::create_directories(opts.trace_dir);
            const std::string base =
                (fs::path(opts.trace_dir) / ("episode_" + std::to_string(le.entry->id)))
                    .string();
            env::write_trace_svg(res.trace, base + ".svg");
            env::write_trace_csv(res.trace, base + ".csv");
        }
        preds.push_back(geom::rasterize(res.final_contour, le.mask.width, le.mask.height));
        gts.push_back(le.mask);
    }
    return metrics::report(preds, gts);
}

metrics::MetricReport baseline_report(const SacConfig& cfg, const synth::Manifest& manifest,
                                      const EvalOptions& opts) {
    const auto corpus = load_split(manifest, "eval");
    if (corpus.empty()) throw std::invalid_argument("baseline_report: empty eval split");
    const int n_points = opts.n_points > 0 ? opts.n_points : cfg.n_points;
    std::vector<geom::BinaryMask> preds, gts;
    for (const auto& le : corpus) {
        geom::BoundingBox box = le.entry->bbox;
        if (opts.shift_frac > 0.0 || opts.scale_frac > 0.0) {
            box = geom::perturb_bbox(
                box, opts.shift_frac, opts.scale_frac,
                splitmix64(opts.perturb_seed ^ static_cast<std::uint64_t>(le.entry->id)));
        }
        const geom::Contour init = geom::uniform_resample(
            geom::octagon_from_bbox(box), static_cast<std::size_t>(n_points));
        preds.push_back(geom::rasterize(init, le.mask.width, le.mask.height));
        gts.push_back(le.mask);
    }
    return metrics::report(preds, gts);
}

}  // namespace cmarl::sac
