#include "ivr/datasets.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ivr {

namespace {

constexpr std::string_view kMagic = "ivr-dataset";

template <typename T>
bool parse_number(std::string_view token, T& out) {
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
    return ec == std::errc() && ptr == token.data() + token.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

GridPosition parse_position(std::string_view value, std::size_t line) {
    const auto comma = value.find(',');
    GridPosition p;
    if (comma == std::string_view::npos || !parse_number(value.substr(0, comma), p.x) ||
        !parse_number(value.substr(comma + 1), p.y))
        throw ParseError(fmt::format("bad position '{}'", value), line);
    return p;
}

}  // namespace

Vector uniform_nonterminal_starts(const TabularMDP& mdp) {
    Vector dist = Vector::Zero(mdp.n_states);
    for (Index s = 0; s < mdp.n_states; ++s)
        if (!mdp.terminal[static_cast<std::size_t>(s)]) dist[s] = 1.0;
    const double total = dist.sum();
    if (total == 0.0) throw InvalidArgument("MDP has no non-terminal state");
    return dist / total;
}

OfflineDataset collect(const TabularMDP& mdp, const Policy& behavior, const CollectOptions& options) {
    if (options.cap < 1) throw InvalidArgument("collect: cap must be at least 1");
    if (options.n_traj < 0) throw InvalidArgument("collect: negative trajectory count");
    const Vector& starts = options.start_dist.size() > 0 ? options.start_dist : mdp.initial_dist;
    if (starts.size() != mdp.n_states) throw InvalidArgument("collect: start distribution size");

    OfflineDataset data;
    data.meta.n_states = mdp.n_states;
    data.meta.n_actions = mdp.n_actions;
    data.meta.gamma = mdp.gamma;
    data.meta.policy = options.policy_name;
    data.meta.seed = options.seed;
    if (mdp.grid) {
        data.meta.goal = mdp.grid->positions[static_cast<std::size_t>(mdp.grid->goal_state)];
        data.meta.minimal = mdp.grid->minimal_position;
    }
    data.transitions.reserve(static_cast<std::size_t>(options.n_traj) * options.cap);

    Rng rng(options.seed);
    for (int traj = 0; traj < options.n_traj; ++traj) {
        Index s = sample_discrete(rng, starts);
        for (int t = 0; t < options.cap && !mdp.terminal[static_cast<std::size_t>(s)]; ++t) {
            const Index a = sample_discrete(rng, behavior.probs.row(s));
            const Index next = sample_discrete(rng, mdp.transition.row(mdp.row(s, a)));
            const bool done = mdp.terminal[static_cast<std::size_t>(next)];
            data.transitions.push_back({s, a, mdp.reward(s, a), next, done});
            s = next;
        }
    }
    return data;
}

EmpiricalModel empirical_model(const OfflineDataset& dataset) {
    if (dataset.empty()) throw InvalidArgument("empirical_model: empty dataset");
    const Index S = dataset.meta.n_states;
    const Index A = dataset.meta.n_actions;
    EmpiricalModel m;
    m.n_states = S;
    m.n_actions = A;
    m.gamma = dataset.meta.gamma;
    m.counts.setZero(S, A);
    m.mu_hat = Matrix::Zero(S, A);
    m.t_hat = Matrix::Zero(S * A, S);
    m.r_hat = Matrix::Zero(S, A);
    m.visited.assign(static_cast<std::size_t>(S), false);
    m.terminal.assign(static_cast<std::size_t>(S), false);
    m.state_frequency = Vector::Zero(S);

    for (const Transition& t : dataset.transitions) {
        if (t.s < 0 || t.s >= S || t.a < 0 || t.a >= A || t.s_next < 0 || t.s_next >= S)
            throw InvalidArgument("empirical_model: transition ids out of range");
        m.counts(t.s, t.a) += 1;
        m.t_hat(t.s * A + t.a, t.s_next) += 1.0;
        m.r_hat(t.s, t.a) += t.r;
        m.visited[static_cast<std::size_t>(t.s)] = true;
        if (t.done) m.terminal[static_cast<std::size_t>(t.s_next)] = true;
        m.state_frequency[t.s] += 1.0;
    }
    for (Index s = 0; s < S; ++s) {
        const auto state_count = static_cast<double>(m.counts.row(s).sum());
        for (Index a = 0; a < A; ++a) {
            const auto n = static_cast<double>(m.counts(s, a));
            if (n == 0.0) continue;
            m.mu_hat(s, a) = n / state_count;
            m.t_hat.row(s * A + a) /= n;
            m.r_hat(s, a) /= n;
        }
    }
    m.state_frequency /= static_cast<double>(dataset.size());
    return m;
}

OfflineDataset mix(const OfflineDataset& expert, const OfflineDataset& random, double expert_ratio,
                   std::size_t total, std::uint64_t seed) {
    if (!(expert_ratio >= 0.0 && expert_ratio <= 1.0))
        throw InvalidArgument("mix: expert ratio must lie in [0, 1]");
    const auto n_expert = static_cast<std::size_t>(std::floor(expert_ratio * static_cast<double>(total) + 0.5));
    const std::size_t n_random = total - n_expert;
    if (n_expert > expert.size() || n_random > random.size())
        throw InvalidArgument(fmt::format("mix: need {} expert and {} random transitions, have {} and {}",
                                          n_expert, n_random, expert.size(), random.size()));
    Rng rng(seed);
    auto draw = [&rng](const OfflineDataset& source, std::size_t n, std::vector<Transition>& out) {
        std::vector<std::size_t> idx(source.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        shuffle_in_place(rng, idx);
        for (std::size_t i = 0; i < n; ++i) out.push_back(source.transitions[idx[i]]);
    };
    OfflineDataset out;
    out.meta = expert.size() > 0 ? expert.meta : random.meta;
    out.meta.policy = "mixed";
    out.meta.seed = seed;
    out.meta.extra["expert_ratio"] = fmt::format("{}", expert_ratio);
    out.meta.extra["expert_transitions"] = fmt::format("{}", n_expert);
    out.transitions.reserve(total);
    draw(expert, n_expert, out.transitions);
    draw(random, n_random, out.transitions);
    shuffle_in_place(rng, out.transitions);
    return out;
}

double normalized_goal_distance(GridPosition p, GridPosition goal, GridPosition minimal) {
    auto sq = [](GridPosition a, GridPosition b) {
        const double dx = a.x - b.x;
        const double dy = a.y - b.y;
        return dx * dx + dy * dy;
    };
    const double max_dis = sq(goal, minimal);
    if (max_dis == 0.0) throw InvalidArgument("goal coincides with the minimal position");
    return sq(p, minimal) / max_dis;
}

OfflineDataset distance_discard(const OfflineDataset& dataset, const GridLayout& grid,
                                double hardness, std::uint64_t seed) {
    if (!(hardness >= 0.0)) throw InvalidArgument("distance_discard: hardness must be >= 0");
    const GridPosition goal = grid.positions[static_cast<std::size_t>(grid.goal_state)];
    Rng rng(seed);
    OfflineDataset out;
    out.meta = dataset.meta;
    out.meta.extra["hardness"] = fmt::format("{}", hardness);
    for (const Transition& t : dataset.transitions) {
        const double dis = normalized_goal_distance(grid.positions[static_cast<std::size_t>(t.s)], goal,
                                                    grid.minimal_position);
        // One draw per transition regardless of hardness keeps levels comparable.
        const double u = uniform01(rng);
        const double threshold = dis * hardness;
        if (threshold == 0.0 || u > threshold) out.transitions.push_back(t);
    }
    return out;
}

std::string to_text(const OfflineDataset& dataset) {
    const DatasetMeta& m = dataset.meta;
    std::string out = fmt::format("# {} n={} states={} actions={} gamma={} policy={} seed={}", kMagic,
                                  dataset.size(), m.n_states, m.n_actions, m.gamma, m.policy, m.seed);
    if (m.goal) out += fmt::format(" goal={},{}", m.goal->x, m.goal->y);
    if (m.minimal) out += fmt::format(" minimal={},{}", m.minimal->x, m.minimal->y);
    for (const auto& [key, value] : m.extra) out += fmt::format(" {}={}", key, value);
    out += '\n';
    for (const Transition& t : dataset.transitions)
        out += fmt::format("{} {} {} {} {}\n", t.s, t.a, t.r, t.s_next, t.done ? 1 : 0);
    return out;
}

void save(const OfflineDataset& dataset, const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
    file << to_text(dataset);
    if (!file) throw Error(fmt::format("failed writing '{}'", path.string()));
}

OfflineDataset from_text(const std::string& text) {
    OfflineDataset data;
    if (text.empty()) {
        data.empty_file_warning = true;
        return data;
    }
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::size_t declared = 0;
    bool have_header = false;

    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = split_ws(line);
        if (!have_header) {
            if (tokens.size() < 2 || tokens[0] != "#" || tokens[1] != kMagic)
                throw ParseError("missing dataset header", line_no);
            bool have_n = false;
            bool have_states = false;
            bool have_actions = false;
            for (std::size_t i = 2; i < tokens.size(); ++i) {
                const auto eq = tokens[i].find('=');
                if (eq == std::string_view::npos)
                    throw ParseError(fmt::format("bad header field '{}'", tokens[i]), line_no);
                const std::string_view key = tokens[i].substr(0, eq);
                const std::string_view value = tokens[i].substr(eq + 1);
                bool ok = true;
                if (key == "n") {
                    ok = parse_number(value, declared);
                    have_n = true;
                } else if (key == "states") {
                    ok = parse_number(value, data.meta.n_states);
                    have_states = true;
                } else if (key == "actions") {
                    ok = parse_number(value, data.meta.n_actions);
                    have_actions = true;
                } else if (key == "gamma") {
                    ok = parse_number(value, data.meta.gamma);
                } else if (key == "policy") {
                    data.meta.policy = std::string(value);
                } else if (key == "seed") {
                    ok = parse_number(value, data.meta.seed);
                } else if (key == "goal") {
                    data.meta.goal = parse_position(value, line_no);
                } else if (key == "minimal") {
                    data.meta.minimal = parse_position(value, line_no);
                } else {
                    data.meta.extra[std::string(key)] = std::string(value);
                }
                if (!ok) throw ParseError(fmt::format("bad value for header field '{}'", key), line_no);
            }
            if (!have_n || !have_states || !have_actions)
                throw ParseError("header must declare n, states and actions", line_no);
            have_header = true;
            data.transitions.reserve(declared);
            continue;
        }
        if (tokens.empty()) continue;
        if (tokens.size() != 5)
            throw ParseError(fmt::format("expected 5 fields 's a r s_next done', found {}", tokens.size()),
                             line_no);
        Transition t;
        int done = 0;
        if (!parse_number(tokens[0], t.s) || !parse_number(tokens[1], t.a) ||
            !parse_number(tokens[2], t.r) || !parse_number(tokens[3], t.s_next) ||
            !parse_number(tokens[4], done) || (done != 0 && done != 1))
            throw ParseError("malformed transition", line_no);
        if (t.s < 0 || t.s >= data.meta.n_states || t.s_next < 0 || t.s_next >= data.meta.n_states ||
            t.a < 0 || t.a >= data.meta.n_actions)
            throw ParseError("transition ids out of range", line_no);
        t.done = done == 1;
        data.transitions.push_back(t);
    }
    if (data.transitions.size() != declared)
        throw ParseError(fmt::format("header declares {} transitions, found {}", declared,
                                     data.transitions.size()),
                         line_no + 1);
    return data;
}

OfflineDataset load(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ParseError(fmt::format("cannot open dataset '{}'", path.string()), 0);
    std::ostringstream buffer;
    buffer << file.rdbuf();
    return from_text(buffer.str());
}

}  // namespace ivr
