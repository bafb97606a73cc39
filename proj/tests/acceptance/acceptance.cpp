// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion.
//
//   acceptance [--only 3,5] [--expect-red 6,8]
//
// Exit status is 0 when the failing set equals the --expect-red set.

#include "ivr/datasets.hpp"
#include "ivr/exact_solver.hpp"
#include "ivr/experiments.hpp"
#include "ivr/extrema.hpp"
#include "ivr/learners.hpp"
#include "ivr/losses.hpp"
#include "ivr/rng.hpp"

#include "CLI11.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace ivr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    // Records a sub-check; the criterion passes only if all of them do.
    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        notes.push_back((ok ? "ok: " : "FAILED: ") + what);
    }
};

Policy random_full_support(Index n_states, Index n_actions, Rng& rng) {
    Policy mu{Matrix(n_states, n_actions)};
    for (Index s = 0; s < n_states; ++s) {
        for (Index a = 0; a < n_actions; ++a) mu.probs(s, a) = 0.1 + uniform01(rng);
        mu.probs.row(s) /= mu.probs.row(s).sum();
    }
    return mu;
}

Index draw(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); }

Vector random_vector(Rng& rng, Index n, double scale) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = scale * (2.0 * uniform01(rng) - 1.0);
    return v;
}

Outcome contraction() {
    Outcome out;
    Rng rng(101);
    double worst = -1e300;
    int trials = 0;
    for (int i = 0; i < 100; ++i) {
        const double gamma = i % 2 ? 0.9 : 0.5;
        const Index S = draw(rng, 2, 20), A = draw(rng, 2, 4);
        const TabularMDP mdp = make_random_mdp(S, A, gamma, 1000 + i);
        const RegularizedModel model = model_from_mdp(mdp, random_full_support(S, A, rng));
        for (const Regularizer& reg : {make_chi_square(), make_reverse_kl()}) {
            const double alpha = 0.05 + 2.0 * uniform01(rng);
            const Vector v1 = random_vector(rng, S, 10.0), v2 = random_vector(rng, S, 10.0);
            const double lhs = (regularized_backup(model, v1, alpha, reg) - regularized_backup(model, v2, alpha, reg))
                                   .lpNorm<Eigen::Infinity>();
            worst = std::max(worst, lhs - gamma * (v1 - v2).lpNorm<Eigen::Infinity>());
            ++trials;
        }
    }
    out.check(worst <= 1e-9, fmt::format("{} trials, max excess {:.2e}", trials, worst));
    return out;
}

Outcome kkt_suite() {
    Outcome out;
    Rng rng(202);
    const std::vector<Regularizer> regs{make_chi_square(), make_reverse_kl(), make_alpha_divergence(0.5)};
    double norm = 0.0, stat = 0.0, slack = 0.0;
    for (int i = 0; i < 50; ++i) {
        const Index S = draw(rng, 3, 20), A = draw(rng, 2, 4);
        const TabularMDP mdp = make_random_mdp(S, A, 0.9, 2000 + i);
        const RegularizedModel model = model_from_mdp(mdp, random_full_support(S, A, rng));
        const Regularizer& reg = regs[static_cast<std::size_t>(i) % regs.size()];
        const double alpha = 0.05 + 2.0 * uniform01(rng);
        const SolutionTables sol = solve_fixed_point(model, alpha, reg, 1e-10);
        const KktReport k = kkt_residual(sol, model, alpha, reg);
        norm = std::max(norm, k.max_normalization);
        stat = std::max(stat, k.max_stationarity);
        slack = std::max(slack, k.max_slackness);
    }
    out.check(norm <= 1e-8, fmt::format("max |sum pi - 1| {:.2e}", norm));
    out.check(stat <= 1e-6, fmt::format("max stationarity {:.2e}", stat));
    out.check(slack <= 1e-6, fmt::format("max slackness {:.2e}", slack));
    return out;
}

// Deterministic dynamics, every pair repeated 1..4 times.
OfflineDataset full_support_dataset(Index S, Index A, double gamma, Rng& rng) {
    OfflineDataset d;
    d.meta.n_states = S;
    d.meta.n_actions = A;
    d.meta.gamma = gamma;
    for (Index s = 0; s < S; ++s)
        for (Index a = 0; a < A; ++a) {
            const Index next = draw(rng, 0, S - 1);
            const double r = 2.0 * uniform01(rng) - 1.0;
            const int copies = 1 + static_cast<int>(rng() % 4);
            for (int k = 0; k < copies; ++k) d.transitions.push_back({s, a, r, next, false});
        }
    return d;
}

Outcome oracle_equivalence() {
    Outcome out;
    Rng rng(303);
    double dv = 0.0, dq = 0.0, stationarity = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Index S = draw(rng, 3, 8), A = draw(rng, 2, 4);
        const OfflineDataset data = full_support_dataset(S, A, 0.8, rng);
        const EmpiricalModel emp = empirical_model(data);
        const double alpha = 0.3 + uniform01(rng);
        const SolutionTables exact = solve_fixed_point(model_from_empirical(emp), alpha, make_reverse_kl(), 1e-12);

        LearnerConfig c = default_config(Algo::kEql);
        c.alpha = alpha;
        c.batch_size = 0;
        c.steps = 20000;
        c.double_q = false;
        c.seed = static_cast<std::uint64_t>(i);
        const LearnerState eql = train(data, c);
        dv = std::max(dv, (eql.v_table() - exact.v).lpNorm<Eigen::Infinity>());
        dq = std::max(dq, (eql.q_table() - exact.q).lpNorm<Eigen::Infinity>());

        c.algo = Algo::kSql;
        const LearnerState sql = train(data, c);
        const Matrix q = sql.target_min_table();
        const Vector v = sql.v_table();
        for (Index s = 0; s < S; ++s) {
            double lhs = 0.0;
            for (Index a = 0; a < A; ++a) lhs += emp.mu_hat(s, a) * std::max(1.0 + (q(s, a) - v[s]) / (2.0 * alpha), 0.0);
            stationarity = std::max(stationarity, std::abs(lhs - 1.0));
        }
    }
    out.check(dv <= 1e-4, fmt::format("EQL max |V - V*| {:.2e}", dv));
    out.check(dq <= 1e-4, fmt::format("EQL max |Q - Q*| {:.2e}", dq));
    out.check(stationarity <= 1e-4, fmt::format("SQL max stationarity gap {:.2e}", stationarity));
    return out;
}

Outcome brute_force() {
    Outcome out;
    Rng rng(404);
    double gap = 0.0, above = -1e300;
    for (int i = 0; i < 6; ++i) {
        const Index S = i < 3 ? 2 : 3;
        const TabularMDP mdp = make_random_mdp(S, 2, 0.9, 4000 + i);
        const RegularizedModel model = model_from_mdp(mdp, random_full_support(S, 2, rng));
        const Regularizer reg = i % 2 ? make_reverse_kl() : make_chi_square();
        const double alpha = 0.2 + uniform01(rng);
        const SolutionTables sol = solve_fixed_point(model, alpha, reg, 1e-12);
        const double exact = regularized_objective(model, sol.pi, alpha, reg);
        const BruteForceResult bf = brute_force_policy_search(model, alpha, reg, 1e-2);
        gap = std::max(gap, exact - bf.objective);
        above = std::max(above, bf.objective - exact);
    }
    out.check(gap <= 1e-2, fmt::format("max objective gap to the grid optimum {:.2e}", gap));
    out.check(above <= 1e-9, fmt::format("grid never beats the fixed point (excess {:.2e})", above));
    return out;
}

Vector numeric_gradient(const std::function<double(const Vector&)>& fn, const Vector& x) {
    const double h = 1e-6;
    Vector g(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        Vector up = x, down = x;
        up[i] += h;
        down[i] -= h;
        g[i] = (fn(up) - fn(down)) / (2.0 * h);
    }
    return g;
}

double rel_err(const Vector& a, const Vector& b) {
    return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

Outcome gradients() {
    Outcome out;
    Rng rng(505);
    std::map<std::string, double> worst;
    for (int i = 0; i < 100; ++i) {
        const Index n = draw(rng, 4, 32);
        const Vector q = random_vector(rng, n, 3.0), v = random_vector(rng, n, 3.0);
        const double alpha = 0.3 + uniform01(rng);
        const double tau = 0.05 + 0.9 * uniform01(rng);
        auto upd = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };
        upd("sql_v", rel_err(sql_v_loss(q, v, alpha).grad,
                             numeric_gradient([&](const Vector& x) { return sql_v_loss(q, x, alpha).loss; }, v)));
        upd("eql_v", rel_err(eql_v_loss(q, v, alpha).grad,
                             numeric_gradient([&](const Vector& x) { return eql_v_loss(q, x, alpha).loss; }, v)));
        upd("iql_v", rel_err(iql_v_loss(q, v, tau).grad,
                             numeric_gradient([&](const Vector& x) { return iql_v_loss(q, x, tau).loss; }, v)));
        upd("q", rel_err(q_loss(q, v).grad, numeric_gradient([&](const Vector& x) { return q_loss(x, v).loss; }, q)));

        const Index rows = draw(rng, 2, 8), k = draw(rng, 2, 4);
        Matrix logits(rows, k);
        for (Index r = 0; r < rows; ++r) logits.row(r) = random_vector(rng, k, 2.0).transpose();
        Eigen::VectorXi actions(rows);
        for (Index r = 0; r < rows; ++r) actions[r] = static_cast<int>(draw(rng, 0, k - 1));
        const Vector target = random_vector(rng, rows, 2.0);
        const Vector weights = random_vector(rng, rows, 1.0).cwiseAbs();
        const double cw = 2.0 * uniform01(rng);
        const Vector flat = logits.reshaped();
        auto as_matrix = [&](const Vector& x) { return Matrix(x.reshaped(rows, k)); };
        upd("cql", rel_err(cql_loss(logits, actions, target, cw).grad.reshaped(),
                           numeric_gradient(
                               [&](const Vector& x) { return cql_loss(as_matrix(x), actions, target, cw).loss; }, flat)));
        upd("weighted_bc",
            rel_err(weighted_bc_loss(logits, actions, weights).grad.reshaped(),
                    numeric_gradient([&](const Vector& x) { return weighted_bc_loss(as_matrix(x), actions, weights).loss; },
                                     flat)));
    }
    for (const auto& [name, e] : worst) out.check(e <= 1e-5, fmt::format("{} rel err {:.2e}", name, e));
    return out;
}

Outcome extrema() {
    Outcome out;
    Rng rng(606);
    double closed = 0.0, gd = 0.0, bracket = -1e300, low_temp = 0.0;
    const std::vector<double> alphas{0.05, 0.1, 0.5, 1.0, 2.0, 10.0};
    const std::vector<double> taus{0.5, 0.7, 0.9, 0.99};
    for (int i = 0; i < 1000; ++i) {
        const int n = 2 + static_cast<int>(rng() % 30);
        std::vector<double> x(static_cast<std::size_t>(n));
        for (auto& v : x) v = 4.0 * uniform01(rng) - 2.0;
        const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
        const double top = *std::max_element(x.begin(), x.end());
        auto in_range = [&](double m) { bracket = std::max({bracket, mean - m, m - top}); };
        for (double alpha : alphas) {
            double lme = 0.0;
            for (double v : x) lme += std::exp((v - top) / alpha);
            lme = top + alpha * std::log(lme / n);
            const double me = fit_m_eql(x, alpha);
            closed = std::max(closed, std::abs(me - lme));
            in_range(me);
            in_range(fit_m_sql(x, alpha));
            if (i % 20 == 0) {
                gd = std::max(gd, std::abs(fit_m_eql_gd(x, alpha) - me));
                gd = std::max(gd, std::abs(fit_m_sql_gd(x, alpha) - fit_m_sql(x, alpha)));
            }
        }
        for (double tau : taus) in_range(fit_m_expectile(x, tau));
        low_temp = std::max(low_temp, top - fit_m_eql(x, 0.01));
    }
    out.check(closed <= 1e-10, fmt::format("closed form gap {:.2e}", closed));
    out.check(gd <= 1e-6, fmt::format("gradient descent gap {:.2e}", gd));
    out.check(bracket <= 1e-9, fmt::format("max excursion outside [mean, max] {:.2e}", bracket));
    out.check(low_temp <= 1e-6, fmt::format("alpha = 0.01 max - m up to {:.2e}", low_temp));
    return out;
}

Outcome sparsity() {
    Outcome out;
    Rng rng(707);
    int violations = 0, zeros = 0, rkl_zero = 0;
    for (int i = 0; i < 20; ++i) {
        const Index S = draw(rng, 3, 15), A = draw(rng, 2, 4);
        const TabularMDP mdp = make_random_mdp(S, A, 0.9, 7000 + i);
        Policy mu = random_full_support(S, A, rng);
        // Knock out one action in some states to test support handling.
        for (Index s = 0; s < S; s += 3) {
            mu.probs(s, 0) = 0.0;
            mu.probs.row(s) /= mu.probs.row(s).sum();
        }
        const RegularizedModel model = model_from_mdp(mdp, mu);
        const double alpha = 0.02 + 0.3 * uniform01(rng);
        const SolutionTables chi = solve_fixed_point(model, alpha, make_chi_square());
        const SolutionTables rkl = solve_fixed_point(model, alpha, make_reverse_kl());
        for (Index s = 0; s < S; ++s)
            for (Index a = 0; a < A; ++a) {
                if (mu.probs(s, a) == 0.0) continue;
                const double margin = chi.q(s, a) - (chi.u[s] - alpha);
                const bool zero = chi.pi.probs(s, a) == 0.0;
                zeros += zero;
                if (std::abs(margin) > 1e-9 && zero != (margin <= 0.0)) ++violations;
                rkl_zero += rkl.pi.probs(s, a) <= 0.0;
            }
    }
    out.check(violations == 0 && zeros > 0, fmt::format("chi-square threshold violations {} over {} zeros", violations, zeros));
    out.check(rkl_zero == 0, fmt::format("reverse KL zero entries on support {}", rkl_zero));

    Config cfg;
    cfg.set("algos", "sql");
    cfg.set("alphas", "0.1, 0.5, 1, 2, 10");
    cfg.set("seeds", "0, 1, 2, 3, 4");
    Params p(cfg);
    const auto result = sweep_experiment(p, 1, {});
    std::map<std::uint64_t, std::vector<std::pair<double, double>>> by_seed;
    for (const auto& r : result.rows) by_seed[r.seed].push_back({r.alpha, r.sparsity_ratio});
    int monotone = 0;
    std::string curves;
    for (auto& [seed, pts] : by_seed) {
        std::sort(pts.begin(), pts.end());
        bool ok = true;
        for (std::size_t i = 1; i < pts.size(); ++i) ok = ok && pts[i].second >= pts[i - 1].second;
        monotone += ok;
        curves += fmt::format(" s{}:", seed);
        for (const auto& pt : pts) curves += fmt::format(" {:.3f}", pt.second);
    }
    out.check(monotone == 5 && result.failures.empty(),
              fmt::format("ratio nondecreasing in alpha on {}/5 seeds;{}", monotone, curves));
    return out;
}

Outcome four_rooms() {
    Outcome out;
    Config cfg;
    cfg.set("algos", "sql, eql, iql");
    cfg.set("sql_alpha", "0.5");
    cfg.set("eql_alpha", "0.5");
    cfg.set("iql_tau", "0.9");
    cfg.set("seeds", "0, 1, 2, 3, 4");
    Params p(cfg);
    const auto result = fourrooms_experiment(p, 1);
    std::map<std::string, std::map<std::uint64_t, const FourRoomsRow*>> rows;
    for (const auto& r : result.rows) rows[r.algo][r.seed] = &r;
    for (const std::string algo : {"sql", "eql"}) {
        int reached = 0;
        for (const auto& [seed, r] : rows[algo]) reached += r->success > 0.0;
        out.check(reached >= 4, fmt::format("{} reaches the goal on {}/5 seeds", algo, reached));
    }
    int iql_worse = 0;
    std::string errs;
    for (const auto& [seed, r] : rows["sql"]) {
        const double iql = rows["iql"].count(seed) ? rows["iql"][seed]->value_error : 0.0;
        iql_worse += iql > r->value_error;
        errs += fmt::format(" s{}: sql {:.2f} iql {:.2f}", seed, r->value_error, iql);
    }
    out.check(iql_worse >= 3, fmt::format("IQL value error above SQL on {}/5 seeds;{}", iql_worse, errs));
    out.check(result.failures.empty(), fmt::format("{} failed cells", result.failures.size()));
    return out;
}

Outcome small_data() {
    Outcome out;
    Config cfg;
    cfg.set("algos", "sql, eql, oos_q, cql");
    cfg.set("levels", "easy, hard");
    cfg.set("hardness", "0.25, 0.75");
    cfg.set("seeds", "0, 1, 2, 3, 4");
    Params p(cfg);
    const auto result = smalldata_experiment(p, 1);
    std::map<std::string, std::map<std::uint64_t, std::map<std::string, double>>> be;
    for (const auto& r : result.rows) be[r.algo][r.seed][r.level] = r.bellman_error;
    auto count = [&](const std::string& algo, const std::function<bool(double)>& ok, std::string& detail) {
        int n = 0;
        for (auto& [seed, lv] : be[algo]) {
            const double ratio = lv["hard"] / std::max(lv["easy"], 1e-300);
            n += ok(ratio);
            detail += fmt::format(" {:.2f}", ratio);
        }
        return n;
    };
    for (const std::string algo : {"oos_q", "cql"}) {
        std::string detail;
        const int n = count(algo, [](double r) { return r >= 10.0; }, detail);
        out.check(n >= 3, fmt::format("{} BE hard/easy >= 10 on {}/5 seeds; ratios{}", algo, n, detail));
    }
    for (const std::string algo : {"sql", "eql"}) {
        std::string detail;
        const int n = count(algo, [](double r) { return r <= 3.0; }, detail);
        out.check(n >= 3, fmt::format("{} BE hard/easy <= 3 on {}/5 seeds; ratios{}", algo, n, detail));
    }
    out.check(result.failures.empty(), fmt::format("{} failed cells", result.failures.size()));
    return out;
}

std::map<std::string, std::string> csv_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        out[fs::relative(e.path(), dir).string()] = s.str();
    }
    return out;
}

Outcome determinism() {
    Outcome out;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"solve", "solve: {alpha: 0.5}"},
        {"toy", "toy: {n_points: 1000, bins: 10}"},
        {"fourrooms", "fourrooms: {seeds: [0, 1], steps: 1000}"},
        {"noisy", "noisy: {algos: [sql, iql], ratios: 0.05, total: 2000, seeds: 0, steps: 500}"},
        {"smalldata", "smalldata: {algos: [sql, oos_q], levels: easy, hardness: 0.25, total: 2000, seeds: 0, "
                      "steps: 500}"},
        {"sweep", "sweep: {alphas: [0.5, 2], seeds: 0, steps: 500}"},
        {"train", "train: {algo: eql, steps: 1000, checkpoint_every: 250}"},
    };
    const fs::path root = fs::temp_directory_path() / "ivr_acceptance_determinism";
    fs::remove_all(root);
    for (const auto& [name, text] : commands) {
        std::map<std::string, std::string> runs[2];
        bool ran = true;
        for (int k = 0; k < 2; ++k) {
            CommandOptions o;
            o.config = Config::parse(text);
            o.out = root / name / std::to_string(k);
            std::ostringstream log;
            ran = ran && run_command(name, o, log) == 0;
            runs[k] = csv_bytes(o.out);
        }
        out.check(ran && !runs[0].empty() && runs[0] == runs[1],
                  fmt::format("{}: {} CSV files identical", name, runs[0].size()));
    }
    fs::remove_all(root);
    return out;
}

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::set<int> parse_ids(const std::string& text) {
    std::set<int> ids;
    for (const auto& item : split_list(text)) ids.insert(static_cast<int>(parse_int(item)));
    return ids;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string only, expect_red;
    bool verbose = false;
    app.add_option("--only", only, "comma separated criteria to run");
    app.add_option("--expect-red", expect_red, "criteria known to fail; exit 0 when exactly these fail");
    app.add_flag("-v,--verbose", verbose, "print every sub-check");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "contraction", 10, contraction},
        {2, "kkt and normalization", 30, kkt_suite},
        {3, "oracle equivalence", 120, oracle_equivalence},
        {4, "brute force equivalence", 60, brute_force},
        {5, "gradients", 10, gradients},
        {6, "extrema toy", 10, extrema},
        {7, "sparsity threshold", 1e300, sparsity},
        {8, "four rooms", 300, four_rooms},
        {9, "small data", 600, small_data},
        {10, "determinism", 1e300, determinism},
    };
    const std::set<int> selected = parse_ids(only);
    const std::set<int> expected = parse_ids(expect_red);

    std::set<int> failed;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (std::isfinite(c.budget_seconds) && c.budget_seconds < 1e299)
            o.check(secs < c.budget_seconds, fmt::format("runtime {:.1f} s under {:.0f} s", secs, c.budget_seconds));
        if (!o.pass) failed.insert(c.id);
        std::cout << fmt::format("{} {:>2} {} ({:.1f} s)", o.pass ? "PASS" : "FAIL", c.id, c.name, secs)
                  << (o.pass || expected.count(c.id) == 0 ? "" : " [expected]") << "\n";
        for (const auto& n : o.notes)
            if (verbose || n.rfind("FAILED", 0) == 0) std::cout << "       " << n << "\n";
        std::cout.flush();
    }
    std::set<int> expected_run;
    for (int id : expected)
        if (selected.empty() || selected.count(id)) expected_run.insert(id);
    if (failed == expected_run) return 0;
    for (int id : failed)
        if (!expected_run.count(id)) std::cout << "unexpected failure: " << id << "\n";
    for (int id : expected_run)
        if (!failed.count(id)) std::cout << "expected failure now passes: " << id << "\n";
    return 1;
}
