#pragma once

#include "tangfam/germ.hpp"
#include "tangfam/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tangfam {

/// One branch of a criminant set and its envelope image.
struct CurveBranch {
    std::vector<Vec2> params;   ///< (xi, t)
    std::vector<Vec2> image;    ///< (x, y); empty until mapped
    std::vector<Vec2> tangents; ///< unit image tangents
    int label = 0;
    bool closed = false;
    bool support = false;
    double xi_period = 0.0; ///< xi period of a periodic trace; params are unwrapped

    std::size_t size() const { return params.size(); }
};

struct TraceOptions {
    int grid = 512;         ///< cells along xi
    int t_grid = 0;         ///< cells along t; 0 means same as grid
    bool periodic_xi = false;
    double tolerance = 1e-10; ///< |det| bound after refinement
};

struct TraceResult {
    std::vector<CurveBranch> branches;
    std::vector<Vec2> branch_points;   ///< junctions where branches were split
    std::vector<Vec2> ambiguous_cells; ///< saddle cells resolved by the asymptotic decider
    int degenerate_edges = 0;          ///< edges with det = 0 at both ends
    double cell_xi = 0.0;
    double cell_t = 0.0;
    double max_residual = 0.0;         ///< largest |det| at a refined crossing
};

template <class F>
concept ScalarField2 = requires(const F& f, double a, double b) {
    { f(a, b) } -> std::convertible_to<double>;
};

namespace detail {

/// Illinois-modified regula falsi on a bracket with g(a) < 0 <= g(b) (or the reverse).
template <class G>
double refine_root(const G& g, double a, double b, double ga, double gb, double ftol, double* residual = nullptr)
{
    double c = a, gc = ga;
    int side = 0;
    for (int it = 0; it < 200; ++it) {
        c = (a * gb - b * ga) / (gb - ga);
        if (!(c > std::min(a, b) && c < std::max(a, b)))
            c = 0.5 * (a + b);
        gc = g(c);
        if (gc == 0.0 || std::fabs(gc) <= ftol || std::fabs(b - a) <= 4 * std::numeric_limits<double>::epsilon() * std::max(std::fabs(a), std::fabs(b)))
            break;
        if ((gc < 0) == (gb < 0)) {
            b = c;
            gb = gc;
            if (side == -1)
                ga *= 0.5;
            side = -1;
        } else {
            a = c;
            ga = gc;
            if (side == 1)
                gb *= 0.5;
            side = 1;
        }
    }
    if (residual)
        *residual = std::fabs(gc);
    return c;
}

struct Segment {
    int a, b;
};

} // namespace detail

/// Zero set of `field` on `box` by marching squares with refined edge crossings.
/// Fields exposing `column(xi)` (returning a callable of t) get whole columns evaluated
/// through that object.
template <ScalarField2 Field>
TraceResult trace_zero_set(const Field& field, const Box& box, const TraceOptions& opt)
{
    const int nx = opt.grid;
    const int nt = opt.t_grid > 0 ? opt.t_grid : opt.grid;
    if (nx < 2 || nt < 2)
        throw std::invalid_argument("grid too small");
    const bool periodic = opt.periodic_xi;
    const double dx = box.xi_width() / nx;
    const double dt = box.t_width() / nt;
    const int ncol = periodic ? nx : nx + 1;
    const int nrow = nt + 1;
    // Interior nodes sit off the rational lattice so that zero lines such as t = 0 or
    // xi = 0 do not run through grid nodes; the box edges stay exact.
    constexpr double shift_xi = 0.2360679774997897, shift_t = 0.3819660112501051;
    std::vector<double> xs(std::size_t(nx) + 1), ts(std::size_t(nt) + 1);
    for (int i = 0; i <= nx; ++i)
        xs[std::size_t(i)] = periodic ? box.xi_min + (i + shift_xi) * dx
                             : i == 0 ? box.xi_min
                             : i == nx ? box.xi_max
                                       : box.xi_min + (i + shift_xi) * dx;
    for (int j = 0; j <= nt; ++j)
        ts[std::size_t(j)] = j == 0 ? box.t_min : j == nt ? box.t_max : box.t_min + (j + shift_t) * dt;
    auto xi_at = [&](int i) { return xs[std::size_t(i)]; };
    auto t_at = [&](int j) { return ts[std::size_t(j)]; };

    std::vector<double> v(std::size_t(ncol) * nrow);
    parallel_for(std::size_t(ncol), [&](std::size_t i) {
        const double xi = xi_at(int(i));
        if constexpr (requires { field.column(0.0); }) {
            auto col = field.column(xi);
            for (int j = 0; j < nrow; ++j)
                v[i * nrow + j] = col(t_at(j));
        } else {
            for (int j = 0; j < nrow; ++j)
                v[i * nrow + j] = field(xi, t_at(j));
        }
    });
    double vmax = 0.0;
    for (double x : v) {
        if (!std::isfinite(x))
            throw EvaluationError("non-finite field value on the tracing grid");
        vmax = std::max(vmax, std::fabs(x));
    }
    // Values at the round-off level are exact zeros; zero counts as positive.
    const double floor = 1e-13 * vmax;
    for (double& x : v)
        if (std::fabs(x) <= floor)
            x = 0.0;
    auto wrap = [&](int i) { return periodic ? ((i % nx) + nx) % nx : i; };
    auto val = [&](int i, int j) { return v[std::size_t(wrap(i)) * nrow + j]; };
    auto node_id = [&](int i, int j) { return (long long)wrap(i) * nrow + j; };

    TraceResult out;
    out.cell_xi = dx;
    out.cell_t = dt;

    std::unordered_map<long long, int> vertex_of;
    std::vector<Vec2> pts;
    struct Job {
        int vertex;
        bool vertical;
        int i, j;
    };
    std::vector<Job> jobs;

    // Vertex index for the crossing on an edge, or -1.
    auto edge_vertex = [&](int i0, int j0, bool vertical) -> int {
        const int i1 = vertical ? i0 : i0 + 1;
        const int j1 = vertical ? j0 + 1 : j0;
        const double a = val(i0, j0), b = val(i1, j1);
        if ((a >= 0) == (b >= 0)) {
            return -1;
        }
        long long key;
        Vec2 p;
        bool refine = false;
        if (a == 0.0 || b == 0.0) {
            const int ii = a == 0.0 ? i0 : i1, jj = a == 0.0 ? j0 : j1;
            key = 3 * node_id(ii, jj);
            p = {xi_at(ii), t_at(jj)};
        } else {
            key = 3 * node_id(i0, j0) + (vertical ? 2 : 1);
            refine = true;
        }
        auto it = vertex_of.find(key);
        if (it != vertex_of.end())
            return it->second;
        const int id = int(pts.size());
        vertex_of.emplace(key, id);
        pts.push_back(p);
        if (refine)
            jobs.push_back({id, vertical, i0, j0});
        return id;
    };

    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nrow; ++j)
            if (val(i, j) == 0.0 && val(i + 1, j) == 0.0)
                ++out.degenerate_edges;

    std::set<std::pair<int, int>> seg_set;
    auto add_seg = [&](int a, int b) {
        if (a != b)
            seg_set.insert({std::min(a, b), std::max(a, b)});
    };

    struct Saddle {
        int i, j;
        std::array<int, 4> e;
    };
    std::vector<Saddle> saddles;

    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j < nt; ++j) {
            // bottom, right, top, left
            const std::array<int, 4> e{edge_vertex(i, j, false), edge_vertex(i + 1, j, true),
                                       edge_vertex(i, j + 1, false), edge_vertex(i, j, true)};
            int k = 0;
            for (int x : e)
                k += x >= 0;
            if (k == 2) {
                int a = -1, b = -1;
                for (int x : e)
                    if (x >= 0)
                        (a < 0 ? a : b) = x;
                add_seg(a, b);
            } else if (k == 4) {
                saddles.push_back({i, j, e});
            }
        }
    }

    // Refine crossings.
    std::vector<double> residuals(jobs.size(), 0.0);
    parallel_for(jobs.size(), [&](std::size_t n) {
        const Job& jb = jobs[n];
        const double ftol = std::min(opt.tolerance, 1e-14 * vmax);
        if (jb.vertical) {
            const double xi = xi_at(jb.i);
            const double t0 = t_at(jb.j), t1 = t_at(jb.j + 1);
            const double g0 = val(jb.i, jb.j), g1 = val(jb.i, jb.j + 1);
            if constexpr (requires { field.column(0.0); }) {
                auto col = field.column(xi);
                const double r = detail::refine_root([&](double t) { return double(col(t)); }, t0, t1, g0, g1, ftol,
                                                     &residuals[n]);
                pts[std::size_t(jb.vertex)] = {xi, r};
            } else {
                const double r = detail::refine_root([&](double t) { return double(field(xi, t)); }, t0, t1, g0, g1,
                                                     ftol, &residuals[n]);
                pts[std::size_t(jb.vertex)] = {xi, r};
            }
        } else {
            const double t = t_at(jb.j);
            const double x0 = xi_at(jb.i);
            const double x1 = xi_at(jb.i + 1);
            const double g0 = val(jb.i, jb.j), g1 = val(jb.i + 1, jb.j);
            const double r = detail::refine_root([&](double xi) { return double(field(xi, t)); }, x0, x1, g0, g1, ftol,
                                                 &residuals[n]);
            pts[std::size_t(jb.vertex)] = {r, t};
        }
    });
    for (double r : residuals)
        out.max_residual = std::max(out.max_residual, r);

    const double period = box.xi_width();
    // Parameter-space difference with xi unwrapped in periodic mode, in cell units.
    auto delta = [&](const Vec2& from, const Vec2& to) {
        double ddx = to.x - from.x;
        if (periodic) {
            if (ddx > period / 2)
                ddx -= period;
            else if (ddx < -period / 2)
                ddx += period;
        }
        return Vec2{ddx / dx, (to.y - from.y) / dt};
    };
    // Newton on the gradient from p. True when it converges within `reach` cells of the
    // start to a critical point where the field vanishes on the scale of its Hessian.
    auto critical_zero = [&](Vec2& p, double reach) {
        const Vec2 start = p;
        const double hx = 1e-3 * dx, ht = 1e-3 * dt;
        for (int it = 0; it < 12; ++it) {
            const double fc = field(p.x, p.y);
            const double fxp = field(p.x + hx, p.y), fxm = field(p.x - hx, p.y);
            const double ftp = field(p.x, p.y + ht), ftm = field(p.x, p.y - ht);
            const double fpp = field(p.x + hx, p.y + ht), fpm = field(p.x + hx, p.y - ht);
            const double fmp = field(p.x - hx, p.y + ht), fmm = field(p.x - hx, p.y - ht);
            const double gx = (fxp - fxm) / (2 * hx), gt = (ftp - ftm) / (2 * ht);
            const double hxx = (fxp - 2 * fc + fxm) / (hx * hx), htt = (ftp - 2 * fc + ftm) / (ht * ht);
            const double hxt = (fpp - fpm - fmp + fmm) / (4 * hx * ht);
            const double d = hxx * htt - hxt * hxt;
            const double hess_norm =
                std::max({std::fabs(hxx) * dx * dx, std::fabs(htt) * dt * dt, std::fabs(hxt) * dx * dt});
            if (d == 0.0)
                return false;
            const Vec2 step{(htt * gx - hxt * gt) / d, (hxx * gt - hxt * gx) / d};
            p -= step;
            const Vec2 off = delta(start, p);
            if (std::fabs(off.x) > reach + 1.0 || std::fabs(off.y) > reach + 1.0)
                return false;
            if (std::fabs(step.x) < 1e-12 * dx && std::fabs(step.y) < 1e-12 * dt)
                return std::fabs(field(p.x, p.y)) <= 1e-6 * hess_norm;
        }
        return false;
    };

    // Saddle cells: shared zero node, true branch point, or asymptotic decider.
    for (const Saddle& s : saddles) {
        std::vector<int> distinct;
        bool shared = false;
        for (int x : s.e) {
            if (std::find(distinct.begin(), distinct.end(), x) != distinct.end())
                shared = true;
            else
                distinct.push_back(x);
        }
        if (shared) {
            // The repeated crossing is a zero node where several branches meet.
            int hub = -1;
            for (int a = 0; a < 4 && hub < 0; ++a)
                for (int b = a + 1; b < 4; ++b)
                    if (s.e[std::size_t(a)] == s.e[std::size_t(b)])
                        hub = s.e[std::size_t(a)];
            for (int x : distinct)
                add_seg(hub, x);
            continue;
        }
        const double x0 = xi_at(s.i), t0 = t_at(s.j);
        const double cw = xi_at(s.i + 1) - x0, ch = t_at(s.j + 1) - t0;
        const double f00 = val(s.i, s.j), f10 = val(s.i + 1, s.j), f11 = val(s.i + 1, s.j + 1),
                     f01 = val(s.i, s.j + 1);
        Vec2 p{x0 + 0.5 * cw, t0 + 0.5 * ch};
        const double den = f00 - f10 - f01 + f11;
        if (den != 0.0) {
            const double u = (f00 - f01) / den, w = (f00 - f10) / den;
            if (u > 0 && u < 1 && w > 0 && w < 1)
                p = {x0 + u * cw, t0 + w * ch};
        }
        const bool converged = critical_zero(p, 0.5);
        const bool inside = p.x >= x0 && p.x <= x0 + cw && p.y >= t0 && p.y <= t0 + ch;
        if (converged && inside) {
            const int id = int(pts.size());
            pts.push_back(p);
            out.branch_points.push_back(p);
            for (int x : s.e)
                add_seg(id, x);
            continue;
        }
        out.ambiguous_cells.push_back({x0 + 0.5 * cw, t0 + 0.5 * ch});
        const double centre = den != 0.0 ? (f00 * f11 - f10 * f01) / den : 0.25 * (f00 + f10 + f11 + f01);
        const bool bl_positive = f00 >= 0;
        // Corners sharing the centre's sign are joined; the others are cut off.
        if ((centre >= 0) == bl_positive) {
            add_seg(s.e[0], s.e[1]); // cut bottom-right
            add_seg(s.e[2], s.e[3]); // cut top-left
        } else {
            add_seg(s.e[0], s.e[3]); // cut bottom-left
            add_seg(s.e[1], s.e[2]); // cut top-right
        }
    }

    // Avoided crossings: two zero lines meeting at a shallow angle can leave every cell
    // with two crossings, so the branch point shows up only as two arcs passing close by.
    {
        std::vector<std::vector<int>> nb(pts.size());
        for (const auto& [a, b] : seg_set) {
            nb[std::size_t(a)].push_back(b);
            nb[std::size_t(b)].push_back(a);
        }
        auto cell_of = [&](const Vec2& q) {
            double x = q.x - box.xi_min;
            if (periodic)
                x -= period * std::floor(x / period);
            return std::pair<long long, long long>{(long long)std::floor(x / dx), (long long)std::floor((q.y - box.t_min) / dt)};
        };
        const long long wrap_cells = periodic ? nx : 0;
        std::unordered_map<long long, std::vector<int>> hash;
        auto hkey = [&](long long i, long long j) {
            if (wrap_cells)
                i = ((i % wrap_cells) + wrap_cells) % wrap_cells;
            return i * 4000037LL + j;
        };
        for (std::size_t u = 0; u < pts.size(); ++u)
            if (!nb[u].empty()) {
                const auto [ci, cj] = cell_of(pts[u]);
                hash[hkey(ci, cj)].push_back(int(u));
            }
        auto linked = [&](int u, int v, int depth) {
            std::vector<int> frontier{u}, seen{u};
            for (int d = 0; d < depth && !frontier.empty(); ++d) {
                std::vector<int> next;
                for (int w : frontier)
                    for (int y : nb[std::size_t(w)]) {
                        if (y == v)
                            return true;
                        if (std::find(seen.begin(), seen.end(), y) == seen.end()) {
                            seen.push_back(y);
                            next.push_back(y);
                        }
                    }
                frontier = std::move(next);
            }
            return false;
        };
        std::vector<Vec2> tried;
        std::vector<Vec2> found;
        for (std::size_t u = 0; u < pts.size(); ++u) {
            if (nb[u].empty())
                continue;
            const auto [ci, cj] = cell_of(pts[u]);
            for (long long di = -2; di <= 2; ++di)
                for (long long dj = -2; dj <= 2; ++dj) {
                    auto it = hash.find(hkey(ci + di, cj + dj));
                    if (it == hash.end())
                        continue;
                    for (int v : it->second) {
                        if (v <= int(u))
                            continue;
                        const Vec2 d = delta(pts[u], pts[std::size_t(v)]);
                        if (norm(d) >= 2.0 || linked(int(u), v, 8))
                            continue;
                        Vec2 mid{pts[u].x + 0.5 * d.x * dx, pts[u].y + 0.5 * d.y * dt};
                        if (std::any_of(tried.begin(), tried.end(), [&](const Vec2& q) { return norm(delta(q, mid)) < 1.0; }))
                            continue;
                        tried.push_back(mid);
                        Vec2 p = mid;
                        if (!critical_zero(p, 2.0))
                            continue;
                        if (std::any_of(found.begin(), found.end(), [&](const Vec2& q) { return norm(delta(q, p)) < 2.0; }) ||
                            std::any_of(out.branch_points.begin(), out.branch_points.end(),
                                        [&](const Vec2& q) { return norm(delta(q, p)) < 2.0; }))
                            continue;
                        found.push_back(p);
                    }
                }
        }
        for (const Vec2& p : found) {
            constexpr double radius = 1.5;
            const int hub = int(pts.size());
            pts.push_back(p);
            out.branch_points.push_back(p);
            auto inside = [&](int w) { return norm(delta(p, pts[std::size_t(w)])) < radius; };
            std::vector<std::pair<int, int>> removed;
            for (const auto& sg : seg_set)
                if (sg.first != hub && sg.second != hub && (inside(sg.first) || inside(sg.second)))
                    removed.push_back(sg);
            for (const auto& sg : removed) {
                seg_set.erase(sg);
                for (int w : {sg.first, sg.second})
                    if (!inside(w))
                        add_seg(hub, w);
            }
        }
    }

    // Graph assembly.
    const int nv = int(pts.size());
    std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(nv)); // (neighbour, segment)
    std::vector<detail::Segment> segs;
    for (const auto& [a, b] : seg_set) {
        adj[std::size_t(a)].push_back({b, int(segs.size())});
        adj[std::size_t(b)].push_back({a, int(segs.size())});
        segs.push_back({a, b});
    }

    std::vector<char> used(segs.size(), 0);
    std::vector<std::vector<int>> paths; // vertex sequences
    auto walk = [&](int start, int first_seg) {
        std::vector<int> path{start};
        int cur = start, seg = first_seg;
        for (;;) {
            used[std::size_t(seg)] = 1;
            const detail::Segment& s = segs[std::size_t(seg)];
            const int nxt = s.a == cur ? s.b : s.a;
            path.push_back(nxt);
            if (adj[std::size_t(nxt)].size() != 2)
                break;
            int next_seg = -1;
            for (const auto& [nb, sid] : adj[std::size_t(nxt)])
                if (!used[std::size_t(sid)])
                    next_seg = sid;
            if (next_seg < 0)
                break;
            cur = nxt;
            seg = next_seg;
        }
        return path;
    };
    for (int vtx = 0; vtx < nv; ++vtx) {
        if (adj[std::size_t(vtx)].size() == 2 || adj[std::size_t(vtx)].empty())
            continue;
        for (const auto& [nb, sid] : adj[std::size_t(vtx)])
            if (!used[std::size_t(sid)])
                paths.push_back(walk(vtx, sid));
    }
    const std::size_t open_paths = paths.size();
    for (std::size_t sid = 0; sid < segs.size(); ++sid)
        if (!used[sid])
            paths.push_back(walk(segs[sid].a, int(sid)));

    // Pair path ends at junctions by straightness.
    std::vector<std::array<std::pair<int, int>, 2>> link(paths.size(), {std::pair{-1, -1}, std::pair{-1, -1}});
    std::unordered_map<int, std::vector<std::pair<int, int>>> ends_at; // junction -> (path, end)
    for (std::size_t p = 0; p < open_paths; ++p) {
        const auto& path = paths[p];
        if (adj[std::size_t(path.front())].size() >= 3)
            ends_at[path.front()].push_back({int(p), 0});
        if (adj[std::size_t(path.back())].size() >= 3)
            ends_at[path.back()].push_back({int(p), 1});
    }
    auto direction = [&](int p, int end) {
        const auto& path = paths[std::size_t(p)];
        const Vec2 origin = pts[std::size_t(end == 0 ? path.front() : path.back())];
        Vec2 d;
        for (std::size_t k = 1; k < path.size(); ++k) {
            const int idx = end == 0 ? path[k] : path[path.size() - 1 - k];
            d = delta(origin, pts[std::size_t(idx)]);
            if (norm(d) >= 3.0)
                break;
        }
        return normalized(d);
    };
    std::vector<int> junctions;
    for (const auto& [vtx, list] : ends_at)
        junctions.push_back(vtx);
    std::sort(junctions.begin(), junctions.end());
    for (int vtx : junctions) {
        const auto& list = ends_at[vtx];
        if (adj[std::size_t(vtx)].size() >= 3 &&
            std::find_if(out.branch_points.begin(), out.branch_points.end(),
                         [&](const Vec2& q) { return q == pts[std::size_t(vtx)]; }) == out.branch_points.end())
            out.branch_points.push_back(pts[std::size_t(vtx)]);
        std::vector<Vec2> dirs;
        for (const auto& [p, e] : list)
            dirs.push_back(direction(p, e));
        struct Cand {
            double dot;
            std::size_t a, b;
        };
        std::vector<Cand> cands;
        for (std::size_t a = 0; a < list.size(); ++a)
            for (std::size_t b = a + 1; b < list.size(); ++b)
                if (list[a].first != list[b].first || list[a].second != list[b].second)
                    cands.push_back({dot(dirs[a], dirs[b]), a, b});
        std::sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) {
            return l.dot < r.dot || (l.dot == r.dot && std::pair(l.a, l.b) < std::pair(r.a, r.b));
        });
        std::vector<char> taken(list.size(), 0);
        for (const Cand& c : cands) {
            if (taken[c.a] || taken[c.b] || c.dot > -0.5)
                continue;
            taken[c.a] = taken[c.b] = 1;
            link[std::size_t(list[c.a].first)][std::size_t(list[c.a].second)] = list[c.b];
            link[std::size_t(list[c.b].first)][std::size_t(list[c.b].second)] = list[c.a];
        }
    }

    // Chains of linked paths become branches.
    std::vector<char> visited(paths.size(), 0);
    auto build = [&](std::size_t start, int enter_end) {
        CurveBranch br;
        std::vector<int> verts;
        std::size_t p = start;
        int e = enter_end;
        for (;;) {
            visited[p] = 1;
            const auto& path = paths[p];
            const std::size_t m = path.size();
            for (std::size_t k = 0; k < m; ++k) {
                const int idx = e == 0 ? path[k] : path[m - 1 - k];
                if (!verts.empty() && verts.back() == idx)
                    continue;
                verts.push_back(idx);
            }
            const auto nxt = link[p][std::size_t(1 - e)];
            if (nxt.first < 0)
                break;
            if (visited[std::size_t(nxt.first)]) {
                if (std::size_t(nxt.first) == start && nxt.second == enter_end)
                    br.closed = true;
                break;
            }
            p = std::size_t(nxt.first);
            e = nxt.second;
        }
        if (p >= open_paths && p == start && paths[p].front() == paths[p].back())
            br.closed = true;
        if (br.closed && verts.size() > 1 && verts.front() == verts.back())
            verts.pop_back();
        if (periodic)
            br.xi_period = period;
        Vec2 prev;
        for (std::size_t k = 0; k < verts.size(); ++k) {
            Vec2 q = pts[std::size_t(verts[k])];
            if (periodic && k > 0) {
                while (q.x - prev.x > period / 2)
                    q.x -= period;
                while (q.x - prev.x < -period / 2)
                    q.x += period;
            }
            br.params.push_back(q);
            prev = q;
        }
        return br;
    };
    for (std::size_t p = 0; p < paths.size(); ++p) {
        if (visited[p])
            continue;
        if (link[p][0].first < 0)
            out.branches.push_back(build(p, 0));
        else if (link[p][1].first < 0)
            out.branches.push_back(build(p, 1));
    }
    for (std::size_t p = 0; p < paths.size(); ++p)
        if (!visited[p])
            out.branches.push_back(build(p, 0));
    // Deterministic order: by first parameter point.
    std::stable_sort(out.branches.begin(), out.branches.end(), [](const CurveBranch& a, const CurveBranch& b) {
        const Vec2 pa = *std::min_element(a.params.begin(), a.params.end(),
                                          [](const Vec2& l, const Vec2& r) { return std::pair(l.x, l.y) < std::pair(r.x, r.y); });
        const Vec2 pb = *std::min_element(b.params.begin(), b.params.end(),
                                          [](const Vec2& l, const Vec2& r) { return std::pair(l.x, l.y) < std::pair(r.x, r.y); });
        return std::pair(pa.x, pa.y) < std::pair(pb.x, pb.y);
    });
    for (std::size_t k = 0; k < out.branches.size(); ++k)
        out.branches[k].label = int(k);
    return out;
}

/// Evaluates det Df fast: compiled expression when available, Jacobian otherwise.
class DeterminantField {
public:
    explicit DeterminantField(const PlaneMapGerm& f) : f_(f)
    {
        const JacobianDeterminant d(f);
        if (d.expression()) {
            det_ = CompiledExpr(*d.expression());
            has_expr_ = true;
        }
    }
    double operator()(double xi, double t) const { return has_expr_ ? det_(xi, t) : f_.det(xi, t); }

private:
    PlaneMapGerm f_;
    CompiledExpr det_;
    bool has_expr_ = false;
};

/// Criminant set det Df = 0 of f on `box`.
inline TraceResult trace_criminant(const PlaneMapGerm& f, const Box& box, const TraceOptions& opt = {})
{
    if (opt.grid < 64)
        throw std::invalid_argument("grid must be at least 64");
    return trace_zero_set(DeterminantField(f), box, opt);
}

/// Unit tangents of a polyline by central differences.
inline std::vector<Vec2> polyline_tangents(const std::vector<Vec2>& p, bool closed)
{
    const std::size_t m = p.size();
    std::vector<Vec2> t(m);
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t a = k == 0 ? (closed ? m - 1 : 0) : k - 1;
        std::size_t b = k + 1 == m ? (closed ? 0 : m - 1) : k + 1;
        t[k] = normalized(p[b] - p[a]);
    }
    return t;
}

struct Cusp {
    Vec2 point;
    Vec2 param;
    int branch = 0;
    double depth = 0.0; ///< min |Df tau| relative to the branch median
};

struct SelfIntersection {
    Vec2 point;
    int branch_a = 0, branch_b = 0;
    double angle = 0.0;
};

struct SelfTangency {
    Vec2 point;
    int branch_a = 0, branch_b = 0;
    int contact_order = -1; ///< -1 when the estimate failed
    bool at_least = false;
    std::string note;
};

struct EnvelopeReport {
    std::vector<CurveBranch> branches;
    std::vector<Cusp> cusps;
    std::vector<SelfIntersection> intersections;
    std::vector<SelfTangency> tangencies;
    std::vector<Vec2> branch_points;
    std::vector<Vec2> ambiguous_cells;
    int support_branch = -1;
    double cell_xi = 0.0, cell_t = 0.0;
};

/// Images of the traced branches; the branch along t = 0 is marked as the support.
inline EnvelopeReport map_to_envelope(const PlaneMapGerm& f, const TraceResult& trace)
{
    EnvelopeReport rep;
    rep.branches = trace.branches;
    rep.branch_points = trace.branch_points;
    rep.ambiguous_cells = trace.ambiguous_cells;
    rep.cell_xi = trace.cell_xi;
    rep.cell_t = trace.cell_t;
    for (CurveBranch& b : rep.branches) {
        b.image.resize(b.params.size());
        parallel_for(b.params.size(), [&](std::size_t k) { b.image[k] = f.raw(b.params[k].x, b.params[k].y); });
        b.tangents = polyline_tangents(b.image, b.closed);
        double tmax = 0.0;
        for (const Vec2& q : b.params)
            tmax = std::max(tmax, std::fabs(q.y));
        b.support = tmax < 0.25 * trace.cell_t;
    }
    std::size_t longest = 0;
    for (std::size_t k = 0; k < rep.branches.size(); ++k)
        if (rep.branches[k].support && (rep.support_branch < 0 || rep.branches[k].size() > longest)) {
            rep.support_branch = int(k);
            longest = rep.branches[k].size();
        }
    return rep;
}

namespace detail {

/// Gradient of det Df by central differences.
inline Vec2 det_gradient(const PlaneMapGerm& f, Vec2 p, double h)
{
    return {(f.det(p.x + h, p.y) - f.det(p.x - h, p.y)) / (2 * h),
            (f.det(p.x, p.y + h) - f.det(p.x, p.y - h)) / (2 * h)};
}

} // namespace detail

/// Cusps on one envelope branch: the pushforward of the criminant tangent vanishes and
/// the image direction reverses.
inline std::vector<Cusp> detect_cusps(const PlaneMapGerm& f, const CurveBranch& branch, double fd_step = 1e-6)
{
    std::vector<Cusp> out;
    const std::size_t m = branch.params.size();
    if (m < 20)
        return out;
    const bool closed = branch.closed;
    const double period = closed ? branch.xi_period : 0.0;
    auto diff = [&](const std::vector<Vec2>& P, std::size_t a, std::size_t b) {
        Vec2 d = P[b] - P[a];
        if (period > 0)
            d.x -= period * std::round(d.x / period);
        return d;
    };
    // v_k = Df(p_k) tau_k with tau along the parameter polyline.
    auto pushforwards = [&](const std::vector<Vec2>& P, std::vector<Vec2>& v, std::vector<double>& speed) {
        v.assign(m, {});
        speed.assign(m, 0.0);
        parallel_for(m, [&](std::size_t k) {
            const std::size_t a = k == 0 ? (closed ? m - 1 : 0) : k - 1;
            const std::size_t b = k + 1 == m ? (closed ? 0 : m - 1) : k + 1;
            const Vec2 tau = normalized(diff(P, a, b));
            v[k] = f.jacobian(P[k].x, P[k].y) * tau;
            speed[k] = norm(v[k]);
        });
    };
    CurveBranch br = branch;
    std::vector<Vec2> v;
    std::vector<double> speed;
    pushforwards(br.params, v, speed);
    if (closed) {
        // Start at the fastest vertex so the seam cannot hide a cusp.
        const std::size_t k0 = std::size_t(std::max_element(speed.begin(), speed.end()) - speed.begin());
        std::rotate(br.params.begin(), br.params.begin() + long(k0), br.params.end());
        std::rotate(v.begin(), v.begin() + long(k0), v.end());
        std::rotate(speed.begin(), speed.begin() + long(k0), speed.end());
        for (std::size_t k = 1; k < m && period > 0; ++k)
            br.params[k].x -= period * std::round((br.params[k].x - br.params[k - 1].x) / period);
    }
    std::vector<double> sorted = speed;
    std::nth_element(sorted.begin(), sorted.begin() + long(m / 2), sorted.end());
    const double median = sorted[m / 2];
    if (median <= 0)
        return out;
    const std::size_t half = 3;
    // Arc-length parameterization of the criminant polyline.
    std::vector<double> s(m, 0.0);
    for (std::size_t k = 1; k < m; ++k)
        s[k] = s[k - 1] + norm(br.params[k] - br.params[k - 1]);
    auto point_at = [&](double sv) {
        auto it = std::upper_bound(s.begin(), s.end(), sv);
        std::size_t k = it == s.begin() ? 0 : std::size_t(it - s.begin()) - 1;
        k = std::min(k, m - 2);
        const double len = s[k + 1] - s[k];
        const double w = len > 0 ? (sv - s[k]) / len : 0.0;
        Vec2 p = br.params[k] * (1 - w) + br.params[k + 1] * w;
        // Project back onto det = 0.
        for (int it2 = 0; it2 < 3; ++it2) {
            const Vec2 g = detail::det_gradient(f, p, fd_step);
            const double gg = dot(g, g);
            if (gg == 0)
                break;
            p -= (f.det(p.x, p.y) / gg) * g;
        }
        return p;
    };
    auto pushforward = [&](const Vec2& p) {
        const Vec2 tau = normalized(perp(detail::det_gradient(f, p, fd_step)));
        return norm(f.jacobian(p.x, p.y) * tau);
    };
    const std::size_t last = closed ? m : m - 1;
    for (std::size_t k = 0; k < last; ++k) {
        const std::size_t k1 = (k + 1) % m;
        if (!closed && (k < half || k1 + half >= m))
            continue;
        if (dot(v[k], v[k1]) >= 0)
            continue;
        if (closed && k1 == 0)
            continue; // seam; its neighbours cover it
        const std::size_t a = k == 0 ? 0 : k - 1;
        const std::size_t b = std::min(m - 1, k1 + 1);
        double lo = s[a], hi = s[b];
        const double gr = 0.5 * (std::sqrt(5.0) - 1);
        double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
        double fc = pushforward(point_at(c)), fd = pushforward(point_at(d));
        for (int it = 0; it < 60 && hi - lo > 1e-13 * (1 + std::fabs(hi)); ++it) {
            if (fc < fd) {
                hi = d;
                d = c;
                fd = fc;
                c = hi - gr * (hi - lo);
                fc = pushforward(point_at(c));
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + gr * (hi - lo);
                fd = pushforward(point_at(d));
            }
        }
        const double sm = 0.5 * (lo + hi);
        const Vec2 p = point_at(sm);
        const double depth = pushforward(p) / median;
        if (depth < 1e-4)
            out.push_back({f.raw(p.x, p.y), p, br.label, depth});
    }
    return out;
}

namespace detail {

struct SegRef {
    int branch;
    int index;
    Vec2 p, q;
};

inline std::vector<SegRef> all_segments(const std::vector<CurveBranch>& branches)
{
    std::vector<SegRef> segs;
    for (const CurveBranch& b : branches) {
        const std::size_t m = b.image.size();
        if (m < 2)
            continue;
        const std::size_t count = b.closed ? m : m - 1;
        for (std::size_t k = 0; k < count; ++k)
            segs.push_back({b.label, int(k), b.image[k], b.image[(k + 1) % m]});
    }
    return segs;
}

/// Candidate segment pairs whose bounding boxes, grown by `pad`, share a hash cell.
inline std::vector<std::pair<int, int>> broad_phase(const std::vector<SegRef>& segs, double pad)
{
    if (segs.empty())
        return {};
    double total = 0.0;
    Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (const SegRef& s : segs) {
        total += norm(s.q - s.p);
        for (const Vec2& x : {s.p, s.q}) {
            lo = {std::min(lo.x, x.x), std::min(lo.y, x.y)};
            hi = {std::max(hi.x, x.x), std::max(hi.y, x.y)};
        }
    }
    const double diag = std::max(norm(hi - lo), 1e-12);
    const double cell = std::max(4.0 * total / double(segs.size()), 1e-3 * diag);
    std::unordered_map<long long, std::vector<int>> grid;
    auto key = [&](long long i, long long j) { return i * 2000003LL + j; };
    for (std::size_t n = 0; n < segs.size(); ++n) {
        const SegRef& s = segs[n];
        const long long i0 = (long long)std::floor((std::min(s.p.x, s.q.x) - pad - lo.x) / cell);
        const long long i1 = (long long)std::floor((std::max(s.p.x, s.q.x) + pad - lo.x) / cell);
        const long long j0 = (long long)std::floor((std::min(s.p.y, s.q.y) - pad - lo.y) / cell);
        const long long j1 = (long long)std::floor((std::max(s.p.y, s.q.y) + pad - lo.y) / cell);
        for (long long i = i0; i <= i1; ++i)
            for (long long j = j0; j <= j1; ++j)
                grid[key(i, j)].push_back(int(n));
    }
    std::set<std::pair<int, int>> pairs;
    for (const auto& [k, list] : grid)
        for (std::size_t a = 0; a < list.size(); ++a)
            for (std::size_t b = a + 1; b < list.size(); ++b)
                pairs.insert({std::min(list[a], list[b]), std::max(list[a], list[b])});
    return {pairs.begin(), pairs.end()};
}

inline double point_segment_distance(Vec2 x, Vec2 p, Vec2 q, Vec2* closest = nullptr)
{
    const Vec2 d = q - p;
    const double dd = dot(d, d);
    double w = dd > 0 ? dot(x - p, d) / dd : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    const Vec2 c = p + d * w;
    if (closest)
        *closest = c;
    return norm(x - c);
}

/// Closest distance between segments and the midpoint of the closest pair.
inline double segment_distance(const SegRef& a, const SegRef& b, Vec2* where)
{
    const Vec2 r = a.q - a.p, w = b.q - b.p;
    const double den = cross(r, w);
    if (den != 0.0) {
        const double s = cross(b.p - a.p, w) / den;
        const double u = cross(b.p - a.p, r) / den;
        if (s >= 0 && s <= 1 && u >= 0 && u <= 1) {
            *where = a.p + r * s;
            return 0.0;
        }
    }
    double best = 1e300;
    Vec2 c;
    auto consider = [&](Vec2 x, Vec2 p, Vec2 q) {
        Vec2 cc;
        const double dist = point_segment_distance(x, p, q, &cc);
        if (dist < best) {
            best = dist;
            c = (x + cc) * 0.5;
        }
    };
    consider(a.p, b.p, b.q);
    consider(a.q, b.p, b.q);
    consider(b.p, a.p, a.q);
    consider(b.q, a.p, a.q);
    *where = c;
    return best;
}

inline double segment_angle(const SegRef& a, const SegRef& b)
{
    const Vec2 r = normalized(a.q - a.p), w = normalized(b.q - b.p);
    return std::asin(std::min(1.0, std::fabs(cross(r, w))));
}

inline bool adjacent(const SegRef& a, const SegRef& b, const std::vector<CurveBranch>& branches)
{
    if (a.branch != b.branch)
        return false;
    const int m = int(branches[std::size_t(a.branch)].image.size());
    const int d = std::abs(a.index - b.index);
    return d <= 1 || (branches[std::size_t(a.branch)].closed && d >= m - 1);
}

} // namespace detail

/// Transversal crossings between envelope segments (crossing angle above 1e-3 rad).
inline std::vector<SelfIntersection> detect_self_intersections(const EnvelopeReport& rep)
{
    const auto segs = detail::all_segments(rep.branches);
    std::vector<SelfIntersection> out;
    double scale = 0.0;
    for (const auto& s : segs)
        scale = std::max({scale, std::fabs(s.p.x), std::fabs(s.p.y)});
    const double merge = 1e-9 * std::max(1.0, scale);
    for (const auto& [ia, ib] : detail::broad_phase(segs, 0.0)) {
        const detail::SegRef& a = segs[std::size_t(ia)];
        const detail::SegRef& b = segs[std::size_t(ib)];
        if (detail::adjacent(a, b, rep.branches))
            continue;
        const Vec2 r = a.q - a.p, w = b.q - b.p;
        const double den = cross(r, w);
        if (den == 0.0)
            continue;
        const double s = cross(b.p - a.p, w) / den;
        const double u = cross(b.p - a.p, r) / den;
        if (s < 0 || s > 1 || u < 0 || u > 1)
            continue;
        const double angle = detail::segment_angle(a, b);
        if (angle <= 1e-3)
            continue;
        const Vec2 p = a.p + r * s;
        const int ba = std::min(a.branch, b.branch), bb = std::max(a.branch, b.branch);
        const bool dup = std::any_of(out.begin(), out.end(), [&](const SelfIntersection& x) {
            return x.branch_a == ba && x.branch_b == bb && distance(x.point, p) <= merge;
        });
        if (!dup)
            out.push_back({p, ba, bb, angle});
    }
    std::sort(out.begin(), out.end(), [](const SelfIntersection& l, const SelfIntersection& r) {
        return std::pair(l.point.x, l.point.y) < std::pair(r.point.x, r.point.y);
    });
    return out;
}

class ContactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ContactOrder {
    int order = 0;
    bool at_least = false; ///< reported as ">= 4"
};

namespace detail {

/// Vertices of a branch forming a graph over the X axis of the frame around the vertex
/// closest to p, within |X| <= R.
inline std::vector<Vec2> local_graph(const CurveBranch& b, Vec2 p, Vec2 ex, Vec2 ey, double R)
{
    const std::size_t m = b.image.size();
    std::size_t c = 0;
    double best = 1e300;
    for (std::size_t k = 0; k < m; ++k) {
        const double d = distance(b.image[k], p);
        if (d < best) {
            best = d;
            c = k;
        }
    }
    auto local = [&](std::size_t k) {
        const Vec2 d = b.image[k] - p;
        return Vec2{dot(d, ex), dot(d, ey)};
    };
    std::vector<Vec2> pts{local(c)};
    for (int dir : {-1, 1}) {
        double lastx = pts.front().x;
        std::size_t k = c;
        for (std::size_t steps = 0; steps < m; ++steps) {
            if (dir < 0) {
                if (k == 0) {
                    if (!b.closed)
                        break;
                    k = m;
                }
                --k;
            } else {
                ++k;
                if (k == m) {
                    if (!b.closed)
                        break;
                    k = 0;
                }
            }
            if (k == c)
                break;
            const Vec2 q = local(k);
            if (std::fabs(q.x) > R || norm(q) > 1.5 * R)
                break;
            // Stop where the branch folds back over the tangent line.
            if (steps > 0 && (q.x - lastx) * (pts.back().x - pts.front().x) < 0 && dir > 0)
                break;
            lastx = q.x;
            pts.push_back(q);
        }
        if (dir < 0)
            std::reverse(pts.begin(), pts.end());
    }
    std::sort(pts.begin(), pts.end(), [](const Vec2& l, const Vec2& r) { return l.x < r.x; });
    return pts;
}

struct Fit {
    Eigen::VectorXd coef; ///< in powers of X / R
    double rms = 0.0;
};

inline Fit fit_graph(const std::vector<Vec2>& pts, double R, int count = 20, int degree = 5)
{
    std::vector<Vec2> sel;
    if (int(pts.size()) <= count) {
        sel = pts;
    } else {
        for (int i = 0; i < count; ++i)
            sel.push_back(pts[std::size_t(std::llround(double(i) * double(pts.size() - 1) / double(count - 1)))]);
    }
    if (int(sel.size()) < degree + 3)
        throw ContactError("window too short for a degree-" + std::to_string(degree) + " fit");
    Eigen::MatrixXd A(long(sel.size()), degree + 1);
    Eigen::VectorXd y(long(sel.size()));
    for (std::size_t i = 0; i < sel.size(); ++i) {
        const double u = sel[i].x / R;
        double pw = 1.0;
        for (int k = 0; k <= degree; ++k) {
            A(long(i), k) = pw;
            pw *= u;
        }
        y(long(i)) = sel[i].y;
    }
    Fit f;
    f.coef = A.colPivHouseholderQr().solve(y);
    f.rms = std::sqrt((A * f.coef - y).squaredNorm() / double(sel.size()));
    return f;
}

} // namespace detail

/// Contact order of two branches touching at p, from degree-5 graph fits over their
/// common tangent line.
inline ContactOrder contact_order(const CurveBranch& A, const CurveBranch& B, Vec2 p)
{
    auto nearest = [&](const CurveBranch& b, double* dist) {
        std::size_t best = 0;
        double bd = 1e300;
        for (std::size_t k = 0; k < b.image.size(); ++k) {
            const double d = distance(b.image[k], p);
            if (d < bd) {
                bd = d;
                best = k;
            }
        }
        // Distance to the polyline, not only to vertices.
        double seg = bd;
        for (std::size_t k = best == 0 ? 0 : best - 1; k + 1 < b.image.size() && k <= best; ++k)
            seg = std::min(seg, detail::point_segment_distance(p, b.image[k], b.image[k + 1]));
        *dist = seg;
        return best;
    };
    if (A.image.size() < 2 || B.image.size() < 2)
        throw ContactError("branches need images");
    double da, db;
    const std::size_t ka = nearest(A, &da), kb = nearest(B, &db);
    double diag = 0.0;
    {
        Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
        for (const CurveBranch* b : {&A, &B})
            for (const Vec2& q : b->image) {
                lo = {std::min(lo.x, q.x), std::min(lo.y, q.y)};
                hi = {std::max(hi.x, q.x), std::max(hi.y, q.y)};
            }
        diag = norm(hi - lo);
    }
    if (da > 1e-6 * std::max(1.0, diag) || db > 1e-6 * std::max(1.0, diag))
        throw ContactError("branches do not pass within 1e-6 of the point");
    auto tangent = [&](const CurveBranch& b, std::size_t k) {
        const std::size_t m = b.image.size();
        const std::size_t lo = k >= 2 ? k - 2 : 0, hi = std::min(m - 1, k + 2);
        return normalized(b.image[hi] - b.image[lo]);
    };
    Vec2 ta = tangent(A, ka), tb = tangent(B, kb);
    if (dot(ta, tb) < 0)
        tb = -tb;
    if (std::asin(std::min(1.0, std::fabs(cross(ta, tb)))) > 1e-3)
        throw ContactError("branch tangents are not parallel");
    const Vec2 ex = normalized(ta + tb), ey = perp(ex);
    double R = 0.1 * diag;
    for (int attempt = 0; attempt < 8; ++attempt, R *= 0.5) {
        const auto pa = detail::local_graph(A, p, ex, ey, R);
        const auto pb = detail::local_graph(B, p, ex, ey, R);
        detail::Fit fa, fb;
        try {
            fa = detail::fit_graph(pa, R);
            fb = detail::fit_graph(pb, R);
        } catch (const ContactError&) {
            if (attempt == 7)
                throw;
            continue;
        }
        if (fa.rms > 1e-6 * R || fb.rms > 1e-6 * R) {
            if (attempt == 7)
                throw ContactError("fit residual too large");
            continue;
        }
        for (int k = 0; k <= 5; ++k)
            if (std::fabs(fa.coef(k) - fb.coef(k)) > 1e-4 * R) {
                if (k == 0)
                    throw ContactError("branches do not touch at the point");
                return {k - 1, false};
            }
        return {4, true};
    }
    throw ContactError("no usable window");
}

/// Near-touching, parallel segment pairs grouped into self-tangencies.
inline std::vector<SelfTangency> detect_self_tangencies(const EnvelopeReport& rep, const std::vector<Cusp>& cusps)
{
    const auto segs = detail::all_segments(rep.branches);
    double scale = 0.0;
    Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (const auto& s : segs) {
        scale = std::max({scale, std::fabs(s.p.x), std::fabs(s.p.y)});
        lo = {std::min(lo.x, s.p.x), std::min(lo.y, s.p.y)};
        hi = {std::max(hi.x, s.p.x), std::max(hi.y, s.p.y)};
    }
    const double diag = norm(hi - lo);
    const double touch = 1e-6 * std::max(1.0, scale);
    // Arc length along each branch, to skip neighbouring segments of the same branch.
    std::vector<std::vector<double>> arc(rep.branches.size());
    std::vector<double> cell_len(rep.branches.size(), 0.0);
    for (std::size_t b = 0; b < rep.branches.size(); ++b) {
        const auto& img = rep.branches[b].image;
        arc[b].assign(img.size() + 1, 0.0);
        for (std::size_t k = 1; k <= img.size(); ++k)
            arc[b][k] = arc[b][k - 1] + (k < img.size() ? distance(img[k], img[k - 1]) : 0.0);
        cell_len[b] = img.size() > 1 ? arc[b][img.size() - 1] / double(img.size() - 1) : 0.0;
    }
    struct Cand {
        Vec2 p;
        double d;
        int ba, bb;
    };
    std::vector<Cand> cands;
    for (const auto& [ia, ib] : detail::broad_phase(segs, touch)) {
        const detail::SegRef& a = segs[std::size_t(ia)];
        const detail::SegRef& b = segs[std::size_t(ib)];
        if (detail::adjacent(a, b, rep.branches))
            continue;
        if (a.branch == b.branch) {
            const auto& s = arc[std::size_t(a.branch)];
            double sep = std::fabs(s[std::size_t(a.index)] - s[std::size_t(b.index)]);
            if (rep.branches[std::size_t(a.branch)].closed)
                sep = std::min(sep, s.back() - sep);
            if (sep < 20 * cell_len[std::size_t(a.branch)] + 1e-12)
                continue;
        }
        Vec2 where;
        const double d = detail::segment_distance(a, b, &where);
        if (d >= touch || detail::segment_angle(a, b) >= 1e-3)
            continue;
        if (a.branch == b.branch &&
            std::any_of(cusps.begin(), cusps.end(), [&](const Cusp& c) {
                return c.branch == a.branch && distance(c.point, where) < 0.05 * diag;
            }))
            continue;
        cands.push_back({where, d, std::min(a.branch, b.branch), std::max(a.branch, b.branch)});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) {
        return l.d < r.d || (l.d == r.d && std::pair(l.p.x, l.p.y) < std::pair(r.p.x, r.p.y));
    });
    std::vector<SelfTangency> out;
    for (const Cand& c : cands) {
        const bool near = std::any_of(out.begin(), out.end(), [&](const SelfTangency& t) {
            return t.branch_a == c.ba && t.branch_b == c.bb && distance(t.point, c.p) < 0.05 * diag;
        });
        if (near)
            continue;
        SelfTangency t;
        t.point = c.p;
        t.branch_a = c.ba;
        t.branch_b = c.bb;
        try {
            const ContactOrder o = contact_order(rep.branches[std::size_t(c.ba)], rep.branches[std::size_t(c.bb)], c.p);
            t.contact_order = o.order;
            t.at_least = o.at_least;
        } catch (const ContactError& e) {
            t.note = e.what();
        }
        out.push_back(t);
    }
    std::sort(out.begin(), out.end(), [](const SelfTangency& l, const SelfTangency& r) {
        return std::pair(l.point.x, l.point.y) < std::pair(r.point.x, r.point.y);
    });
    return out;
}

/// Full census: criminant, envelope images, cusps, crossings and self-tangencies.
inline EnvelopeReport analyze_envelope(const PlaneMapGerm& f, const Box& box, const TraceOptions& opt = {})
{
    EnvelopeReport rep = map_to_envelope(f, trace_criminant(f, box, opt));
    for (const CurveBranch& b : rep.branches) {
        auto c = detect_cusps(f, b);
        rep.cusps.insert(rep.cusps.end(), c.begin(), c.end());
    }
    std::sort(rep.cusps.begin(), rep.cusps.end(), [](const Cusp& l, const Cusp& r) {
        return std::pair(l.point.x, l.point.y) < std::pair(r.point.x, r.point.y);
    });
    rep.intersections = detect_self_intersections(rep);
    rep.tangencies = detect_self_tangencies(rep, rep.cusps);
    return rep;
}

/// Symmetric Hausdorff distance between polylines (vertices against segments).
inline double hausdorff(const std::vector<Vec2>& a, const std::vector<Vec2>& b)
{
    auto one_sided = [](const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
        double worst = 0.0;
        for (const Vec2& x : from) {
            double best = 1e300;
            if (to.size() == 1)
                best = distance(x, to[0]);
            for (std::size_t k = 0; k + 1 < to.size(); ++k)
                best = std::min(best, detail::point_segment_distance(x, to[k], to[k + 1]));
            worst = std::max(worst, best);
        }
        return worst;
    };
    if (a.empty() || b.empty())
        return std::numeric_limits<double>::infinity();
    return std::max(one_sided(a, b), one_sided(b, a));
}

} // namespace tangfam
