"""Per-mini-slot precoder optimization for a fixed IRS codeword selection.

For every possible set of active URLLC users, the eMBB sum rate is maximized
subject to the per-user URLLC SINR targets (C1) and the per-mini-slot power
budget (C2). The nonconvexity is handled with successive convex
approximation: received powers |h^H w|^2 on the favourable side of a
constraint are replaced by their first-order lower bound at the incumbent,
eMBB SINRs are split with auxiliary (chi, d) variables whose bilinear
coupling is convexified the same way, and the resulting smooth convex
programs go to the barrier solver. The per-set problems share no variables
or constraints (the probability weights only scale their objectives), so
they are solved independently.

Feasible starting points come from a max-min margin problem, also solved by
SCA, initialized at maximum-ratio transmission with URLLC power shares
proportional to the SINR targets. Instances whose margin stays negative are
declared outages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, composite_channel
from .convex_core import (
    BoxBounds,
    ConvexQuadratic,
    ConvexSubproblem,
    SolveReport,
    Status,
    complex_to_real,
    inner_product_rows,
    log_sum_objective,
    linear_objective,
    real_to_complex,
    solve_convex,
)
from .fbl import UrllcRequirement
from .scenario import ActiveSetTable

__all__ = [
    "PrecoderSet",
    "EffectiveLinks",
    "effective_links",
    "links_from_composite",
    "sinr",
    "set_objective",
    "total_objective",
    "linearize_received_power",
    "build_p1_surrogate",
    "optimize_precoders",
    "find_feasible_precoders",
    "verify_feasible",
    "FeasibilityResult",
    "PrecoderOptReport",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class PrecoderSet:
    """One beamforming vector per user per active URLLC set.

    w_urllc rows of users not contained in a set are zero and ignored.
    """

    w_embb: np.ndarray  # (L, E, N_T) complex
    w_urllc: np.ndarray  # (L, U, N_T) complex

    @property
    def num_sets(self) -> int:
        return self.w_embb.shape[0]

    def vector(self, kind: str, idx: int, set_idx: int) -> np.ndarray:
        arr = self.w_embb if kind == "embb" else self.w_urllc
        return arr[set_idx, idx]

    def set_power(self, set_idx: int, active: tuple[int, ...]) -> float:
        p = float(np.sum(np.abs(self.w_embb[set_idx]) ** 2))
        for j in active:
            p += float(np.sum(np.abs(self.w_urllc[set_idx, j]) ** 2))
        return p

    @classmethod
    def zeros(cls, num_sets: int, num_embb: int, num_urllc: int, n_t: int) -> "PrecoderSet":
        return cls(
            w_embb=np.zeros((num_sets, num_embb, n_t), dtype=complex),
            w_urllc=np.zeros((num_sets, num_urllc, n_t), dtype=complex),
        )


@dataclass
class EffectiveLinks:
    """Composite per-user channels for the current codeword selection."""

    h_embb: np.ndarray  # (E, N_T)
    h_urllc: np.ndarray  # (U, N_T)
    noise_power: float
    sets: ActiveSetTable
    _gram: dict = field(default_factory=dict, repr=False)

    @property
    def num_embb(self) -> int:
        return self.h_embb.shape[0]

    @property
    def num_urllc(self) -> int:
        return self.h_urllc.shape[0]

    @property
    def n_t(self) -> int:
        return self.h_embb.shape[1] if self.num_embb else self.h_urllc.shape[1]

    def channel(self, kind: str, idx: int) -> np.ndarray:
        return self.h_embb[idx] if kind == "embb" else self.h_urllc[idx]

    def gram(self, kind: str, idx: int) -> np.ndarray:
        """Cached outer product h h^H of a composite channel."""
        key = (kind, idx)
        if key not in self._gram:
            h = self.channel(kind, idx)
            self._gram[key] = np.outer(h, h.conj())
        return self._gram[key]

    def normalized(self) -> "EffectiveLinks":
        """Channels scaled by 1/sigma so the noise power becomes one.

        SINRs are invariant; the rescaling keeps solver numerics well
        conditioned (raw powers sit 14 orders of magnitude below 1 W).
        """
        s = math.sqrt(self.noise_power)
        return EffectiveLinks(
            h_embb=self.h_embb / s,
            h_urllc=self.h_urllc / s,
            noise_power=1.0,
            sets=self.sets,
        )

    def members(self, set_idx: int) -> list[tuple[str, int]]:
        """Users transmitting in a given active set (eMBB always)."""
        out = [("embb", i) for i in range(self.num_embb)]
        out.extend(("urllc", j) for j in self.sets.sets[set_idx])
        return out


def effective_links(
    channels: ChannelSet, selection, noise_power: float, sets: ActiveSetTable
) -> EffectiveLinks:
    """Build composite links from a binary codeword selection."""
    if channels.h_eff is None:
        raise ValueError("channel set has no effective channels attached")
    h = composite_channel(channels.v, selection, channels.h_eff)
    kinds = channels.user_traffic_type
    e_idx = [k for k, t in enumerate(kinds) if t == "embb"]
    u_idx = [k for k, t in enumerate(kinds) if t == "urllc"]
    return EffectiveLinks(
        h_embb=h[e_idx], h_urllc=h[u_idx], noise_power=noise_power, sets=sets
    )


def links_from_composite(
    h_users: np.ndarray,
    traffic_types: tuple[str, ...],
    noise_power: float,
    sets: ActiveSetTable,
) -> EffectiveLinks:
    """Links from explicitly given composite channels (IRS-free baselines)."""
    e_idx = [k for k, t in enumerate(traffic_types) if t == "embb"]
    u_idx = [k for k, t in enumerate(traffic_types) if t == "urllc"]
    return EffectiveLinks(
        h_embb=h_users[e_idx], h_urllc=h_users[u_idx],
        noise_power=noise_power, sets=sets,
    )


def sinr(pre: PrecoderSet, links: EffectiveLinks, kind: str, idx: int, set_idx: int) -> float:
    """Exact SINR of one user in one active set.

    Interference sums the received powers of all other transmitting users
    (every eMBB user plus the set's other URLLC users).
    """
    actives = links.sets.sets[set_idx]
    if kind == "urllc" and idx not in actives:
        raise ValueError(f"urllc user {idx} is not active in set {set_idx}")
    h = links.channel(kind, idx)
    own = pre.vector(kind, idx, set_idx)
    sig = abs(np.vdot(h, own)) ** 2
    interf = 0.0
    for r_kind, r_idx in links.members(set_idx):
        if (r_kind, r_idx) == (kind, idx):
            continue
        interf += abs(np.vdot(h, pre.vector(r_kind, r_idx, set_idx))) ** 2
    return float(sig / (interf + links.noise_power))


def set_objective(pre: PrecoderSet, links: EffectiveLinks, set_idx: int) -> float:
    """Weighted eMBB sum rate p_l * sum_i log2(1 + sinr) of one set."""
    p_l = float(links.sets.probs[set_idx])
    val = 0.0
    for i in range(links.num_embb):
        val += math.log2(1.0 + sinr(pre, links, "embb", i, set_idx))
    return p_l * val


def total_objective(pre: PrecoderSet, links: EffectiveLinks) -> float:
    return sum(set_objective(pre, links, l) for l in range(links.sets.num_sets))


def linearize_received_power(h: np.ndarray, w_ref: np.ndarray) -> tuple[np.ndarray, float]:
    """First-order lower bound of |h^H w|^2 around w_ref.

    Returns (coef, const) over the real-stacked w with
    2 Re{w_ref^H h h^H w} - |h^H w_ref|^2 = coef @ w_real + const;
    convexity makes this a global lower bound, tight at w_ref.
    """
    g = inner_product_rows(h)
    gw = g @ complex_to_real(w_ref)
    return 2.0 * (g.T @ gw), -float(gw @ gw)


# per-set variable layout ---------------------------------------------------

class _SetLayout:
    """Real-stacked variable layout [w for each member, chi_i, d_i]."""

    def __init__(self, num_embb: int, active: tuple[int, ...], n_t: int):
        self.members = [("embb", i) for i in range(num_embb)] + [
            ("urllc", j) for j in active
        ]
        self.n_t = n_t
        self.num_embb = num_embb
        self.nw = 2 * n_t * len(self.members)
        self.dim = self.nw + 2 * num_embb
        self._slot = {m: k for k, m in enumerate(self.members)}

    def w_slice(self, kind: str, idx: int) -> slice:
        k = self._slot[(kind, idx)]
        return slice(2 * self.n_t * k, 2 * self.n_t * (k + 1))

    def chi_index(self, i: int) -> int:
        return self.nw + i

    def d_index(self, i: int) -> int:
        return self.nw + self.num_embb + i

    def place_rows(self, rows: np.ndarray, kind: str, idx: int) -> np.ndarray:
        out = np.zeros((rows.shape[0], self.dim))
        out[:, self.w_slice(kind, idx)] = rows
        return out

    def pack(self, pre: PrecoderSet, set_idx: int, chi: np.ndarray, d: np.ndarray) -> np.ndarray:
        x = np.zeros(self.dim)
        for kind, idx in self.members:
            x[self.w_slice(kind, idx)] = complex_to_real(pre.vector(kind, idx, set_idx))
        x[self.nw : self.nw + self.num_embb] = chi
        x[self.nw + self.num_embb :] = d
        return x

    def unpack_into(self, x: np.ndarray, pre_e: np.ndarray, pre_u: np.ndarray, set_idx: int) -> None:
        for kind, idx in self.members:
            w = real_to_complex(x[self.w_slice(kind, idx)])
            if kind == "embb":
                pre_e[set_idx, idx] = w
            else:
                pre_u[set_idx, idx] = w


def _interference_rows(layout: _SetLayout, links: EffectiveLinks, kind: str, idx: int,
                       scale: float = 1.0) -> np.ndarray:
    """Stacked rows whose squared norm is scale * sum_{r != self} |h^H w_r|^2."""
    h = links.channel(kind, idx)
    g = math.sqrt(scale) * inner_product_rows(h)
    blocks = [
        layout.place_rows(g, r_kind, r_idx)
        for r_kind, r_idx in layout.members
        if (r_kind, r_idx) != (kind, idx)
    ]
    if not blocks:
        return np.zeros((0, layout.dim))
    return np.vstack(blocks)


def _power_rows(layout: _SetLayout) -> np.ndarray:
    rows = np.zeros((layout.nw, layout.dim))
    rows[:, : layout.nw] = np.eye(layout.nw)
    return rows


def _build_set_surrogate(
    links: EffectiveLinks,
    pre_ref: PrecoderSet,
    chi_ref: np.ndarray,
    d_ref: np.ndarray,
    reqs: tuple[UrllcRequirement, ...],
    p_max: float,
    set_idx: int,
) -> tuple[ConvexSubproblem, _SetLayout]:
    active = links.sets.sets[set_idx]
    layout = _SetLayout(links.num_embb, active, links.n_t)
    sigma2 = links.noise_power
    quads = [ConvexQuadratic(_power_rows(layout), np.zeros(layout.dim), -p_max)]
    for j in active:
        gam = reqs[j].gamma_req
        coef, const = linearize_received_power(
            links.channel("urllc", j), pre_ref.vector("urllc", j, set_idx)
        )
        q = np.zeros(layout.dim)
        q[layout.w_slice("urllc", j)] = -coef
        quads.append(
            ConvexQuadratic(
                _interference_rows(layout, links, "urllc", j, scale=gam),
                q,
                gam * sigma2 - const,
            )
        )
    for i in range(links.num_embb):
        coef, const = linearize_received_power(
            links.channel("embb", i), pre_ref.vector("embb", i, set_idx)
        )
        # bilinear chi*d <= f_lin, convexified around (chi_ref, d_ref)
        f_row = np.zeros((1, layout.dim))
        f_row[0, layout.chi_index(i)] = 1.0 / math.sqrt(2.0)
        f_row[0, layout.d_index(i)] = 1.0 / math.sqrt(2.0)
        q = np.zeros(layout.dim)
        q[layout.chi_index(i)] = -chi_ref[i]
        q[layout.d_index(i)] = -d_ref[i]
        q[layout.w_slice("embb", i)] = -coef
        quads.append(
            ConvexQuadratic(
                f_row, q, 0.5 * chi_ref[i] ** 2 + 0.5 * d_ref[i] ** 2 - const
            )
        )
        # d >= sigma^2 + interference
        q8 = np.zeros(layout.dim)
        q8[layout.d_index(i)] = -1.0
        quads.append(
            ConvexQuadratic(
                _interference_rows(layout, links, "embb", i), q8, sigma2
            )
        )
    box = BoxBounds.unbounded(layout.dim)
    for i in range(links.num_embb):
        box.lower[layout.chi_index(i)] = 0.0
    p_l = float(links.sets.probs[set_idx])
    chi_idx = np.array([layout.chi_index(i) for i in range(links.num_embb)], dtype=int)
    objective = log_sum_objective(
        layout.dim, chi_idx, np.full(links.num_embb, p_l / LN2)
    )
    problem = ConvexSubproblem(
        dim=layout.dim, objective=objective, box=box, quadratics=quads
    )
    return problem, layout


def build_p1_surrogate(
    links: EffectiveLinks,
    pre_ref: PrecoderSet,
    aux_ref: dict,
    reqs: tuple[UrllcRequirement, ...],
    p_max: float,
    set_index: int | None = None,
):
    """Convex inner approximation of the precoder problem around pre_ref.

    aux_ref holds the auxiliary reference values {"chi": (L, E), "d": (L, E)}.
    With set_index=None the joint problem over all sets is returned (used to
    validate that the per-set decomposition is exact); otherwise the
    subproblem of one active set.
    """
    chi = np.asarray(aux_ref["chi"], dtype=float)
    d = np.asarray(aux_ref["d"], dtype=float)
    if set_index is not None:
        return _build_set_surrogate(links, pre_ref, chi[set_index], d[set_index],
                                    reqs, p_max, set_index)
    parts = [
        _build_set_surrogate(links, pre_ref, chi[l], d[l], reqs, p_max, l)
        for l in range(links.sets.num_sets)
    ]
    return _stack_problems(parts)


def _stack_problems(parts):
    """Direct sum of independent subproblems (block-diagonal composition)."""
    offsets = np.cumsum([0] + [layout.dim for _, layout in parts])
    dim = int(offsets[-1])
    lo = np.full(dim, -np.inf)
    up = np.full(dim, np.inf)
    quads = []
    objectives = []
    for (prob, layout), off in zip(parts, offsets[:-1]):
        if prob.box is not None:
            lo[off : off + layout.dim] = prob.box.lower
            up[off : off + layout.dim] = prob.box.upper
        for con in prob.quadratics:
            f_ext = None
            if con.f_mat is not None:
                f_ext = np.zeros((con.f_mat.shape[0], dim))
                f_ext[:, off : off + layout.dim] = con.f_mat
            q_ext = np.zeros(dim)
            q_ext[off : off + layout.dim] = con.q
            quads.append(ConvexQuadratic(f_ext, q_ext, con.r0))
        objectives.append((prob.objective, off, layout.dim))

    def value(x):
        return sum(obj.value(x[o : o + k]) for obj, o, k in objectives)

    def grad(x):
        g = np.zeros(dim)
        for obj, o, k in objectives:
            g[o : o + k] = obj.grad(x[o : o + k])
        return g

    def hess(x):
        h = np.zeros(dim)
        for obj, o, k in objectives:
            part = obj.hess(x[o : o + k])
            if np.ndim(part) != 1:
                raise NotImplementedError("joint stacking expects diagonal Hessians")
            h[o : o + k] = part
        return h

    from .convex_core import Objective

    problem = ConvexSubproblem(
        dim=dim,
        objective=Objective(value, grad, hess),
        box=BoxBounds(lo, up),
        quadratics=quads,
    )
    return problem, [layout for _, layout in parts], offsets[:-1]


def _exact_aux(links: EffectiveLinks, pre: PrecoderSet, set_idx: int):
    """Auxiliary reference values that make the surrogate tangent."""
    chi = np.empty(links.num_embb)
    d = np.empty(links.num_embb)
    for i in range(links.num_embb):
        h = links.channel("embb", i)
        interf = sum(
            abs(np.vdot(h, pre.vector(rk, ri, set_idx))) ** 2
            for rk, ri in links.members(set_idx)
            if (rk, ri) != ("embb", i)
        )
        d[i] = links.noise_power + interf
        chi[i] = abs(np.vdot(h, pre.vector("embb", i, set_idx))) ** 2 / d[i]
    return chi, d


@dataclass
class PrecoderOptReport:
    objective: float
    traces: list  # per set, true objective per SCA iterate
    solve_reports: list
    converged: bool


def optimize_precoders(
    links: EffectiveLinks,
    reqs: tuple[UrllcRequirement, ...],
    init: PrecoderSet,
    i1_max: int,
    tol: float,
    p_max: float,
    solver_tol: float = 1e-7,
) -> tuple[PrecoderSet, PrecoderOptReport]:
    """SCA ascent on the eMBB rate from a feasible starting point.

    The per-set subproblems are independent and solved one after another;
    each set's trace of true objective values is non-decreasing (a step that
    would decrease it, which only numerics can produce, is rejected).
    """
    links = links.normalized()
    n_sets = links.sets.num_sets
    pre_e = init.w_embb.astype(complex).copy()
    pre_u = init.w_urllc.astype(complex).copy()
    traces = []
    reports = []
    converged = True
    for l in range(n_sets):
        current = PrecoderSet(pre_e, pre_u)
        trace = [set_objective(current, links, l)]
        if links.num_embb == 0:
            # nothing to maximize; the feasible point is returned as is
            traces.append(trace)
            continue
        x_warm = None
        warm_t0 = None
        for _ in range(i1_max):
            current = PrecoderSet(pre_e, pre_u)
            chi_ref, d_ref = _exact_aux(links, current, l)
            problem, layout = _build_set_surrogate(
                links, current, chi_ref, d_ref, reqs, p_max, l
            )
            if x_warm is None:
                # nudge the auxiliaries off their tangent values so the
                # start is strictly interior
                x0 = layout.pack(current, l, chi_ref * (1.0 - 1e-5), d_ref * (1.0 + 1e-6))
            else:
                # the previous solver iterate stays strictly feasible after
                # re-tangenting (the new bounds are looser at that point)
                x0 = x_warm
            rep = solve_convex(problem, x0, tol=solver_tol, t0=warm_t0)
            reports.append(rep)
            if rep.status is not Status.OPTIMAL:
                converged = False
                break
            cand_e = pre_e.copy()
            cand_u = pre_u.copy()
            layout.unpack_into(rep.x, cand_e, cand_u, l)
            val = set_objective(PrecoderSet(cand_e, cand_u), links, l)
            if val < trace[-1] - 1e-9 * (1.0 + abs(trace[-1])):
                break  # numerically regressive step, keep the incumbent
            pre_e, pre_u = cand_e, cand_u
            x_warm = rep.x
            warm_t0 = max(1.0, rep.final_t / 1e4)
            improved = val - trace[-1]
            trace.append(val)
            if improved <= tol * max(1.0, abs(trace[-2])):
                break
        traces.append(trace)
    final = PrecoderSet(pre_e, pre_u)
    report = PrecoderOptReport(
        objective=total_objective(final, links),
        traces=traces,
        solve_reports=reports,
        converged=converged,
    )
    return final, report


@dataclass
class FeasibilityResult:
    precoders: PrecoderSet
    feasible: bool
    margins: np.ndarray  # per-set worst C1 slack, +inf when no URLLC active


def _mrt_init(links: EffectiveLinks, reqs, set_idx: int, p_max: float):
    """MRT directions; URLLC power split proportional to the SINR targets.

    Total power is kept strictly inside the budget so the point can seed a
    barrier solve without a phase-I pass.
    """
    active = links.sets.sets[set_idx]
    e = links.num_embb
    budget = 0.95 * p_max
    w_e = np.zeros((e, links.n_t), dtype=complex)
    w_u = np.zeros((links.num_urllc, links.n_t), dtype=complex)
    if not active:
        for i in range(e):
            h = links.channel("embb", i)
            w_e[i] = math.sqrt(budget / max(e, 1)) * h / np.linalg.norm(h)
        return w_e, w_u
    gammas = np.array([reqs[j].gamma_req for j in active])
    shares = gammas / gammas.sum() if gammas.sum() > 0 else np.full(len(active), 1.0 / len(active))
    p_urllc = 0.9 * budget if e else budget
    for j, share in zip(active, shares):
        h = links.channel("urllc", j)
        w_u[j] = math.sqrt(p_urllc * share) * h / np.linalg.norm(h)
    for i in range(e):
        h = links.channel("embb", i)
        w_e[i] = math.sqrt(0.1 * budget / e) * h / np.linalg.norm(h)
    return w_e, w_u


def _margins(links, reqs, w_e, w_u, set_idx) -> float:
    """Worst C1 slack f - gamma (I + sigma^2) over the set's URLLC users."""
    active = links.sets.sets[set_idx]
    worst = np.inf
    for j in active:
        h = links.channel("urllc", j)
        sig = abs(np.vdot(h, w_u[j])) ** 2
        interf = sum(abs(np.vdot(h, w_e[i])) ** 2 for i in range(links.num_embb))
        interf += sum(abs(np.vdot(h, w_u[r])) ** 2 for r in active if r != j)
        worst = min(worst, sig - reqs[j].gamma_req * (interf + links.noise_power))
    return float(worst)


def _margin_sca(links, reqs, set_idx, p_max, i_max, solver_tol):
    """Maximize the worst C1 margin over all precoders of one set."""
    active = links.sets.sets[set_idx]
    layout = _SetLayout(links.num_embb, active, links.n_t)
    dim = layout.dim - 2 * links.num_embb + 1  # w block plus the margin
    tau_idx = layout.nw
    w_e, w_u = _mrt_init(links, reqs, set_idx, p_max)
    tau = None
    for _ in range(max(2, i_max)):
        quads = []
        pw = np.zeros((layout.nw, dim))
        pw[:, : layout.nw] = np.eye(layout.nw)
        quads.append(ConvexQuadratic(pw, np.zeros(dim), -p_max))
        for j in active:
            gam = reqs[j].gamma_req
            coef, const = linearize_received_power(links.channel("urllc", j), w_u[j])
            rows = _interference_rows(layout, links, "urllc", j, scale=gam)
            rows_ext = np.zeros((rows.shape[0], dim))
            rows_ext[:, : layout.nw] = rows[:, : layout.nw]
            q = np.zeros(dim)
            q[layout.w_slice("urllc", j)] = -coef
            q[tau_idx] = 1.0
            quads.append(ConvexQuadratic(rows_ext, q, gam * links.noise_power - const))
        problem = ConvexSubproblem(
            dim=dim,
            objective=linear_objective(np.eye(dim)[tau_idx]),
            quadratics=quads,
        )
        x0 = np.zeros(dim)
        for kind, idx in layout.members:
            w = w_e[idx] if kind == "embb" else w_u[idx]
            x0[layout.w_slice(kind, idx)] = complex_to_real(w)
        margin0 = _margins(links, reqs, w_e, w_u, set_idx)
        x0[tau_idx] = margin0 - max(1.0, abs(margin0))  # strictly interior start
        rep = solve_convex(problem, x0, tol=solver_tol)
        if rep.status is not Status.OPTIMAL:
            break
        new_tau = float(rep.x[tau_idx])
        for kind, idx in layout.members:
            w = real_to_complex(rep.x[layout.w_slice(kind, idx)])
            if kind == "embb":
                w_e[idx] = w
            else:
                w_u[idx] = w
        if tau is not None and new_tau - tau <= 1e-3 * max(1.0, abs(tau)):
            tau = max(tau, new_tau)
            break
        tau = new_tau
    if tau is None:
        tau = _margins(links, reqs, w_e, w_u, set_idx)
    return w_e, w_u, float(tau)


def find_feasible_precoders(
    links: EffectiveLinks,
    reqs: tuple[UrllcRequirement, ...],
    p_max: float,
    i_max: int = 25,
    solver_tol: float = 1e-7,
) -> FeasibilityResult:
    """Produce a C1/C2-feasible starting point, or declare an outage.

    After the margin maximization the URLLC powers are rescaled to hold only
    a fraction of the achieved margin and the freed power seeds nonzero MRT
    eMBB precoders (a zero eMBB precoder is a stationary point of the rate
    surrogate, so the SCA could never leave it).
    """
    links = links.normalized()
    n_sets = links.sets.num_sets
    e, u, n_t = links.num_embb, links.num_urllc, links.n_t
    pre = PrecoderSet.zeros(n_sets, e, u, n_t)
    margins = np.full(n_sets, np.inf)
    feasible = True
    for l in range(n_sets):
        active = links.sets.sets[l]
        if not active:
            w_e, w_u = _mrt_init(links, reqs, l, p_max)
            pre.w_embb[l] = w_e
            continue
        w_e, w_u, tau = _margin_sca(links, reqs, l, p_max, i_max, solver_tol)
        if tau <= 0.0:
            margins[l] = tau
            feasible = False
            continue
        # shrink URLLC power to the least level keeping a quarter of the margin
        w_e = np.zeros_like(w_e)  # margin solve may park eMBB anywhere; rebuild
        rho_sq = _shrink_factor(links, reqs, w_u, active)
        w_u = math.sqrt(rho_sq) * w_u
        if e:
            w_e = _fill_embb(links, reqs, w_u, l, p_max)
        pre.w_embb[l] = w_e
        pre.w_urllc[l] = w_u
        margins[l] = _margins(links, reqs, w_e, w_u, l)
        if margins[l] < 0.0:
            feasible = False
    return FeasibilityResult(precoders=pre, feasible=feasible, margins=margins)


def _user_margin(links, reqs, w_u, j, active) -> float:
    h = links.channel("urllc", j)
    sig = abs(np.vdot(h, w_u[j])) ** 2
    interf = sum(abs(np.vdot(h, w_u[r])) ** 2 for r in active if r != j)
    return float(sig - reqs[j].gamma_req * (interf + links.noise_power))


def _shrink_factor(links, reqs, w_u, active) -> float:
    """Largest common power scale rho^2 <= 1 keeping 25% of each C1 margin.

    Scaling every URLLC precoder by rho scales signal and mutual
    interference alike, so the per-user condition is closed form.
    """
    rho_sq = 0.0
    for j in active:
        gam_n = reqs[j].gamma_req * links.noise_power
        margin = _user_margin(links, reqs, w_u, j, active)
        if margin <= 0:
            return 1.0
        rho_sq = max(rho_sq, (gam_n + 0.25 * margin) / (gam_n + margin))
    return min(1.0, rho_sq)


def _fill_embb(links, reqs, w_u, set_idx, p_max) -> np.ndarray:
    """Bisect the largest MRT eMBB power scale that keeps C1 margins positive."""
    e = links.num_embb
    active = links.sets.sets[set_idx]
    room = p_max - float(np.sum(np.abs(w_u) ** 2))
    if room <= 0:
        return np.zeros((e, links.n_t), dtype=complex)
    base = np.zeros((e, links.n_t), dtype=complex)
    for i in range(e):
        h = links.channel("embb", i)
        base[i] = math.sqrt(0.95 * room / e) * h / np.linalg.norm(h)

    def ok(scale):
        return _margins(links, reqs, scale * base, w_u, set_idx) > 0.0

    if ok(1.0):
        return base
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * lo * base  # halve again to leave slack for the SCA start


def verify_feasible(
    pre: PrecoderSet,
    links: EffectiveLinks,
    reqs: tuple[UrllcRequirement, ...],
    p_max: float,
    rel_slack: float = 1e-6,
) -> bool:
    """Exact C1/C2 check of a candidate precoder set."""
    links_n = links.normalized()
    for l in range(links_n.sets.num_sets):
        active = links_n.sets.sets[l]
        if pre.set_power(l, active) > p_max * (1.0 + 1e-9):
            return False
        for j in active:
            gam = reqs[j].gamma_req
            if sinr(pre, links_n, "urllc", j, l) < gam * (1.0 - rel_slack):
                return False
    return True
