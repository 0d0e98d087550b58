"""Legendre-Gauss-Lobatto collocation machinery.

Builds the LGL grid and spectral differentiation matrix, transcribes the
continuous stroke-optimization problem into a finite nonlinear program on
4*(N+1) decision variables, and interpolates nodal controls back to
continuous time with the barycentric Lagrange formula.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .controls import ControlProfile
from .dynamics import EngineConfig, rhs_partials

__all__ = [
    "legendre_eval",
    "lgl_nodes",
    "differentiation_matrix",
    "barycentric_weights",
    "LglGrid",
    "NodalProfile",
    "CollocationProblem",
    "transcribe",
    "interpolate_control",
]


def legendre_eval(order: int, t):
    """Value and first derivative of the Legendre polynomial of given order.

    Three-term recurrence; works on scalars or arrays and preserves the input
    dtype so the node solver can run in extended precision.
    """
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    t = np.asarray(t)
    if order == 0:
        return np.ones_like(t), np.zeros_like(t)
    p_prev = np.ones_like(t)
    p = t.copy()
    for k in range(1, order):
        p, p_prev = ((2 * k + 1) * t * p - k * p_prev) / (k + 1), p
    # (1 - t^2) P_N' = N (P_{N-1} - t P_N); endpoints from P_N'(+-1)
    one_minus_t2 = 1.0 - t * t
    with np.errstate(divide="ignore", invalid="ignore"):
        deriv = order * (p_prev - t * p) / one_minus_t2
    endpoint = np.abs(one_minus_t2) < 1e-14
    if np.any(endpoint):
        sign = np.where(np.asarray(t) > 0, 1.0, (-1.0) ** (order - 1))
        deriv = np.where(endpoint, sign * order * (order + 1) / 2.0, deriv)
    if np.ndim(t) == 0:
        return p[()], deriv[()]
    return p, deriv


def _legendre_second_deriv(order: int, t, value, deriv):
    # from the Legendre ODE: (1 - t^2) P'' - 2 t P' + N(N+1) P = 0
    return (2.0 * t * deriv - order * (order + 1) * value) / (1.0 - t * t)


def lgl_nodes(order: int) -> np.ndarray:
    """The N+1 Legendre-Gauss-Lobatto nodes on [-1, 1].

    Endpoints plus the interior critical points of the order-N Legendre
    polynomial, found by Newton iteration from Chebyshev-Lobatto seeds and
    polished in extended precision so node locations are accurate to ~1e-16.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if order == 1:
        return np.array([-1.0, 1.0])

    k = np.arange(1, order)
    t = -np.cos(np.pi * k / order)  # Chebyshev-Lobatto seeds

    def newton(nodes, steps):
        for _ in range(steps):
            val, der = legendre_eval(order, nodes)
            second = _legendre_second_deriv(order, nodes, val, der)
            step = der / second
            nodes = nodes - step
            if np.max(np.abs(step)) < np.finfo(nodes.dtype).eps:
                break
        return nodes, np.max(np.abs(step))

    t, _ = newton(t, 50)
    t, residual_step = newton(t.astype(np.longdouble), 5)
    if residual_step > 1e-13:
        raise RuntimeError(
            f"node iteration failed to converge at order {order} (step {residual_step:g})"
        )
    t = t.astype(float)
    t = 0.5 * (t - t[::-1])  # enforce exact antisymmetry
    nodes = np.concatenate([[-1.0], t, [1.0]])
    if np.any(np.diff(nodes) <= 0):
        raise RuntimeError(f"node iteration produced a non-monotone grid at order {order}")
    return nodes


def differentiation_matrix(nodes: np.ndarray) -> np.ndarray:
    """Spectral differentiation matrix on the LGL grid.

    D[k, i] = (P_N(t_k) / P_N(t_i)) / (t_k - t_i) off the diagonal, with the
    corner values -N(N+1)/4 and +N(N+1)/4 and zeros on the rest of the
    diagonal.  Maps nodal samples of a degree <= N polynomial to exact nodal
    samples of its derivative.
    """
    order = len(nodes) - 1
    values, _ = legendre_eval(order, nodes)
    diff = np.subtract.outer(nodes, nodes)
    np.fill_diagonal(diff, 1.0)
    D = np.divide.outer(values, values) / diff
    np.fill_diagonal(D, 0.0)
    D[0, 0] = -order * (order + 1) / 4.0
    D[-1, -1] = order * (order + 1) / 4.0
    return D


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    """Barycentric weights of the grid, normalized to unit max magnitude."""
    diff = np.subtract.outer(nodes, nodes)
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


@dataclass(frozen=True)
class LglGrid:
    """Grid of order N: N+1 nodes, differentiation matrix, barycentric weights."""

    order: int
    nodes: np.ndarray
    diff_matrix: np.ndarray
    bary_weights: np.ndarray

    @classmethod
    def build(cls, order: int) -> "LglGrid":
        nodes = lgl_nodes(order)
        return cls(
            order=order,
            nodes=nodes,
            diff_matrix=differentiation_matrix(nodes),
            bary_weights=barycentric_weights(nodes),
        )

    @property
    def n_nodes(self) -> int:
        return self.order + 1

    def times(self, duration: float) -> np.ndarray:
        """Map the nodes from [-1, 1] to physical times on [0, duration]."""
        return 0.5 * duration * (self.nodes + 1.0)


def _bary_eval(nodes, weights, values, tau):
    """Second-form barycentric interpolation, exact at the nodes."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    diff = tau[:, None] - nodes[None, :]
    exact_row, exact_col = np.nonzero(np.abs(diff) < 1e-14)
    diff[exact_row, exact_col] = 1.0
    ratio = weights[None, :] / diff
    out = (ratio @ values) / np.sum(ratio, axis=1)
    out[exact_row] = values[exact_col]
    return out


class NodalProfile(ControlProfile):
    """Barycentric Lagrange interpolant of nodal control values.

    Defined on [0, duration] through the affine map tau = 2 t / T - 1; raw
    evaluation can overshoot the control band between nodes, the clamped call
    operator pushes it back.
    """

    def __init__(self, grid: LglGrid, values, duration: float, u_min: float,
                 u_max: float = 1.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_nodes,):
            raise ValueError(
                f"need {grid.n_nodes} nodal values, got shape {values.shape}"
            )
        super().__init__(duration, u_min, u_max)
        self.grid = grid
        self.values = values

    def raw_value(self, t):
        self._check_domain(t)
        tau = 2.0 * np.asarray(t, dtype=float) / self.duration - 1.0
        tau = np.clip(tau, -1.0, 1.0)
        out = _bary_eval(self.grid.nodes, self.grid.bary_weights, self.values, tau)
        if np.ndim(t) == 0:
            return out[0]
        return out


def interpolate_control(
    grid: LglGrid, values, duration: float, u_min: float, u_max: float = 1.0
) -> NodalProfile:
    return NodalProfile(grid, values, duration, u_min, u_max)


class CollocationProblem:
    """The transcribed nonlinear program.

    Decision vector z = [x1 | x2 | x3 | u], each block holding N+1 nodal
    values.  Equality residuals, in order:

      rows 0 .. 3n-1   collocation: (2/T) * D x_r - f_r(x_k, u_k), r = 1, 2, 3
      row  3n          x1[0] - 1
      row  3n + 1      x2[0] - 1
      row  3n + 2      x3[0]
      row  3n + 3      x2[N] - u[N] * x1[N]
      row  3n + 4      x3[N]

    Bounds fix u[0] = 1 and u[N] = freq_ratio**2 and box the interior controls
    into [freq_ratio**2, 1]; the states are free.  The objective is x2[N], the
    scaled final energy once the terminal condition holds.
    """

    def __init__(self, grid: LglGrid, config: EngineConfig):
        self.grid = grid
        self.config = config
        n = grid.n_nodes
        self.n_nodes = n
        self.n_variables = 4 * n
        self.n_residuals = 3 * n + 5
        self.sx1 = slice(0, n)
        self.sx2 = slice(n, 2 * n)
        self.sx3 = slice(2 * n, 3 * n)
        self.su = slice(3 * n, 4 * n)
        self._scale = 2.0 / config.duration
        self._D = grid.diff_matrix
        self._Dt = np.ascontiguousarray(grid.diff_matrix.T)

    # -- packing ---------------------------------------------------------

    def pack(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Assemble a decision vector from (n, 3) nodal states and n controls."""
        return np.concatenate([states[:, 0], states[:, 1], states[:, 2], controls])

    def unpack(self, z: np.ndarray):
        """Split a decision vector into an (n, 3) state array and the controls."""
        states = np.column_stack([z[self.sx1], z[self.sx2], z[self.sx3]])
        return states, z[self.su].copy()

    # -- NLP callbacks ----------------------------------------------------

    def _fields(self, z):
        x1, x2, x3, u = z[self.sx1], z[self.sx2], z[self.sx3], z[self.su]
        noise = self.config.noise
        ga, gp = noise.gamma_a, noise.gamma_p
        f1 = -2.0 * gp * u * x1 + 2.0 * gp * x2 + 2.0 * x3
        f2 = 2.0 * (ga + gp) * u**2 * x1 - 2.0 * gp * u * x2 - 2.0 * u * x3
        f3 = -u * x1 + x2 - 4.0 * gp * u * x3
        return x1, x2, x3, u, f1, f2, f3

    def residuals(self, z: np.ndarray) -> np.ndarray:
        x1, x2, x3, u, f1, f2, f3 = self._fields(z)
        s = self._scale
        out = np.empty(self.n_residuals)
        n = self.n_nodes
        out[0:n] = s * (self._D @ x1) - f1
        out[n : 2 * n] = s * (self._D @ x2) - f2
        out[2 * n : 3 * n] = s * (self._D @ x3) - f3
        out[3 * n] = x1[0] - 1.0
        out[3 * n + 1] = x2[0] - 1.0
        out[3 * n + 2] = x3[0]
        out[3 * n + 3] = x2[-1] - u[-1] * x1[-1]
        out[3 * n + 4] = x3[-1]
        return out

    def jtv(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jacobian-transpose product, assembled from the sparse structure."""
        x1, x2, x3, u = z[self.sx1], z[self.sx2], z[self.sx3], z[self.su]
        A, b = rhs_partials(x1, x2, x3, u, self.config.noise)
        n = self.n_nodes
        v1, v2, v3 = v[0:n], v[n : 2 * n], v[2 * n : 3 * n]
        s = self._scale
        g = np.empty(self.n_variables)
        g[self.sx1] = s * (self._Dt @ v1) - A[0][0] * v1 - A[1][0] * v2 - A[2][0] * v3
        g[self.sx2] = s * (self._Dt @ v2) - A[0][1] * v1 - A[1][1] * v2 - A[2][1] * v3
        g[self.sx3] = s * (self._Dt @ v3) - A[0][2] * v1 - A[1][2] * v2 - A[2][2] * v3
        g[self.su] = -(b[0] * v1 + b[1] * v2 + b[2] * v3)
        vb = v[3 * n :]
        g[0] += vb[0]
        g[n] += vb[1]
        g[2 * n] += vb[2]
        g[n - 1] += -u[-1] * vb[3]  # d(x2N - uN x1N)/dx1N
        g[2 * n - 1] += vb[3]
        g[4 * n - 1] += -x1[-1] * vb[3]
        g[3 * n - 1] += vb[4]
        return g

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """Dense analytic Jacobian of all residuals (for tests and diagnostics)."""
        x1, x2, x3, u = z[self.sx1], z[self.sx2], z[self.sx3], z[self.su]
        A, b = rhs_partials(x1, x2, x3, u, self.config.noise)
        n = self.n_nodes
        J = np.zeros((self.n_residuals, self.n_variables))
        sD = self._scale * self._D
        for r in range(3):
            rows = slice(r * n, (r + 1) * n)
            J[rows, r * n : (r + 1) * n] = sD
            for c in range(3):
                J[rows, c * n : (c + 1) * n] -= np.diag(A[r][c])
            J[rows, self.su] -= np.diag(b[r])
        J[3 * n, 0] = 1.0
        J[3 * n + 1, n] = 1.0
        J[3 * n + 2, 2 * n] = 1.0
        J[3 * n + 3, 2 * n - 1] = 1.0
        J[3 * n + 3, n - 1] = -u[-1]
        J[3 * n + 3, 4 * n - 1] = -x1[-1]
        J[3 * n + 4, 3 * n - 1] = 1.0
        return J

    def weighted_constraint_hessian(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Dense sum of w_i * (second derivative of residual i).

        The dynamics are at most cubic, so the only curvature lives in the
        node-local (state, control) cross terms and the u-quadratic term of
        the energy channel; the terminal energy-balance row adds one bilinear
        entry.  Needed for exact-Hessian Newton steps on penalty functions.
        """
        n = self.n_nodes
        x1 = z[self.sx1]
        u = z[self.su]
        ga, gp = self.config.noise.gamma_a, self.config.noise.gamma_p
        w1, w2, w3 = w[0:n], w[n : 2 * n], w[2 * n : 3 * n]
        H = np.zeros((self.n_variables, self.n_variables))
        ix1 = np.arange(n)
        ix2 = ix1 + n
        ix3 = ix1 + 2 * n
        iu = ix1 + 3 * n
        # residual rows are (2/T) D x - f, so curvature enters with -f''
        h1u = 2.0 * gp * w1 - 4.0 * (ga + gp) * u * w2 + w3
        h2u = 2.0 * gp * w2
        h3u = 2.0 * w2 + 4.0 * gp * w3
        huu = -4.0 * (ga + gp) * x1 * w2
        H[ix1, iu] += h1u
        H[iu, ix1] += h1u
        H[ix2, iu] += h2u
        H[iu, ix2] += h2u
        H[ix3, iu] += h3u
        H[iu, ix3] += h3u
        H[iu, iu] += huu
        wb_terminal = w[3 * n + 3]
        H[n - 1, 4 * n - 1] -= wb_terminal
        H[4 * n - 1, n - 1] -= wb_terminal
        return H

    def objective(self, z: np.ndarray) -> float:
        return float(z[2 * self.n_nodes - 1])

    def objective_gradient(self) -> np.ndarray:
        g = np.zeros(self.n_variables)
        g[2 * self.n_nodes - 1] = 1.0
        return g

    def bounds(self):
        """(lower, upper) arrays: free states, boxed controls, pinned endpoints."""
        n = self.n_nodes
        lb = np.full(self.n_variables, -np.inf)
        ub = np.full(self.n_variables, np.inf)
        lb[self.su] = self.config.u_min
        ub[self.su] = 1.0
        lb[3 * n] = ub[3 * n] = 1.0
        lb[4 * n - 1] = ub[4 * n - 1] = self.config.u_min
        return lb, ub

    def nodal_energy_ratio(self, z: np.ndarray) -> float:
        """Final energy per initial energy implied by the nodal values."""
        n = self.n_nodes
        return 0.5 * (z[2 * n - 1] + z[4 * n - 1] * z[n - 1])

    def control_profile(self, z: np.ndarray) -> NodalProfile:
        return NodalProfile(
            self.grid, z[self.su], self.config.duration, self.config.u_min
        )

    def to_json(self, path=None) -> str:
        """Dump the grid, bounds and layout for debugging and cross-checks."""
        lb, ub = self.bounds()
        doc = {
            "order": self.grid.order,
            "duration": self.config.duration,
            "freq_ratio": self.config.freq_ratio,
            "gamma_a": self.config.noise.gamma_a,
            "gamma_p": self.config.noise.gamma_p,
            "nodes": self.grid.nodes.tolist(),
            "diff_matrix": self.grid.diff_matrix.tolist(),
            "lower_bounds": lb.tolist(),
            "upper_bounds": ub.tolist(),
            "layout": {
                "x1": [self.sx1.start, self.sx1.stop],
                "x2": [self.sx2.start, self.sx2.stop],
                "x3": [self.sx3.start, self.sx3.stop],
                "u": [self.su.start, self.su.stop],
            },
            "residual_order": [
                "collocation_x1",
                "collocation_x2",
                "collocation_x3",
                "initial_x1",
                "initial_x2",
                "initial_x3",
                "terminal_energy_balance",
                "terminal_x3",
            ],
        }
        text = json.dumps(doc, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def transcribe(config: EngineConfig, order: int) -> CollocationProblem:
    """Build the collocation NLP for one stroke instance."""
    if order < 4:
        raise ValueError(f"collocation order must be >= 4, got {order}")
    return CollocationProblem(LglGrid.build(order), config)
