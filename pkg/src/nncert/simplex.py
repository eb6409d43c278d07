"""Dense two-phase tableau simplex.

Solves ``min c.u  s.t.  M u = r, u >= 0`` with ``r >= 0``. Pricing is either
pure Bland (lowest-index entering column) or Dantzig with a permanent switch
to Bland once a run of degenerate pivots shows up, which keeps the
anti-cycling guarantee.
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-11
COST_TOL = 1e-10
DEGENERATE_RUN = 8


class SimplexIterationLimit(RuntimeError):
    """Pivoting hit the iteration cap; the problem is reported, not guessed."""


class _Tableau:
    def __init__(self, M: np.ndarray, r: np.ndarray, basis: np.ndarray, max_iter: int, pricing: str):
        k, n = M.shape
        self.T = np.zeros((k + 1, n + 1))
        self.T[:k, :n] = M
        self.T[:k, n] = r
        self.basis = basis.copy()
        self.max_iter = max_iter
        self.iterations = 0
        self.pricing = pricing

    @property
    def k(self) -> int:
        return self.T.shape[0] - 1

    def set_objective(self, c: np.ndarray) -> None:
        n = self.T.shape[1] - 1
        row = np.zeros(n + 1)
        row[: c.shape[0]] = c
        # price out basic columns
        cb = row[self.basis]
        row -= cb @ self.T[:-1]
        self.T[-1] = row

    def pivot(self, i: int, j: int) -> None:
        T = self.T
        T[i] /= T[i, j]
        col = T[:, j].copy()
        col[i] = 0.0
        T -= np.outer(col, T[i])
        T[:, j] = 0.0
        T[i, j] = 1.0
        self.basis[i] = j

    def run(self, allowed: np.ndarray) -> str:
        """Pivot to optimality over columns where ``allowed`` is true."""
        T = self.T
        bland = self.pricing == "bland"
        degenerate = 0
        while True:
            d = T[-1, :-1]
            candidates = np.flatnonzero((d < -COST_TOL) & allowed)
            if candidates.size == 0:
                return "optimal"
            if bland:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmin(d[candidates])])
            col = T[:-1, j]
            rows = np.flatnonzero(col > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            i = int(tied[np.argmin(self.basis[tied])])
            if self.iterations >= self.max_iter:
                raise SimplexIterationLimit(f"simplex exceeded {self.max_iter} pivots")
            self.iterations += 1
            if best <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
            self.pivot(i, j)


def solve(
    M: np.ndarray,
    r: np.ndarray,
    c: np.ndarray,
    slack_basis: np.ndarray,
    max_iter: int,
    pricing: str = "dantzig",
    feas_tol: float = 1e-9,
):
    """Two-phase simplex.

    ``slack_basis[i]`` is a column that is a unit vector on row ``i`` (or -1 if
    the row needs an artificial variable). Returns ``(status, u, value)`` with
    status in ``{"optimal", "infeasible", "unbounded"}``.
    """
    k, n = M.shape
    need_art = np.flatnonzero(slack_basis < 0)
    n_art = need_art.size
    M_full = np.hstack([M, np.zeros((k, n_art))])
    basis = slack_basis.copy()
    for a, i in enumerate(need_art):
        M_full[i, n + a] = 1.0
        basis[i] = n + a
    tab = _Tableau(M_full, r, basis, max_iter, pricing)
    total = n + n_art
    if n_art:
        c1 = np.zeros(total)
        c1[n:] = 1.0
        tab.set_objective(c1)
        tab.run(np.ones(total, dtype=bool))
        if -tab.T[-1, -1] > feas_tol * max(1.0, float(np.abs(r).max(initial=0.0))):
            return "infeasible", None, None
        # drive zero-level artificials out of the basis
        for i in range(tab.k):
            if tab.basis[i] >= n:
                row = tab.T[i, :n]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    tab.pivot(i, int(nz[0]))
        keep = tab.basis < n
        if not np.all(keep):
            # redundant rows: artificial still basic at zero with an all-zero row
            tab.T = np.vstack([tab.T[:-1][keep], tab.T[-1:]])
            tab.basis = tab.basis[keep]
        tab.T = np.delete(tab.T, np.arange(n, total), axis=1)
    tab.set_objective(c)
    status = tab.run(np.ones(n, dtype=bool))
    if status == "unbounded":
        return "unbounded", None, None
    u = np.zeros(n)
    u[tab.basis] = tab.T[:-1, -1]
    u = np.maximum(u, 0.0)
    return "optimal", u, float(c @ u)
