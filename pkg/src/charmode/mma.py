"""Method of moving asymptotes for bound-constrained problems with a few
inequality constraints.

Solves, per outer iteration, the convex separable approximation of

    min  f0(x) + a0 z + sum_i (c_i y_i + d_i y_i^2 / 2)
    s.t. f_i(x) - a_i z - y_i <= 0,  xmin <= x <= xmax,  y, z >= 0

with a primal-dual interior-point method.  With ``a0 = 1``, ``a_i = 1`` and
``f0 = 0`` the variable ``z`` acts as the bound of a min-max problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MmaSettings:
    move: float = 0.2
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    albefa: float = 0.1
    raa0: float = 1e-5
    epsimin: float = 1e-7
    asymin: float = 1e-3  # closest asymptote distance, relative to the box


@dataclass
class MmaSubResult:
    x: np.ndarray
    y: np.ndarray
    z: float
    lam: np.ndarray
    xsi: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    zet: float
    s: np.ndarray


def _residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi, low, upp, alfa, beta,
               p0, q0, P, Q, a0, a, b, c, d):
    ux1 = upp - x
    xl1 = x - low
    plam = p0 + P.T @ lam
    qlam = q0 + Q.T @ lam
    gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
    rex = plam / ux1**2 - qlam / xl1**2 - xsi + eta
    rey = c + d * y - mu - lam
    rez = a0 - zet - a @ lam
    relam = gvec - a * z - y + s - b
    rexsi = xsi * (x - alfa) - epsi
    reeta = eta * (beta - x) - epsi
    remu = mu * y - epsi
    rezet = zet * z - epsi
    res = lam * s - epsi
    return np.concatenate([rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res])


def subsolv(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d) -> MmaSubResult:
    """Primal-dual Newton solve of the MMA subproblem."""
    een, eem = np.ones(n), np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(1.0 / (x - alfa), een)
    eta = np.maximum(1.0 / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()
    args = (low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d)
    while epsi > epsimin:
        r = _residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi, *args)
        rnorm, rmax = np.linalg.norm(r), np.abs(r).max()
        it = 0
        while rmax > 0.9 * epsi and it < 200:
            it += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1**2, xl1**2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P / ux2 - Q / xl2
            delx = plam / ux2 - qlam / xl2 - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1)) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy
            if m < n:
                blam = dellam + dely / diagy - GG @ (delx / diagx)
                AA = np.zeros((m + 1, m + 1))
                AA[:m, :m] = np.diag(diaglamyi) + (GG / diagx) @ GG.T
                AA[:m, m] = a
                AA[m, :m] = a
                AA[m, m] = -zet / z
                sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
                dlam, dz = sol[:m], sol[m]
                dx = -delx / diagx - (GG.T @ dlam) / diagx
            else:
                dellamyi = dellam + dely / diagy
                Axx = np.diag(diagx) + (GG.T / diaglamyi) @ GG
                azz = zet / z + a @ (a / diaglamyi)
                axz = -GG.T @ (a / diaglamyi)
                AA = np.zeros((n + 1, n + 1))
                AA[:n, :n] = Axx
                AA[:n, n] = axz
                AA[n, :n] = axz
                AA[n, n] = azz
                bx = delx + GG.T @ (dellamyi / diaglamyi)
                bz = delz - a @ (dellamyi / diaglamyi)
                sol = np.linalg.solve(AA, -np.concatenate([bx, [bz]]))
                dx, dz = sol[:n], sol[n]
                dlam = (GG @ dx) / diaglamyi - dz * (a / diaglamyi) + dellamyi / diaglamyi
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam
            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stm = max((-1.01 * dxx / xx).max(), (-1.01 * dx / (x - alfa)).max(),
                      (1.01 * dx / (beta - x)).max(), 1.0)
            steg = 1.0 / stm
            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            step = (dx, dy, dz, dlam, dxsi, deta, dmu, dzet, ds)
            for _ in range(50):
                x, y, z, lam, xsi, eta, mu, zet, s = (o + steg * dd for o, dd in zip(old, step))
                r = _residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi, *args)
                if np.linalg.norm(r) <= rnorm:
                    break
                steg /= 2.0
            rnorm, rmax = np.linalg.norm(r), np.abs(r).max()
        epsi *= 0.1
    return MmaSubResult(x, y, float(z), lam, xsi, eta, mu, float(zet), s)


@dataclass
class MmaState:
    """Iteration memory: the last two iterates and the asymptotes."""

    iteration: int = 0
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None


@dataclass
class MMA:
    """Stateful MMA driver over ``n`` variables and ``m`` constraints.

    With no real constraints a single inactive dummy constraint is carried so
    the subproblem keeps its standard form.
    """

    n: int
    m: int
    xmin: np.ndarray
    xmax: np.ndarray
    a0: float = 1.0
    a: np.ndarray | None = None
    c: np.ndarray | None = None
    d: np.ndarray | None = None
    settings: MmaSettings = field(default_factory=MmaSettings)
    state: MmaState = field(default_factory=MmaState)
    last: MmaSubResult | None = None

    def __post_init__(self):
        self.xmin = np.broadcast_to(np.asarray(self.xmin, float), (self.n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(self.xmax, float), (self.n,)).copy()
        if np.any(self.xmax <= self.xmin):
            raise ValueError("need xmin < xmax")
        self._dummy = self.m == 0
        mm = max(self.m, 1)
        self.a = np.zeros(mm) if self.a is None else np.asarray(self.a, float)
        self.c = np.full(mm, 1000.0) if self.c is None else np.asarray(self.c, float)
        self.d = np.ones(mm) if self.d is None else np.asarray(self.d, float)

    def update(self, x, f0val: float, df0dx, fval=None, dfdx=None) -> np.ndarray:
        x = np.asarray(x, float)
        if self._dummy:
            fval, dfdx = np.array([-1.0]), np.zeros((1, self.n))
        fval = np.atleast_1d(np.asarray(fval, float))
        dfdx = np.atleast_2d(np.asarray(dfdx, float))
        st, cfg = self.state, self.settings
        st.iteration += 1
        rng = self.xmax - self.xmin
        if st.iteration <= 2 or st.xold2 is None:
            low = x - cfg.asyinit * rng
            upp = x + cfg.asyinit * rng
        else:
            sgn = (x - st.xold1) * (st.xold1 - st.xold2)
            factor = np.where(sgn > 0, cfg.asyincr, np.where(sgn < 0, cfg.asydecr, 1.0))
            low = x - factor * (st.xold1 - st.low)
            upp = x + factor * (st.upp - st.xold1)
            low = np.clip(low, x - 10 * rng, x - cfg.asymin * rng)
            upp = np.clip(upp, x + cfg.asymin * rng, x + 10 * rng)
        alfa = np.maximum.reduce([low + cfg.albefa * (x - low), x - cfg.move * rng, self.xmin])
        beta = np.minimum.reduce([upp - cfg.albefa * (upp - x), x + cfg.move * rng, self.xmax])
        xmami = np.maximum(rng, 1e-5)
        ux2, xl2 = (upp - x) ** 2, (x - low) ** 2
        df0dx = np.asarray(df0dx, float)
        p0, q0 = np.maximum(df0dx, 0), np.maximum(-df0dx, 0)
        pq0 = 0.001 * (p0 + q0) + cfg.raa0 / xmami
        p0, q0 = (p0 + pq0) * ux2, (q0 + pq0) * xl2
        P, Q = np.maximum(dfdx, 0), np.maximum(-dfdx, 0)
        PQ = 0.001 * (P + Q) + cfg.raa0 / xmami
        P, Q = (P + PQ) * ux2, (Q + PQ) * xl2
        b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - fval
        sub = subsolv(len(fval), self.n, cfg.epsimin, low, upp, alfa, beta, p0, q0, P, Q,
                      self.a0, self.a, b, self.c, self.d)
        st.xold2, st.xold1 = st.xold1, x.copy()
        st.low, st.upp = low, upp
        self.last = sub
        return sub.x


def kkt_residual(x, y, z, lam, xsi, eta, mu, zet, s, xmin, xmax, df0dx, fval, dfdx,
                 a0, a, c, d) -> float:
    """Norm of the KKT residual of the original (not approximated) problem."""
    rex = df0dx + dfdx.T @ lam - xsi + eta
    rey = c + d * y - mu - lam
    rez = a0 - zet - a @ lam
    relam = fval - a * z - y + s
    r = np.concatenate([rex, rey, [rez], relam, xsi * (x - xmin), eta * (xmax - x),
                        mu * y, [zet * z], lam * s])
    return float(np.linalg.norm(r))
