"""Independent oracle implementations shared by the test modules.

Everything here is written against the math directly (series, hand-rolled
filters, brute-force counting) so package code and expected values come from
two separate routes.
"""

from __future__ import annotations

import math

import numpy as np

from quadguard.autodiff import Tensor


# ---------------------------------------------------------------------------
# random differentiable programs for finite-difference checks
# ---------------------------------------------------------------------------

_UNARY = ("exp_s", "tanh", "sigmoid", "softplus", "softmax", "layernorm",
          "sumrows", "transpose", "logsafe")
_BINARY = ("add", "sub", "mul", "divsafe", "js")


def random_program(seed: int):
    """Build a random op program; returns (leaves, replay_fn).

    replay_fn() re-runs the program against the leaves' current values and
    returns the scalar loss Tensor, so finite differences can perturb leaf
    entries and replay.
    """
    rng = np.random.default_rng(seed)
    n_rows = int(rng.integers(2, 4))
    n_cols = int(rng.integers(2, 4))
    shapes = [(n_rows, n_cols), (n_rows, n_cols), (n_cols, n_rows),
              (1, n_cols), (n_rows, 1)]
    n_leaves = int(rng.integers(2, len(shapes) + 1))
    leaves = [Tensor(rng.uniform(0.2, 1.5, size=shapes[i]), requires_grad=True)
              for i in range(n_leaves)]

    program: list[tuple] = []
    pool_shapes = [leaf.shape for leaf in leaves]

    def matching(shape):
        return [i for i, s in enumerate(pool_shapes) if s == shape]

    n_ops = int(rng.integers(3, 8))
    for _ in range(n_ops):
        kind = rng.choice(["unary", "binary", "matmul"],
                          p=[0.45, 0.35, 0.2])
        if kind == "unary":
            i = int(rng.integers(0, len(pool_shapes)))
            op = str(rng.choice(_UNARY))
            shape = pool_shapes[i]
            if op == "layernorm" and shape[1] < 2:
                op = "tanh"
            program.append((op, (i,)))
            if op == "sumrows":
                pool_shapes.append((shape[0], 1))
            elif op == "transpose":
                pool_shapes.append((shape[1], shape[0]))
            else:
                pool_shapes.append(shape)
        elif kind == "binary":
            i = int(rng.integers(0, len(pool_shapes)))
            cands = matching(pool_shapes[i])
            j = int(rng.choice(cands))
            op = str(rng.choice(_BINARY))
            program.append((op, (i, j)))
            pool_shapes.append(pool_shapes[i])
        else:
            i = int(rng.integers(0, len(pool_shapes)))
            r, c = pool_shapes[i]
            cands = [j for j, s in enumerate(pool_shapes) if s[0] == c]
            if not cands:
                program.append(("transpose", (i,)))
                pool_shapes.append((c, r))
                continue
            j = int(rng.choice(cands))
            program.append(("matmul", (i, j)))
            pool_shapes.append((r, pool_shapes[j][1]))

    def replay() -> Tensor:
        pool: list[Tensor] = list(leaves)
        for op, args in program:
            if op == "exp_s":
                pool.append((pool[args[0]] * 0.3).exp())
            elif op == "tanh":
                pool.append(pool[args[0]].tanh())
            elif op == "sigmoid":
                pool.append(pool[args[0]].sigmoid())
            elif op == "softplus":
                pool.append(pool[args[0]].softplus())
            elif op == "softmax":
                pool.append(pool[args[0]].softmax_rows())
            elif op == "layernorm":
                pool.append(pool[args[0]].layer_norm_rows())
            elif op == "sumrows":
                pool.append(pool[args[0]].sum_rows())
            elif op == "transpose":
                pool.append(pool[args[0]].T)
            elif op == "logsafe":
                pool.append((pool[args[0]].sigmoid() + 0.1).log())
            elif op == "add":
                pool.append(pool[args[0]] + pool[args[1]])
            elif op == "sub":
                pool.append(pool[args[0]] - pool[args[1]])
            elif op == "mul":
                pool.append(pool[args[0]] * pool[args[1]])
            elif op == "divsafe":
                pool.append(pool[args[0]] / (pool[args[1]].softplus() + 0.5))
            elif op == "js":
                pool.append(pool[args[0]].softmax_rows()
                            .js_rows(pool[args[1]].softmax_rows()))
            elif op == "matmul":
                pool.append(pool[args[0]] @ pool[args[1]])
            else:  # pragma: no cover
                raise AssertionError(op)
        total = None
        for node in pool[len(leaves):] or pool:
            s = node.sum()
            total = s if total is None else total + s
        return total

    return leaves, replay


def finite_difference_check(seed: int, h: float = 1e-5,
                            tol: float = 1e-4) -> float:
    """Run one random program; return the worst mixed abs/rel error."""
    leaves, replay = random_program(seed)
    loss = replay()
    loss.backward()
    analytic = [np.zeros_like(l.value) if l.grad is None else l.grad.copy()
                for l in leaves]
    worst = 0.0
    for leaf, a in zip(leaves, analytic):
        flat = leaf.value.ravel()
        af = a.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = replay().value.item()
            flat[i] = orig - h
            lo = replay().value.item()
            flat[i] = orig
            num = (hi - lo) / (2 * h)
            err = abs(af[i] - num) / max(1.0, abs(num), abs(af[i]))
            worst = max(worst, err)
    assert worst < tol, f"seed {seed}: worst grad error {worst:.3e}"
    return worst


# ---------------------------------------------------------------------------
# chi-squared quantile via series + Newton (independent of scipy)
# ---------------------------------------------------------------------------

def _gammainc_lower(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x), series/continued fraction."""
    if x <= 0:
        return 0.0
    lg = math.lgamma(s)
    if x < s + 1.0:
        term = 1.0 / s
        total = term
        k = 1
        while True:
            term *= x / (s + k)
            total += term
            if abs(term) < abs(total) * 1e-15:
                break
            k += 1
        return total * math.exp(-x + s * math.log(x) - lg)
    # Lentz continued fraction for Q(s, x)
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    f = d
    for i in range(1, 300):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        f *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    q = math.exp(-x + s * math.log(x) - lg) * f
    return 1.0 - q


def chi2_quantile_oracle(p: float, dof: int) -> float:
    """Invert the chi-squared CDF by Newton iteration on P(dof/2, x/2)."""
    s = dof / 2.0
    x = dof * (1.0 - 2.0 / (9 * dof) + 2.896 * math.sqrt(2.0 / (9 * dof))) ** 3 \
        if p > 0.5 else float(dof)  # Wilson-Hilferty-ish start
    x = max(x, 1e-6)
    for _ in range(100):
        cdf = _gammainc_lower(s, x / 2.0)
        # density of chi2
        pdf = math.exp((s - 1.0) * math.log(x / 2.0) - x / 2.0
                       - math.lgamma(s)) / 2.0
        if pdf <= 0:
            break
        step = (cdf - p) / pdf
        x_new = x - step
        if x_new <= 0:
            x_new = x / 2.0
        if abs(x_new - x) < 1e-12 * max(1.0, x):
            x = x_new
            break
        x = x_new
    return x


# ---------------------------------------------------------------------------
# hand-rolled scalar Kalman filter
# ---------------------------------------------------------------------------

def scalar_kf(zs, us, dt, q, r, x0, p0):
    """Textbook scalar KF for x_{k+1} = x_k + dt*u_k, z = x; returns arrays."""
    xs, ps, residues = [], [], []
    x, p = x0, p0
    for z, u in zip(zs, us):
        x = x + dt * u
        p = p + q
        res = z - x
        k = p / (p + r)
        x = x + k * res
        p = (1.0 - k) * p
        xs.append(x)
        ps.append(p)
        residues.append(res)
    return np.array(xs), np.array(ps), np.array(residues)


def scalar_riccati_steady_state(q: float, r: float) -> tuple[float, float]:
    """Steady-state (P_pred, K) for the scalar random-walk/identity KF.

    P solves P = (1-K)P + q with K = P/(P+r)  =>  P^2 - qP - qr = 0 (predicted
    covariance), K = P/(P+r).
    """
    p_pred = (q + math.sqrt(q * q + 4 * q * r)) / 2.0
    return p_pred, p_pred / (p_pred + r)


# ---------------------------------------------------------------------------
# brute-force metric oracles
# ---------------------------------------------------------------------------

def pairwise_auc(scores, labels) -> float:
    """Mann-Whitney probability: P(score_pos > score_neg) + 0.5 ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return float("nan")
    wins = 0.0
    for sp in pos:
        wins += np.sum(sp > neg) + 0.5 * np.sum(sp == neg)
    return wins / (len(pos) * len(neg))


def prf_by_counting(alarms, labels) -> tuple[float, float, float]:
    alarms = np.asarray(alarms, dtype=int)
    labels = np.asarray(labels, dtype=int)
    tp = int(np.sum((alarms == 1) & (labels == 1)))
    fp = int(np.sum((alarms == 1) & (labels == 0)))
    fn = int(np.sum((alarms == 0) & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1
