"""Pick model sizes that land near a real-valued parameter budget."""
from __future__ import annotations

from .gmp import GmpConfig
from .recurrent import recurrent_param_count

GMP_ORDERS = (1, 3, 5, 7)
_MAX_HIDDEN = 256


class BudgetError(ValueError):
    pass


def gmp_budget_terms(target_terms: int, orders=GMP_ORDERS) -> GmpConfig:
    """GMP term plan holding exactly ``target_terms`` distinct terms.

    Starts from memory depth 4 with cross lags -1..1 and widens the
    (memory depth, cross-lag span) grid until it holds enough terms, then
    trims the highest-order, widest cross terms first. Small budgets shrink
    the memory depth instead.
    """
    def per_m(span):
        # p == 1 makes the envelope factor 1, so cross lags would only duplicate x[n-m]
        return 1 + (len(orders) - 1) * (2 * span + 1)

    best = None
    for span in range(1, 16):
        depth = max(4, -(-target_terms // per_m(span)) - 1)
        size = (depth + 1) * per_m(span)
        if best is None or size < best[0]:
            best = (size, depth, span)
    _, depth, span = best
    while depth > 0 and depth * per_m(span) >= target_terms:
        depth -= 1
    lags = tuple(range(-span, span + 1))
    terms = [(m, l, p) for m in range(depth + 1) for l in lags for p in orders if p > 1 or l == 0]

    def drop_priority(t):
        m, l, p = t
        return (l != 0, p, abs(l), m)

    terms.sort(key=drop_priority)
    kept = set(terms[:target_terms])
    ordered = [t for t in ((m, l, p) for m in range(depth + 1) for l in lags for p in orders) if t in kept]
    return GmpConfig(depth, tuple(orders), lags, tuple(ordered))


def _pick(cands: list[tuple[int, dict]], target: int, tol: float, widest_state: bool = False):
    ok = [(n, hp) for n, hp in cands if abs(n - target) <= tol * target]
    if not ok:
        return None
    under = [c for c in ok if c[0] <= target]
    pool = under or ok
    if widest_state:
        return min(pool, key=lambda c: (-c[1]["hidden_size"], abs(c[0] - target)))
    return min(pool, key=lambda c: abs(c[0] - target))


def search_config_for_budget(family: str, target_params: int, tolerance: float = 0.05) -> dict:
    """Hyperparameters whose parameter count is within ``tolerance * target``.

    Closest not-exceeding configs win; recurrent baselines fall back to an
    intermediate dense layer only when no plain hidden size is close enough.
    """
    if family == "gmp":
        terms = target_params // 2
        if terms < 1:
            raise BudgetError(f"budget {target_params} below the smallest GMP")
        cfg = gmp_budget_terms(terms)
        n = 2 * cfg.num_terms
        if abs(n - target_params) > tolerance * target_params:
            raise BudgetError(f"no GMP plan within tolerance of {target_params}")
        return cfg.to_dict()

    if family not in ("gru", "lstm", "dgru"):
        raise BudgetError(f"unknown family {family!r}")
    smallest = recurrent_param_count(family, 1)
    if target_params < smallest * (1 - tolerance):
        raise BudgetError(f"budget {target_params} below the smallest {family} ({smallest})")

    plain = [(recurrent_param_count(family, h), {"hidden_size": h}) for h in range(1, _MAX_HIDDEN)]
    pick = _pick(plain, target_params, tolerance)
    if pick is None and family != "dgru":
        with_fc = [(recurrent_param_count(family, h, fc_hidden=k), {"hidden_size": h, "fc_hidden": k})
                   for h in range(1, 64) for k in range(1, 64)]
        pick = _pick(with_fc, target_params, tolerance, widest_state=True)
    if pick is None:
        raise BudgetError(f"no {family} configuration within {tolerance:.0%} of {target_params}")
    return pick[1]
