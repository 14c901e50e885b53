"""Random instance builders shared by the tests."""

import numpy as np

from iwf.experiments import TopologyParams, random_scenario
from iwf.model import Scenario


def random_capped_set(rng, n, slack=(1.05, 3.0)):
    """Random caps with mean strictly above 1; occasionally one is infinite."""
    caps = rng.uniform(0.0, 1.0, n)
    caps *= n * rng.uniform(*slack) / caps.sum()
    if rng.random() < 0.2:
        caps[rng.integers(n)] = np.inf
    return caps


def random_game(rng, Q, N, spread=1.0, gap=False, mask=None):
    """Scenario with log-normal gains; ``spread`` widens their dynamic range."""
    g = np.exp(spread * rng.standard_normal((Q, Q, N)))
    g[~np.eye(Q, dtype=bool)] *= rng.uniform(0.05, 0.6)
    gaps = rng.uniform(1.0, 3.0, Q) if gap else np.ones(Q)
    if mask is None:
        mask = rng.choice([1.5, 2.0, 4.0, np.inf])
    return Scenario(g, gaps, np.full((Q, N), mask))


def fig_scenario(Q, N, L, ratio, trial, seed=0, mask=2.0):
    tp = TopologyParams(num_users=Q, num_carriers=N, num_taps=L, seed=seed, mask=mask)
    return random_scenario(tp, ratio, trial=trial)


def random_feasible_profile(rng, s, caps=None):
    from iwf.projection import project_rows
    caps = s.mask if caps is None else caps
    u = rng.exponential(size=(s.num_users, s.num_carriers)) * rng.uniform(0.2, 3.0)
    return project_rows(-u, caps)[0]
