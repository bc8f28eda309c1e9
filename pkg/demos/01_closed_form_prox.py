"""Closed-form Bregman proximal steps versus brute-force search.

Each problem kind ships a prox that reduces to shaping the negative
gradient-mapped point and solving one scalar cubic.  Here we sanity-check
that against 50k random feasible candidates per kind.
"""

import numpy as np

from bregopt import FactorPair, build_problem, make_rng

rng = make_rng(7)

print("== closed-form prox vs random search ==")
for kind in ("gnmf", "wcmf", "ssnmf"):
    if kind == "wcmf":
        m_data = rng.uniform(-1.0, 1.0, (3, 4))
        problem = build_problem(kind, m_data, 2, lambda1=0.4, lambda2=0.15)
    elif kind == "ssnmf":
        m_data = rng.uniform(0.1, 1.0, (3, 4))
        problem = build_problem(kind, m_data, 2, s1=2, s2=2)
    else:
        m_data = rng.uniform(0.1, 1.0, (3, 4))
        problem = build_problem(kind, m_data, 2)

    x_bar = FactorPair(rng.uniform(0.05, 1.0, (3, 2)), rng.uniform(0.05, 1.0, (2, 4)))
    grad = FactorPair(rng.normal(0.0, 4.0, (3, 2)), rng.normal(0.0, 4.0, (2, 4)))
    eta = 0.2
    spec = problem.kernel(eta)

    xp = problem.prox_step(spec, grad, x_bar, eta)
    val = problem.prox_model_value(spec, grad, x_bar, eta, xp)

    best = np.inf
    for _ in range(50_000):
        cand = FactorPair(
            np.maximum(rng.uniform(-0.2, 1.5, (3, 2)), 0.0 if kind != "wcmf" else -np.inf),
            np.maximum(rng.uniform(-0.2, 1.5, (2, 4)), 0.0 if kind != "wcmf" else -np.inf),
        )
        v = problem.prox_model_value(spec, grad, x_bar, eta, cand)
        best = min(best, v)

    print(f"{kind:6s} closed form {val:+.8f}   best of 50k candidates {best:+.8f}"
          f"   margin {best - val:+.2e}")
    assert val <= best + 1e-10

print()
print("the search never wins; the cubic radius is the exact minimizer on its ray")
