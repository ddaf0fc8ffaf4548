"""Random-instance checks that the transitional layer collapses to its special cases.

With zero transition intensity one layer must equal plain two-sided mean
convolution, and that in turn must equal two chained degree-normalized
bipartite propagation layers over the same interaction matrix.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import IncidenceMatrix
from .model import oracle_hypergraph_conv, oracle_lightgcn_two_layer, thc_layer


@dataclass(frozen=True)
class EquivalenceCase:
    """Fully determined random instance: topology spec, embedding spec, tolerance."""

    num_nodes: int = 30
    num_hyperedges: int = 20
    density: float = 0.2
    seed: int = 0
    d: int = 8
    emb_seed: int = 1000
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")

    def build(self) -> tuple[IncidenceMatrix, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        mask = rng.random((self.num_nodes, self.num_hyperedges)) < self.density
        inc = IncidenceMatrix.from_pairs(self.num_nodes, self.num_hyperedges,
                                         np.argwhere(mask))
        emb = np.random.default_rng(self.emb_seed).normal(size=(self.num_nodes, self.d))
        return inc, emb


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    max_deviation: float


def check_thc_vs_hyperconv(case: EquivalenceCase) -> CheckResult:
    """A transitional layer with gamma=0 and no intrinsic rows is plain convolution."""
    inc, emb = case.build()
    out, _ = thc_layer(emb, inc, 0.0, None)
    reference = oracle_hypergraph_conv(emb, inc)
    deviation = float(np.abs(out - reference).max()) if out.size else 0.0
    return CheckResult("thc_vs_hypergraph_conv", deviation <= case.tolerance, deviation)


def check_thc_vs_lightgcn(case: EquivalenceCase) -> CheckResult:
    """Two chained bipartite propagation layers equal one hypergraph convolution
    when the interaction matrix doubles as the incidence matrix."""
    inc, emb = case.build()
    two_layer = oracle_lightgcn_two_layer(emb, inc)
    reference = oracle_hypergraph_conv(emb, inc)
    deviation = float(np.abs(two_layer - reference).max()) if two_layer.size else 0.0
    return CheckResult("thc_vs_lightgcn_two_layer", deviation <= case.tolerance, deviation)


def battery_cases(num_cases: int = 30, dims=(1, 8, 64), densities=(0.05, 0.5),
                  tolerance: float = 1e-10, base_seed: int = 0) -> list[EquivalenceCase]:
    """Cycle dimensions and densities across `num_cases` distinct seeds."""
    cases = []
    combos = [(d, rho) for d in dims for rho in densities]
    for i in range(num_cases):
        d, rho = combos[i % len(combos)]
        cases.append(EquivalenceCase(
            num_nodes=20 + (i % 4) * 10, num_hyperedges=10 + (i % 3) * 15,
            density=rho, seed=base_seed + i, d=d, emb_seed=base_seed + 1000 + i,
            tolerance=tolerance))
    return cases


def run_equivalence_battery(num_cases: int = 30, tolerance: float = 1e-10,
                            base_seed: int = 0) -> dict:
    """Run both checks over the case grid; returns a JSON-serializable report."""
    cases = battery_cases(num_cases=num_cases, tolerance=tolerance, base_seed=base_seed)
    results = []
    for case in cases:
        for check in (check_thc_vs_hyperconv, check_thc_vs_lightgcn):
            outcome = check(case)
            results.append({
                "case": asdict(case),
                "check": outcome.name,
                "passed": outcome.passed,
                "max_deviation": outcome.max_deviation,
            })
    return {
        "num_cases": len(cases),
        "all_passed": all(r["passed"] for r in results),
        "results": results,
    }
