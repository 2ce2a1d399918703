"""Sanity benchmark for the neuroevolution engine on XOR.

Runs 20 seeded evolutions with the default hyperparameters and reports how
many reach fitness 3.9 (out of 4) within 300 generations. A healthy engine
solves nearly all of them in well under a hundred generations.

Run from the repo root:  python3 scripts/xor_benchmark.py
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from tradelab.neat import Evolution, EvolutionConfig, NetworkEvaluator  # noqa: E402

CASES = [((0.0, 0.0), 0.0), ((0.0, 1.0), 1.0), ((1.0, 0.0), 1.0), ((1.0, 1.0), 0.0)]
THRESHOLD = 3.9
MAX_GENERATIONS = 300
RUNS = 20


def xor_fitness(genome):
    net = NetworkEvaluator(genome)
    err = 0.0
    for inputs, target in CASES:
        out = net.activate(list(inputs))[0]
        err += (out - target) ** 2
    return 4.0 - err


def benchmark() -> None:
    solved = 0
    started = time.perf_counter()
    for seed in range(RUNS):
        evo = Evolution(2, 1, EvolutionConfig(seed=seed))
        best, history = evo.run(xor_fitness, MAX_GENERATIONS, stop_at=THRESHOLD)
        ok = best.fitness >= THRESHOLD
        solved += ok
        nodes = len(best.nodes)
        conns = sum(1 for c in best.connections if c.enabled)
        print(f"seed {seed:2d}: {'solved' if ok else 'FAILED'} "
              f"gen {len(history) - 1:3d}  fitness {best.fitness:.3f}  "
              f"({nodes} nodes / {conns} live connections)")
    elapsed = time.perf_counter() - started
    print(f"\n{solved}/{RUNS} solved in {elapsed:.1f}s")


if __name__ == "__main__":
    benchmark()
