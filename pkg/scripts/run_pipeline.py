"""End-to-end demo: ingest -> indicators -> backtest -> tune -> evolve -> report.

Drives the CLI exactly as a user would, against the bundled trending fixture.
Everything lands under ./demo_run/ (deleted and rebuilt on each invocation).

Run from the repo root:  python3 scripts/run_pipeline.py
"""

from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from tradelab.cli import main  # noqa: E402

WORKDIR = ROOT / "demo_run"


def run(argv):
    print(f"\n$ tradelab {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}")


def pipeline() -> None:
    if WORKDIR.exists():
        shutil.rmtree(WORKDIR)
    WORKDIR.mkdir()
    warehouse = WORKDIR / "warehouse"

    run(["ingest", "--csv", str(ROOT / "tests" / "fixtures" / "trending.csv"),
         "--symbol", "TRENDY", "--interval", "3600", "--warehouse", str(warehouse)])

    config = {
        "seed": 0,
        "out_dir": str(WORKDIR / "out"),
        "data": {"warehouse": str(warehouse), "symbol": "TRENDY", "interval": 3600},
        "costs": {"fee_bps": 10.0, "slippage_bps": 5.0, "initial_cash": 10_000.0},
        "strategy": {"kind": "ema_cross", "params": {"p_short": 9, "p_long": 21}},
        "optimize": {
            "mode": "tune",
            "grid": [
                {"p_short": 9, "p_long": 21},
                {"p_short": 9, "p_long": 30},
                {"p_short": 20, "p_long": 30},
                {"p_short": 20, "p_long": 50},
            ],
            "inputs": ["rsi:p=14", "ema:p=9", "ema:p=21", "atr:p=14"],
            "evolution": {"population_size": 40, "max_generations": 10},
        },
    }
    config_path = WORKDIR / "config.json"
    config_path.write_text(json.dumps(config, indent=2))

    run(["indicator", "--config", str(config_path),
         "--indicator", "ema:p=9", "--indicator", "ema:p=21", "--indicator", "rsi:p=14"])
    run(["backtest", "--config", str(config_path)])
    run(["optimize", "--config", str(config_path), "--mode", "tune",
         "--out", str(WORKDIR / "tuned")])
    run(["optimize", "--config", str(config_path), "--mode", "evolve",
         "--out", str(WORKDIR / "evolved")])
    run(["report", "--config", str(config_path),
         "--report", str(WORKDIR / "out" / "report.json"),
         "--out", str(WORKDIR / "plots")])

    best = json.loads((WORKDIR / "tuned" / "best_params.json").read_text())
    print(f"\ndemo complete under {WORKDIR}")
    print(f"tuned EMA periods: {best}")


if __name__ == "__main__":
    pipeline()
