"""Regenerate the frozen CSV fixtures (run from the repository root)."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from oracles import overwrite_toy  # noqa: E402

from longtmle import write_csv, write_daily_csv  # noqa: E402
from longtmle.oracle import binary_world, default_scenario, simulate, simulate_daily  # noqa: E402

HERE = Path(__file__).parent

if __name__ == "__main__":
    write_csv(overwrite_toy(), HERE / "overwrite_toy.csv")
    write_csv(simulate(binary_world(), 300, seed=11), HERE / "binary_world_n300.csv")
    write_csv(simulate(default_scenario().dgp, 400, seed=5), HERE / "default_n400.csv")
    write_daily_csv(simulate_daily(default_scenario().dgp, 60, unit=30, seed=2), HERE / "daily_n60_u30.csv")
