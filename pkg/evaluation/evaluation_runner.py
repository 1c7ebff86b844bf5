# evaluation/evaluation_runner.py
import os
from typing import Sequence

import pandas as pd

from bitforest.config import EngineSettings
from .evaluator import BENCH_COLUMNS, BitforestEvaluator


def run_benchmark(sizes: Sequence[int], out: str, settings: EngineSettings = None,
                  delta: int = 1000, batch: int = 10000) -> pd.DataFrame:
    """Run the bench scenario for every size and write one CSV row per size."""
    evaluator = BitforestEvaluator(settings, delta=delta, batch=batch)

    print("\n" + "=" * 60)
    print(f"RUNNING BITFOREST BENCHMARK ({', '.join(str(s) for s in sizes)} records)")
    print("=" * 60)

    results = evaluator.run(sizes)

    folder = os.path.dirname(out)
    if folder:
        os.makedirs(folder, exist_ok=True)
    results[BENCH_COLUMNS].to_csv(out, index=False)

    print("\n" + evaluator.generate_report(results))
    print(f"\n✅ Benchmark results saved to: {out}")
    return results


if __name__ == "__main__":
    run_benchmark([10_000, 30_000, 100_000], "evaluation/results/bench.csv")
