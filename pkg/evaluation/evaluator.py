# evaluation/evaluator.py
import tempfile
import time
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from bitforest.config import EngineSettings
from bitforest.dataset import PlantedKeyword, generate_dataset
from bitforest.engine import BpiEngine
from bitforest.forest import QueryStats

BENCH_COLUMNS = ['size', 'full_query_ms', 'delta_query_ms', 'insert_batch_ms',
                 'index_bytes', 'bits_per_entry']
BENCH_ADDRESS = "0x" + "ab" * 20


def _ms(started: float) -> float:
    return (time.perf_counter() - started) * 1000.0


class BitforestEvaluator:
    """
    Scaled-down benchmark of the compressed index.

    For every ledger size the evaluator ingests a synthetic ledger into a
    fresh data directory, times the last insert batch (persist included),
    one full query for a planted address, and a resumed query after
    ``delta`` more records arrive.
    """

    def __init__(self, settings: EngineSettings = None, delta: int = 1000, batch: int = 10000,
                 frequency: float = 0.01):
        self.settings = settings or EngineSettings()
        self.delta = delta
        self.batch = batch
        self.planted = [PlantedKeyword("from", BENCH_ADDRESS, frequency)]

    def _open(self, data_dir: str) -> BpiEngine:
        forest, security = self.settings.forest, self.settings.security
        return BpiEngine.open(
            data_dir,
            branching=forest.branching,
            create_batch_threshold=forest.create_batch_threshold,
            alpha=security.alpha, beta=security.beta, gamma=security.gamma,
        )

    def run_size(self, size: int) -> Dict[str, float]:
        """
        Run the scenario for one ledger size and return its metrics row.
        """
        records = generate_dataset(size + self.delta, seed=self.settings.seed, planted=self.planted)
        head, delta = records[:size], records[size:]
        batch = min(self.batch, size)

        with tempfile.TemporaryDirectory(prefix="bitforest-bench-") as data_dir:
            engine = self._open(data_dir)
            try:
                ids = [engine.add_feature(None, "from", BENCH_ADDRESS).feature_id]
                engine.ingest(head[:size - batch])

                started = time.perf_counter()
                engine.ingest(head[size - batch:])
                engine.persist()
                insert_batch_ms = _ms(started)

                started = time.perf_counter()
                full = engine.query(ids)
                full_query_ms = _ms(started)

                engine.ingest(delta)
                stats = QueryStats()
                started = time.perf_counter()
                resumed = engine.query(ids, token=full.token, stats=stats)
                delta_query_ms = _ms(started)

                report = engine.measured_size()
            finally:
                engine.close()

        print(f"✓ size {size}: {len(full.indices)} matches, {len(resumed.indices)} new after "
              f"{len(delta)} records ({stats.words_read} mask words read)")
        return {
            'size': size,
            'full_query_ms': full_query_ms,
            'delta_query_ms': delta_query_ms,
            'insert_batch_ms': insert_batch_ms,
            'index_bytes': report.total_bytes,
            'bits_per_entry': report.bits_per_entry,
            'full_matches': len(full.indices),
            'delta_matches': len(resumed.indices),
            'delta_words_read': stats.words_read,
        }

    def run(self, sizes: Sequence[int]) -> pd.DataFrame:
        rows: List[Dict[str, float]] = [self.run_size(int(size)) for size in sizes]
        return pd.DataFrame(rows)

    @staticmethod
    def delta_flatness(results: pd.DataFrame) -> float:
        """
        Largest over smallest resumed-query word count across sizes; close to
        1 when resuming costs the same at every ledger size.
        """
        words = results['delta_words_read'].to_numpy(dtype=np.float64)
        if len(words) == 0 or words.min() == 0:
            return float('nan')
        return float(words.max() / words.min())

    @staticmethod
    def insert_slope(results: pd.DataFrame) -> float:
        """Milliseconds per extra million ledger records for one insert batch."""
        if len(results) < 2:
            return 0.0
        slope, _ = np.polyfit(results['size'].to_numpy(dtype=np.float64),
                              results['insert_batch_ms'].to_numpy(dtype=np.float64), 1)
        return float(slope * 1_000_000)

    def generate_report(self, results: pd.DataFrame) -> str:
        report = []
        report.append("=" * 60)
        report.append("BITFOREST BENCHMARK REPORT")
        report.append("=" * 60)
        report.append(results[BENCH_COLUMNS].to_string(index=False, float_format=lambda v: f"{v:.3f}"))
        report.append("-" * 40)
        report.append(f"{'delta flatness':>20}: {self.delta_flatness(results):.2f}x")
        report.append(f"{'insert slope':>20}: {self.insert_slope(results):+.3f} ms per 1M records")
        return "\n".join(report)
