from .evaluator import BitforestEvaluator
from .evaluation_runner import run_benchmark
from .test_generator import SampleLedgerGenerator

__all__ = ['BitforestEvaluator', 'SampleLedgerGenerator', 'run_benchmark']
