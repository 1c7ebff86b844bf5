from .articulated import Token, TokenVersionTable, decode_token, encode_token, feature_set_id
from .compressed import CompressedForest, SizeReport
from .config import EngineSettings, ForestConfig, SecurityParameters, load_settings
from .dataset import PlantedKeyword, generate_dataset
from .engine import BpiEngine, QueryResult
from .features import FeatureSpec, KeywordMatch, RangeCondition
from .forest import BmfForest, QueryStats
from .hsb import SpBehavior, build_network
from .pcm import MappingTable, PersistenceManager
from .records import TransactionRecord, digest
from .verify import (VerificationObject, build_vo, improved_crc, local_reverify, make_seed,
                     select_k, verify_results)

__all__ = [
    'BmfForest', 'BpiEngine', 'CompressedForest', 'EngineSettings', 'FeatureSpec', 'ForestConfig',
    'KeywordMatch', 'MappingTable', 'PersistenceManager', 'PlantedKeyword', 'QueryResult',
    'QueryStats', 'RangeCondition', 'SecurityParameters', 'SizeReport', 'SpBehavior', 'Token',
    'TokenVersionTable', 'TransactionRecord', 'VerificationObject', 'build_network', 'build_vo',
    'decode_token', 'digest', 'encode_token', 'feature_set_id', 'generate_dataset',
    'improved_crc', 'load_settings', 'local_reverify', 'make_seed', 'select_k', 'verify_results',
]
