import math
from fractions import Fraction

import numpy as np
import pytest

from bitforest.dataset import fabricate_record, generate_dataset
from bitforest.errors import ParameterError
from bitforest.records import digest
from bitforest.verify import (ADMISSIBLE_K, B1, B2, B3, MAPPED, OK, RAW_HASH, SEED_CONSTANT,
                              SEED_MASK, VerificationObject, alpha_holds, build_vo, improved_crc,
                              local_reverify, log_beta, make_seed, random_seed, select_k,
                              verify_results)


def _digests(records):
    return [digest(r) for r in records]


class TestImprovedCrc:

    def test_standard_check_value(self):
        assert improved_crc(b"123456789", 32, 0xEDB88320) == 0xCBF43926

    def test_empty_input_is_zero(self, rng):
        for _ in range(20):
            k = int(rng.integers(8, 129))
            assert improved_crc(b"", k, random_seed(rng)) == 0

    def test_width(self, rng):
        seed = random_seed(rng)
        for k in (8, 33, 64, 128):
            assert 0 <= improved_crc(b"some digest", k, seed) < 1 << k

    def test_seed_selects_polynomial(self, rng):
        a, b = random_seed(rng), random_seed(rng)
        assert improved_crc(b"abc", 64, a) != improved_crc(b"abc", 64, b)

    def test_width_range(self):
        with pytest.raises(ParameterError):
            improved_crc(b"x", 4, 0xFFFF)

    def test_seed_constant_bits(self):
        seed = make_seed(0)
        for k in (32, 36, 128):
            assert seed.polynomial(k) >> (k - 1) == 1
        assert seed.r == SEED_CONSTANT

    def test_top_bit_set_for_any_r_prime(self, rng):
        words = rng.integers(0, 1 << 64, size=(300, 2), dtype=np.uint64)
        r_primes = [0, SEED_MASK] + [(int(h) << 64) | int(l) for h, l in words]
        for r_prime in r_primes:
            seed = make_seed(r_prime)
            assert seed.r & r_prime == r_prime
            for k in ADMISSIBLE_K:
                assert seed.polynomial(k) >> (k - 1) == 1

    def test_seed_range(self):
        with pytest.raises(ParameterError):
            make_seed(1 << 128)


class TestWidthSelection:

    def test_beta_at_32_bits(self):
        n = 10_000
        assert log_beta(n, 32) == pytest.approx(-n * (n - 1) / 2 / 2 ** 32, rel=1e-5)
        assert log_beta(n, 32) == pytest.approx(-0.01164, rel=1e-3)

    def test_beta_at_64_bits(self):
        assert log_beta(10_000, 64) == pytest.approx(-2.71e-12, rel=1e-2)

    def test_beta_approximations_agree(self):
        # past the exact-product cutoff the series and lgamma forms take over
        n = (1 << 22) + 10
        series = log_beta(n, 64)
        assert series == pytest.approx(-n * (n - 1) / 2 / 2 ** 64, rel=1e-6)
        # 2^23 terms against 2^32 values: the lgamma form
        t, x = (1 << 23) - 1, 2.0 ** 32
        s1 = t * (t + 1) / 2
        s2 = t * (t + 1) * (2 * t + 1) / 6
        series = -(s1 / x + s2 / (2 * x * x) + s1 * s1 / (3 * x ** 3))
        assert log_beta(1 << 23, 32) == pytest.approx(series, rel=1e-6)

    def test_beta_trivial_cases(self):
        assert log_beta(0, 32) == 0.0
        assert log_beta(1, 32) == 0.0
        assert log_beta(257, 8) == -math.inf

    def test_alpha_at_32_bits(self):
        assert alpha_holds(10_000, 32, 0.99999)
        assert 1 - Fraction(10_000, 2 ** 32) > 1 - Fraction(1, 10 ** 5)

    def test_select_k_example(self):
        assert select_k(10_000, 0.999999, 0.99) == 36

    def test_select_k_small_result_set(self):
        assert select_k(20, 0.99999, 0.99) == 32

    def test_select_k_monotone(self):
        widths = [select_k(n, 0.99999, 0.99) for n in (10, 1_000, 100_000, 10_000_000)]
        assert widths == sorted(widths)

    def test_select_k_gives_up(self):
        assert select_k(2 ** 100, 0.99999, 0.99) is None

    def test_probabilities_validated(self):
        with pytest.raises(ParameterError):
            select_k(10, 1.0, 0.5)


class TestVerificationObject:

    def test_bytes_round_trip(self, rng):
        seed = random_seed(rng)
        vo = build_vo(_digests(generate_dataset(30, seed=2)), seed, 0.99999, 0.99)
        assert vo.mode == MAPPED and vo.k == 32
        assert VerificationObject.from_bytes(vo.to_bytes()) == vo
        assert vo.size_bytes == 6 + 30 * 4

    def test_raw_hash_fallback(self, rng):
        digests = _digests(generate_dataset(5, seed=2))
        strict = Fraction(1) - Fraction(1, 2 ** 200)
        vo = build_vo(digests, random_seed(rng), strict, 0.99)
        assert vo.mode == RAW_HASH and vo.k is None
        assert vo.items == digests
        assert VerificationObject.from_bytes(vo.to_bytes()) == vo

    def test_bad_bytes(self):
        with pytest.raises(ParameterError):
            VerificationObject.from_bytes(b"")
        with pytest.raises(ParameterError):
            VerificationObject.from_bytes(bytes([0, 32, 2, 0, 0, 0, 1]))


class TestVerdicts:

    def setup_method(self):
        self.rng = np.random.default_rng(9)
        self.seed = random_seed(self.rng)
        self.records = generate_dataset(40, seed=4)
        self.vo = build_vo(_digests(self.records), self.seed, 0.99999, 0.99)

    def test_honest(self):
        verdict = verify_results(self.records, self.vo, self.seed, 0.5)
        assert verdict.kind == OK
        assert verdict.accepted == self.records
        assert (verdict.n_h, verdict.n_r, verdict.n_acc) == (40, 40, 40)

    def test_fabricated(self):
        fake = [fabricate_record(self.rng) for _ in range(3)]
        verdict = verify_results(self.records + fake, self.vo, self.seed, 0.5)
        assert verdict.kind == B1
        assert verdict.fabricated == fake
        assert verdict.accepted == self.records

    def test_withheld(self):
        verdict = verify_results(self.records[2:], self.vo, self.seed, 0.5)
        assert verdict.kind == B2
        assert len(verdict.unmatched_checksums) == 2
        matched, remaining = local_reverify(self.records[:2], verdict.unmatched_checksums,
                                            self.vo.k, self.seed)
        assert matched == self.records[:2]
        assert remaining == []

    def test_mostly_fabricated(self):
        fake = [fabricate_record(self.rng) for _ in range(10)]
        verdict = verify_results(self.records[:3] + fake, self.vo, self.seed, 0.5)
        assert verdict.kind == B3
        assert verdict.accepted == []

    def test_duplicates_match_as_multiset(self):
        twice = self.records[:1] * 2
        vo = build_vo(_digests(twice), self.seed, 0.99999, 0.99)
        assert verify_results(twice, vo, self.seed, 0.5).kind == OK
        assert verify_results(twice * 2, vo, self.seed, 0.5).kind == B1

    def test_empty_answer(self):
        vo = build_vo([], self.seed, 0.99999, 0.99)
        assert verify_results([], vo, self.seed, 0.5).kind == OK
        assert verify_results([], self.vo, self.seed, 0.5).kind == B2

    def test_raw_hash_verdicts(self):
        strict = Fraction(1) - Fraction(1, 2 ** 200)
        vo = build_vo(_digests(self.records), self.seed, strict, 0.99)
        verdict = verify_results(self.records[1:], vo, self.seed, 0.5)
        assert verdict.kind == B2
        matched, remaining = local_reverify(self.records[:1], verdict.unmatched_checksums,
                                            None, self.seed)
        assert matched == self.records[:1] and remaining == []


class TestDetectionRates:

    def test_fabricated_acceptance_rate_at_16_bits(self):
        rng = np.random.default_rng(2024)
        # CRC-16/ARC polynomial; the top bit keeps the register map invertible
        seed = make_seed(0xA001)
        truth = rng.integers(0, 256, size=(100, 32), dtype=np.uint8)
        checksums = {improved_crc(row.tobytes(), 16, seed) for row in truth}
        trials = 100_000
        samples = rng.integers(0, 256, size=(trials, 32), dtype=np.uint8)
        hits = sum(improved_crc(row.tobytes(), 16, seed) in checksums for row in samples)
        p = len(checksums) / 2 ** 16
        se = math.sqrt(trials * p * (1 - p))
        assert abs(hits - trials * p) <= 3 * se

    def test_fully_malicious_rejected(self):
        rng = np.random.default_rng(5)
        seed = random_seed(rng)
        vo = build_vo(_digests(generate_dataset(20, seed=6)), seed, 0.99999, 0.99)
        rejected = 0
        for _ in range(10_000):
            fake = [fabricate_record(rng) for _ in range(3)]
            rejected += verify_results(fake, vo, seed, 0.5).kind == B3
        assert rejected >= 9_990
