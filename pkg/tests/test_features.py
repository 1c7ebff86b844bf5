import pytest

from bitforest.errors import ParameterError, SchemaError
from bitforest.features import (FeatureSpec, KeywordMatch, RangeCondition, check_dimension,
                                keyword_key)


class TestRangeCondition:

    def test_half_open(self):
        condition = RangeCondition(10, 20)
        assert [condition(v) for v in (9, 10, 19, 20)] == [False, True, True, False]
        assert condition.describe() == "[10,20)"

    def test_open_bounds(self):
        assert RangeCondition(minimum=5)(10 ** 12)
        assert not RangeCondition(maximum=5)(5)

    @pytest.mark.parametrize("low,high", [(None, None), (5, 5), (7, 3)])
    def test_invalid(self, low, high):
        with pytest.raises(ParameterError):
            RangeCondition(low, high)


class TestFeatureSpec:

    def test_json(self):
        for spec in (FeatureSpec(3, "Large Transactions", "value", RangeCondition(minimum=5_000_000)),
                     FeatureSpec(4, "gasUsed=21000", "gasUsed", KeywordMatch(21000))):
            assert FeatureSpec.from_json(spec.to_json()) == spec

    def test_mapping_key(self):
        assert FeatureSpec(0, "to=0xab", "to", KeywordMatch("0xab")).mapping_key == "0xab"
        assert keyword_key(21000) == "21000"

    def test_dimension_checks(self):
        with pytest.raises(SchemaError):
            check_dimension("nonce", KeywordMatch(1))
        with pytest.raises(SchemaError):
            check_dimension("from", RangeCondition(minimum=1))
