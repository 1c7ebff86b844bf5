import pytest

from bitforest.articulated import feature_set_id
from bitforest.dataset import LARGE_TRANSACTION, PlantedKeyword, generate_dataset, scan
from bitforest.errors import ParameterError
from bitforest.hsb import SpBehavior, build_network
from bitforest.verify import B1, B2, B3, OK
from conftest import PLANTED_ADDRESS


def _is_planted(record):
    return record.from_address == PLANTED_ADDRESS


@pytest.fixture
def network(small_settings):
    net = build_network(small_settings, seed=3)
    planted = [PlantedKeyword("from", PLANTED_ADDRESS, 0.05)]
    net.owner.outsource_all(generate_dataset(400, cardinalities={"value": 600}, seed=7,
                                             planted=planted))
    return net


def _expected(network, *predicates):
    records = network.owner.records
    return [records[i] for i in scan(records, predicates)]


def _ids(network):
    return network.sp.engine.resolve([f"from={PLANTED_ADDRESS}"])


class TestRoundTrip:

    def test_honest(self, network):
        outcome = network.user.round_trip(_ids(network))
        assert outcome.verdict.kind == OK
        assert outcome.results == _expected(network, _is_planted)
        assert outcome.vo_round_trips == 1
        assert outcome.k == 32

    def test_fabricated(self, network):
        outcome = network.user.round_trip(_ids(network), SpBehavior.inject_fabricated(2))
        assert outcome.verdict.kind == B1
        assert len(outcome.verdict.fabricated) == 2
        assert outcome.results == _expected(network, _is_planted)

    def test_withheld_then_recovered(self, network):
        outcome = network.user.round_trip(_ids(network), SpBehavior.omit(2))
        assert outcome.verdict.kind == B2
        assert len(outcome.verdict.unmatched_checksums) == 2
        assert len(outcome.recovered) == 2
        assert outcome.remaining_checksums == []
        assert outcome.results == _expected(network, _is_planted)
        assert outcome.vo_round_trips == 1

    def test_withheld_without_refetch(self, network):
        outcome = network.user.round_trip(_ids(network), SpBehavior.omit(2), refetch=False)
        assert outcome.verdict.kind == B2
        assert len(outcome.remaining_checksums) == 2
        assert len(outcome.results) == len(_expected(network, _is_planted)) - 2

    def test_fully_malicious(self, network):
        outcome = network.user.round_trip(_ids(network), SpBehavior.fully_malicious(), gamma=0.5)
        assert outcome.verdict.kind == B3
        assert outcome.results == []

    def test_resume_from_latest_token(self, network):
        ids = _ids(network)
        first = network.user.round_trip(ids)
        more = generate_dataset(100, seed=8, planted=[PlantedKeyword("from", PLANTED_ADDRESS, 0.2)])
        network.owner.outsource_all(more)
        second = network.user.round_trip(ids, resume=True)
        assert second.verdict.kind == OK
        assert second.results == [r for r in more if _is_planted(r)]
        history = network.user.tvt.history(feature_set_id(ids))
        assert [t.cursor for t in history] == [400, 500]
        assert first.token.cursor == 400

    def test_range_feature_on_both_sides(self, network):
        spec = network.owner.add_feature("Large Transactions", "value", minimum=LARGE_TRANSACTION)
        outcome = network.user.round_trip([spec.feature_id])
        assert outcome.verdict.kind == OK
        assert outcome.results == _expected(network, lambda r: r.value >= LARGE_TRANSACTION)


class TestBehavior:

    def test_from_name(self):
        assert SpBehavior.from_name("b2", 3) == SpBehavior.omit(3)
        assert SpBehavior.from_name("HONEST") == SpBehavior.honest()

    def test_unknown(self):
        with pytest.raises(ParameterError):
            SpBehavior.from_name("b4")

    def test_count(self):
        with pytest.raises(ParameterError):
            SpBehavior.omit(0)
