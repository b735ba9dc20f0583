import json

import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from src.errors import (
    DataError,
    DegenerateCostError,
    EmptyDatasetError,
    InvalidRecordError,
    LogParseError,
    ProviderNotFoundError,
    UnitMismatchError,
)
from src.ingest import (
    AttemptRecord,
    CostUnit,
    Dataset,
    PricingEntry,
    aggregate,
    flop_cost,
    load_attempt_log,
    load_pricing_table,
    merge_datasets,
    price_attempt,
    price_records,
    reprice_cached,
    split_by_tag,
)

MINI = PricingEntry(provider_id="gpt-5-mini", input_price=0.25, output_price=2.0, cache_discount=0.9)


def _record(problem="p1", success=False, cost=1.0, provider="a", **kw) -> AttemptRecord:
    return AttemptRecord(provider_id=provider, problem_id=problem, success=success, cost=cost, **kw)


class TestPricing:
    def test_uncached_million_tokens(self) -> None:
        assert price_attempt(1_000_000, 1_000_000, 0, MINI) == pytest.approx(2.25, abs=1e-12)

    def test_fully_cached_input(self) -> None:
        assert price_attempt(1_000_000, 1_000_000, 1_000_000, MINI) == pytest.approx(2.025, abs=1e-12)

    def test_zero_tokens(self) -> None:
        assert price_attempt(0, 0, 0, MINI) == 0.0

    def test_cached_above_input_rejected(self) -> None:
        with pytest.raises(InvalidRecordError):
            price_attempt(10, 0, 11, MINI)

    def test_no_discount_is_flat_input_pricing(self) -> None:
        flat = MINI.model_copy(update={"cache_discount": 0.0})
        assert price_attempt(5000, 300, 4000, flat) == pytest.approx(price_attempt(5000, 300, 0, flat))

    @given(
        st.integers(0, 10**7),
        st.integers(0, 10**7),
        st.integers(0, 10**7),
        st.integers(1, 10**6),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_every_count(self, inp: int, out: int, cached: int, extra: int) -> None:
        cached = min(cached, inp)
        base = price_attempt(inp, out, cached, MINI)
        assert price_attempt(inp + extra, out, cached, MINI) >= base
        assert price_attempt(inp, out + extra, cached, MINI) >= base

    def test_flop_cost(self) -> None:
        assert flop_cost(1.7e9, 1000) == 3.4e12
        assert flop_cost(72e9, 100) == 1.44e13
        assert flop_cost(1.7e9, 0) == 0.0

    def test_reprice_cached_lowers_cost(self) -> None:
        record = AttemptRecord(
            provider_id="gpt-5-mini", problem_id="p", success=True, input_tokens=100_000, output_tokens=1000
        )
        full = price_records([record], {"gpt-5-mini": MINI})[0].cost
        cached = reprice_cached(record, MINI, 80_000)
        assert cached.cached_input_tokens == 80_000
        assert cached.cost < full


class TestRecords:
    def test_record_needs_cost_or_tokens(self) -> None:
        with pytest.raises(ValidationError):
            AttemptRecord(provider_id="a", problem_id="p", success=True)

    def test_price_records_keeps_explicit_costs(self) -> None:
        explicit = _record(cost=0.7)
        tokens = AttemptRecord(provider_id="gpt-5-mini", problem_id="p", success=False, input_tokens=1_000_000, output_tokens=0)
        priced = price_records([explicit, tokens], {"gpt-5-mini": MINI})
        assert priced[0].cost == 0.7
        assert priced[1].cost == pytest.approx(0.25)
        assert {r.cost_unit for r in priced} == {CostUnit.USD}

    def test_price_records_unknown_provider(self) -> None:
        tokens = AttemptRecord(provider_id="other", problem_id="p", success=False, input_tokens=10, output_tokens=1)
        with pytest.raises(ProviderNotFoundError):
            price_records([tokens], {"gpt-5-mini": MINI})

    def test_flop_pricing_uses_output_tokens(self) -> None:
        entry = MINI.model_copy(update={"model_params": 1.7e9})
        tokens = AttemptRecord(provider_id="gpt-5-mini", problem_id="p", success=False, input_tokens=50, output_tokens=1000)
        priced = price_records([tokens], {"gpt-5-mini": entry}, CostUnit.FLOPS)
        assert priced[0].cost == 3.4e12
        assert priced[0].cost_unit is CostUnit.FLOPS


class TestAggregate:
    def test_counts_and_mean_cost(self) -> None:
        records = [
            _record(success=True, cost=1.0),
            _record(success=False, cost=1.0),
            _record(success=True, cost=2.0),
            _record(success=False, cost=2.0),
        ]
        stats = aggregate(records).lookup("a", "p1")
        assert (stats.n, stats.m) == (4, 2)
        assert stats.s_hat == pytest.approx(1.5)

    def test_single_failure(self) -> None:
        stats = aggregate([_record(cost=0.3)]).lookup("a", "p1")
        assert (stats.n, stats.m, stats.s_hat) == (1, 0, pytest.approx(0.3))

    def test_mixed_units_rejected(self) -> None:
        records = [_record(cost_unit=CostUnit.USD), _record(problem="p2", cost_unit=CostUnit.FLOPS)]
        with pytest.raises(UnitMismatchError):
            aggregate(records)

    def test_zero_cost_group_rejected(self) -> None:
        with pytest.raises(DegenerateCostError):
            aggregate([_record(cost=0.0), _record(cost=0.0)])

    def test_empty_rejected(self) -> None:
        with pytest.raises(EmptyDatasetError):
            aggregate([])

    def test_tags_are_unioned_per_problem(self) -> None:
        records = [_record(tags=["django"]), _record(provider="b", tags=["hard"])]
        dataset = aggregate(records)
        assert dataset.problem_tags("p1") == ("django", "hard")
        assert dataset.lookup("a", "p1").tags == ("django", "hard")

    @given(st.permutations(list(range(8))))
    @settings(max_examples=25, deadline=None)
    def test_order_invariant(self, order: list[int]) -> None:
        records = [
            _record(problem=f"p{i % 3}", provider="ab"[i % 2], success=i % 3 == 0, cost=0.1 * (i + 1))
            for i in range(8)
        ]
        shuffled = [records[i] for i in order]
        assert aggregate(shuffled) == aggregate(records)

    def test_unobserved_pair_is_imputed(self) -> None:
        dataset = aggregate([_record(cost=0.2), _record(cost=0.4, problem="p2"), _record(provider="b", problem="p3")])
        imputed = dataset.lookup("a", "p3")
        assert imputed.imputed and imputed.n == 0
        assert imputed.s_hat == pytest.approx(0.3)


class TestSplitAndMerge:
    def _dataset(self) -> Dataset:
        records = [_record(problem=f"d{i}", tags=["django"]) for i in range(10)]
        records += [_record(problem=f"o{i}", tags=["other"]) for i in range(8)]
        return aggregate(records)

    def test_partition(self) -> None:
        dataset = self._dataset()
        with_tag, without = split_by_tag(dataset, "django")
        assert (len(with_tag), len(without)) == (10, 8)
        assert set(with_tag.problems) | set(without.problems) == set(dataset.problems)
        assert not set(with_tag.problems) & set(without.problems)
        assert with_tag.providers == dataset.providers

    def test_absent_tag_leaves_one_side_empty(self, caplog) -> None:
        with_tag, without = split_by_tag(self._dataset(), "sympy")
        assert len(with_tag) == 0 and len(without) == 18
        assert "leaves one split empty" in caplog.text

    def test_merge_disjoint_shards(self) -> None:
        left = aggregate([_record(provider="a")])
        right = aggregate([_record(provider="b", tags=["x"])])
        merged = merge_datasets(left, right)
        assert merged.providers == ("a", "b")
        assert merged.lookup("a", "p1").tags == ("x",)

    def test_save_and_load(self, tmp_path) -> None:
        dataset = self._dataset()
        dataset.save(tmp_path / "dataset.json")
        assert Dataset.load(tmp_path / "dataset.json") == dataset


class TestFiles:
    def test_fixture_log_and_pricing(self, attempts_path, pricing_path) -> None:
        records = load_attempt_log(attempts_path)
        pricing = load_pricing_table(pricing_path)
        dataset = aggregate(price_records(records, pricing))
        assert dataset.providers == ("fast-mini", "slow-pro")
        assert len(dataset) == 6
        assert dataset.cost_unit is CostUnit.USD
        assert pricing["slow-pro"].model_params == 7e10

    def test_bad_line_reports_line_number(self, tmp_path) -> None:
        good = json.dumps({"provider_id": "a", "problem_id": "p", "success": True, "cost": 1.0})
        path = tmp_path / "log.jsonl"
        path.write_text(good + "\n\n" + '{"provider_id": "a", "success": true}\n', encoding="utf-8")
        with pytest.raises(LogParseError) as err:
            load_attempt_log(path)
        assert err.value.line_no == 3
        assert ":3:" in str(err.value)

    def test_undecodable_line_reports_line_number(self, tmp_path) -> None:
        good = json.dumps({"provider_id": "a", "problem_id": "p", "success": True, "cost": 1.0})
        path = tmp_path / "log.jsonl"
        path.write_bytes(good.encode() + b"\n\xff\xfe\n")
        with pytest.raises(LogParseError) as err:
            load_attempt_log(path)
        assert err.value.line_no == 2
        assert ":2:" in str(err.value)

    def test_empty_pricing_table(self, tmp_path) -> None:
        path = tmp_path / "pricing.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError, match="unreadable pricing table"):
            load_pricing_table(path)

    @pytest.mark.parametrize("payload", [b"\xff\xfe{}", b"not json"])
    def test_unreadable_dataset_file(self, tmp_path, payload) -> None:
        path = tmp_path / "dataset.json"
        path.write_bytes(payload)
        with pytest.raises(DataError):
            Dataset.load(path)
