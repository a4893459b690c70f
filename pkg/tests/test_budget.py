import json

import pytest
from hypothesis import given, settings, strategies as st

from privtrend.budget import BudgetLedger
from privtrend.errors import EpochDeleted, OneTimeOnly, Refusal


def test_basic_charge():
    led = BudgetLedger(3.0)
    res = led.charge(10, 0.6, "q1")
    assert res.remaining == pytest.approx(2.4)
    assert not res.delete_fine_store
    assert led.total_spent(10) == pytest.approx(0.6)


def test_refusal_over_budget():
    led = BudgetLedger(1.0)
    with pytest.raises(Refusal):
        led.charge(0, 1.5, "q")
    assert led.remaining_for(0) == 1.0  # refusal costs nothing


def test_exact_exhaustion_triggers_deletion():
    led = BudgetLedger(1.0)
    res = led.charge(5, 1.0, "q")
    assert res.remaining == 0.0
    assert res.delete_fine_store
    assert led.is_deleted(5)
    with pytest.raises(EpochDeleted):
        led.charge(5, 0.1, "q2")


def test_float_drift_exhaustion():
    # 0.1 * 10 has no exact float representation; tolerance must absorb it
    led = BudgetLedger(1.0)
    for i in range(10):
        led.charge(0, 0.1, f"q{i}")
    assert led.is_deleted(0)
    assert led.remaining_for(0) == 0.0


def test_epochs_independent():
    led = BudgetLedger(1.0)
    led.charge(1, 1.0, "q")
    assert led.is_deleted(1)
    assert not led.is_deleted(2)
    led.charge(2, 0.5, "q")
    assert led.remaining_for(2) == pytest.approx(0.5)


def test_coarse_one_time():
    led = BudgetLedger(1.0)
    led.charge_coarse(2.0, 1e-5)
    assert led.coarse_charge == (2.0, 1e-5)
    with pytest.raises(OneTimeOnly):
        led.charge_coarse(2.0, 1e-5)


def test_invalid_charge():
    with pytest.raises(ValueError):
        BudgetLedger(1.0).charge(0, 0.0, "q")


def test_can_charge():
    led = BudgetLedger(1.0)
    assert led.can_charge(0, 1.0)
    assert not led.can_charge(0, 1.1)
    led.charge(0, 1.0, "q")
    assert not led.can_charge(0, 0.1)


def test_persistence_replay_byte_exact(tmp_path):
    path = tmp_path / "ledger.jsonl"
    led = BudgetLedger(2.0, path)
    led.charge(1, 0.6, "a")
    led.charge(2, 1.0, "b", kind="ft")
    led.charge_coarse(2.0, 1e-5)
    led.charge(1, 1.4, "c")  # exhausts epoch 1
    snap = led.snapshot()
    led.close()
    raw = path.read_bytes()

    led2 = BudgetLedger(2.0, path)
    assert led2.snapshot() == snap
    assert led2.is_deleted(1)
    assert led2.coarse_charge == (2.0, 1e-5)
    assert led2.spent_log == led.spent_log
    led2.close()
    assert path.read_bytes() == raw  # replay appends nothing


def test_log_lines_are_json(tmp_path):
    path = tmp_path / "ledger.jsonl"
    led = BudgetLedger(2.0, path)
    led.charge(7, 0.5, "deadbeef")
    led.close()
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert recs[0]["epoch"] == 7
    assert recs[0]["query"] == "deadbeef"
    assert recs[0]["seq"] == 1


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=3),
            st.floats(min_value=0.01, max_value=1.5),
        ),
        max_size=20,
    )
)
def test_charging_exactness_property(script):
    """sum of accepted charges == eps_f_max - remaining, every epoch."""
    led = BudgetLedger(3.0)
    accepted: dict[int, float] = {}
    for epoch, eps in script:
        try:
            led.charge(epoch, eps, "q")
        except (Refusal, EpochDeleted):
            continue
        accepted[epoch] = accepted.get(epoch, 0.0) + eps
    for epoch, total in accepted.items():
        assert led.eps_f_max - led.remaining_for(epoch) == pytest.approx(
            total, abs=1e-9
        )
        assert led.total_spent(epoch) == pytest.approx(total)
