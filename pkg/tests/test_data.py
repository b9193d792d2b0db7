import json
import math

import numpy as np
import pytest

from ctrlsynth.data import (DatasetEntry, DatasetError, GeneratorConfig, dataset_tasks, dumps,
                            entry_tasks, generate, load_dataset, save_dataset)
from ctrlsynth.design import SystemClass, classify_system
from ctrlsynth.lti import Polynomial, routh_stable

SEEDS = (0, 1, 2)
FAMILIES = [SystemClass.FIRST_ORDER_STABLE, SystemClass.SECOND_ORDER_STABLE,
            SystemClass.SECOND_ORDER_UNSTABLE, SystemClass.FIRST_ORDER_DELAY,
            SystemClass.FIRST_ORDER_UNSTABLE]
EPS = 1e-12


def within(x, lo, hi):
    return lo - EPS * max(1, abs(lo)) <= x <= hi + EPS * max(1, abs(hi))


def check_first_order_stable(e):
    K, B = e.num[0], e.den[1]
    tau = 3 / B
    w = e.windows
    return all([
        within(K, 0.1, 20), within(B, 0.1, 20), within(e.phase_margin_min, 45, 90),
        within(w["fast"][0], 0, 0.001 * tau), within(w["fast"][1], 0.3 * tau, 0.5 * tau),
        within(w["moderate"][0], 0.1 * tau, 0.5 * tau), within(w["moderate"][1], tau, 5 * tau),
        within(w["slow"][0], 5 * tau, 10 * tau), within(w["slow"][1], 20 * tau, 30 * tau),
    ])


def check_second_order_stable(e):
    a, (_, two_zw, wn2) = e.num[0], e.den
    wn = math.sqrt(wn2)
    zeta = two_zw / (2 * wn)
    tau = 4 / (zeta * wn)
    w = e.windows
    return all([
        within(zeta, 0.1, 0.99), within(wn, 0.1, 5), within(a, 0.1, 20),
        within(e.phase_margin_min, 45, 65),
        within(w["fast"][0], 0, 0.005 * tau), within(w["fast"][1], tau, 1.5 * tau),
        within(w["moderate"][0], 2 * tau, 2.5 * tau), within(w["moderate"][1], 3 * tau, 4 * tau),
        within(w["slow"][0], 4 * tau, 5 * tau), within(w["slow"][1], 6 * tau, 10 * tau),
    ])


def check_second_order_unstable(e):
    A, (_, c1, c0) = e.num[0], e.den
    if e.id % 2 == 0:
        omega = math.sqrt(c0)
        zeta = -c1 / (2 * omega)
        ok = within(zeta, 0.1, 0.99) and within(omega, 0.1, 5)
        sT = 4 / (omega * zeta)
    else:
        # (s + B)(s + C) with B > 0 > C: recover B and C from the real roots
        r = np.sort(np.roots([1, c1, c0]).real)
        B, C = -r[0], -r[1]
        ok = within(B, 0.1, 20) and within(C, -20, 0)
        sT = 3 / min(B, abs(C))
    lo, hi = e.windows[None]
    return ok and all([within(A, 0.1, 20), within(e.phase_margin_min, 45, 65),
                       within(lo, 0, 0.05 * sT), within(hi, sT, 1.5 * sT)])


def check_first_order_delay(e):
    K, B = e.num[0], e.den[1]
    tau = 3 / B
    lo, hi = e.windows[None]
    return all([within(K, 0.1, 20), within(B, 0.1, 20), within(e.delay, 0.1 * tau, 0.2 * tau),
                within(e.phase_margin_min, 45, 65), within(lo, 4 * tau, 5 * tau),
                within(hi, 40 * tau, 50 * tau)])


def check_first_order_unstable(e):
    K, B = e.num[0], -e.den[1]
    tau = 3 / B
    lo, hi = e.windows[None]
    return all([within(K, 0.1, 20), within(B, 0.1, 20), within(e.phase_margin_min, 45, 65),
                within(lo, 0, 0.05 * tau), within(hi, tau, 1.5 * tau)])


RANGE_ORACLE = {
    SystemClass.FIRST_ORDER_STABLE: check_first_order_stable,
    SystemClass.SECOND_ORDER_STABLE: check_second_order_stable,
    SystemClass.SECOND_ORDER_UNSTABLE: check_second_order_unstable,
    SystemClass.FIRST_ORDER_DELAY: check_first_order_delay,
    SystemClass.FIRST_ORDER_UNSTABLE: check_first_order_unstable,
}


@pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.value)
def test_every_field_in_range_and_family_label(family):
    for seed in SEEDS:
        entries = generate(family, 50, seed)
        assert [e.id for e in entries] == list(range(50))
        for e in entries:
            assert RANGE_ORACLE[family](e), (family, seed, e.id)
            assert classify_system(e.plant) is family
            assert e.steadystate_error_max == 0.0001
            for lo, hi in e.windows.values():
                assert lo < hi


@pytest.mark.parametrize("family", FAMILIES, ids=lambda f: f.value)
def test_regeneration_is_byte_identical(family, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_dataset(generate(family, 50, 7), a)
    save_dataset(generate(family, 50, 7), b)
    assert a.read_bytes() == b.read_bytes()
    assert dumps(generate(family, 50, 8)) != a.read_text()


def test_families_use_independent_streams():
    k1 = generate(SystemClass.FIRST_ORDER_STABLE, 5, 3)[0].num[0]
    k2 = generate(SystemClass.FIRST_ORDER_UNSTABLE, 5, 3)[0].num[0]
    assert k1 != k2


def test_second_order_unstable_rhp_root_counts():
    for e in generate(SystemClass.SECOND_ORDER_UNSTABLE, 60, 4):
        rhp = int(np.sum(np.roots(e.den).real > 0))
        assert rhp == (2 if e.id % 2 == 0 else 1)
        assert not routh_stable(Polynomial(e.den)).stable


def test_second_order_stable_slow_window_after_fast():
    for e in generate(SystemClass.SECOND_ORDER_STABLE, 1000, 11):
        assert e.windows["slow"][0] > e.windows["fast"][1]
        assert e.den[1] > 0


def test_delay_ratio_bounds():
    for e in generate(SystemClass.FIRST_ORDER_DELAY, 200, 5):
        ratio = e.delay / (3 / e.den[1])
        assert 0.1 <= ratio <= 0.2


def test_higher_order_is_load_only():
    with pytest.raises(ValueError, match="load-only"):
        generate(SystemClass.HIGHER_ORDER, 5, 0)
    with pytest.raises(ValueError):
        GeneratorConfig(SystemClass.FIRST_ORDER_STABLE, 0)


def test_round_trip_of_500_entries(tmp_path):
    entries = [e for f in FAMILIES for e in generate(f, 100, 9)]
    assert len(entries) == 500
    path = tmp_path / "all.json"
    save_dataset(entries, path)
    back = load_dataset(path)
    assert [b.to_dict() for b in back] == [e.to_dict() for e in entries]


def test_file_layout_and_key_order():
    text = dumps(generate(SystemClass.FIRST_ORDER_DELAY, 1, 0))
    assert text.startswith("[\n  {\n    \"id\": 0,")
    keys = list(json.loads(text)[0])
    assert keys == ["id", "num", "den", "delay", "phase_margin_min", "settling_time_min",
                    "settling_time_max", "steadystate_error_max", "metadata"]


def test_missing_field_is_named(tmp_path):
    d = generate(SystemClass.FIRST_ORDER_UNSTABLE, 3, 0)[2].to_dict()
    del d["settling_time_max"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps([d]))
    with pytest.raises(DatasetError, match=r"id=2.*settling_time_max"):
        load_dataset(path)


@pytest.mark.parametrize("patch,field", [
    ({"num": []}, "num"),
    ({"den": [1, "x"]}, "den"),
    ({"phase_margin_min": float("nan")}, "phase_margin_min"),
    ({"settling_time_max": -1.0}, "settling_time_max"),
    ({"metadata": 3}, "metadata"),
])
def test_invalid_fields_are_named(patch, field):
    d = generate(SystemClass.FIRST_ORDER_UNSTABLE, 1, 0)[0].to_dict()
    d.update(patch)
    with pytest.raises(DatasetError, match=field):
        DatasetEntry.from_dict(d)


# reference plants with hand-entered requirements: (num, den, delay, window, pm, printed model)
TABLE_ROWS = [
    ([2.19], [1, 10.99], 0.0, (0.04, 0.58), 81.74, "2.19/(s + 10.99)"),
    ([5.88], [1, 1.43, 0.91], 0.0, (12.70, 34.04), 61.57, "5.88/(s^2 + 1.43s + 0.91)"),
    ([8.79], [1, 4], 0.14, (0.63, 6.68), 44.06, "8.79*exp(-0.14s)/(s + 4)"),
    ([225], [1, 14.2, 46, 40], 0.0, (1.05, 8.4), 62.54, "225/(s^3 + 14.2s^2 + 46s + 40)"),
]


@pytest.mark.parametrize("row", TABLE_ROWS, ids=lambda r: r[-1])
def test_table_rows_round_trip(row, tmp_path):
    num, den, delay, window, pm, printed = row
    d = {"id": 0, "num": num, "den": den, "phase_margin_min": pm,
         "settling_time_min": window[0], "settling_time_max": window[1],
         "steadystate_error_max": 0.0001, "metadata": "hand-entered"}
    if delay:
        d["delay"] = delay
    path = tmp_path / "row.json"
    path.write_text(json.dumps([d]))
    (e,) = load_dataset(path)
    assert e.to_dict() == d
    assert str(e.plant) == printed
    (req,) = entry_tasks(e)
    assert req.settling_time_min == window[0] and req.phase_margin_min == pm


def test_delay_row_classifies_as_delay_family():
    e = DatasetEntry.from_dict({"id": 0, "num": [8.79], "den": [1, 4], "delay": 0.14,
                                "phase_margin_min": 44.06, "settling_time_min": 0.63,
                                "settling_time_max": 6.68, "steadystate_error_max": 0.0001})
    assert classify_system(e.plant) is SystemClass.FIRST_ORDER_DELAY
    assert e.plant.delay == pytest.approx(0.14)


def test_mode_expansion():
    entries = generate(SystemClass.FIRST_ORDER_STABLE, 4, 0)
    assert len(dataset_tasks(entries)) == 12
    fast = dataset_tasks(entries, "fast")
    assert len(fast) == 4 and all(r.mode.value == "fast" for _, r in fast)
    assert len(entry_tasks(generate(SystemClass.FIRST_ORDER_DELAY, 1, 0)[0], "fast")) == 1
