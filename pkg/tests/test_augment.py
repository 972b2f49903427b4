import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from protollm.augment import (
    AugmentedSample,
    build_regression_augmented,
    export_augmented,
    fit_gaussian,
    inverse_normal_cdf,
    layout_json,
    normal_cdf,
    quantile_anchors,
    read_augmented_csv,
    write_augmented_csv,
)
from protollm.dataset import CATEGORICAL, NUMERICAL, DatasetSchema, FeatureSpec
from protollm.errors import BadQuantiles, ClassAnchorMismatch, EmptyTargets, OutOfDomain
from protollm.parsing import GeneratedValue
from protollm.prompts import ORDINAL_LABELS
from protollm.prototype import GeneratedValueStore

MIXED = DatasetSchema("t", ("no", "yes"),
                      (FeatureSpec("x", "", NUMERICAL), FeatureSpec("c", "", CATEGORICAL, ("p", "q", "r"))), "y")
ORDINAL = DatasetSchema("t", ORDINAL_LABELS,
                        (FeatureSpec("x", "", NUMERICAL), FeatureSpec("c", "", CATEGORICAL, ("p", "q"))), "rings")


def bisect_probit(p, iters=200):
    """Independent quantile oracle: bisection on mpmath's normal CDF."""
    with mpmath.workdps(40):
        lo, hi = mpmath.mpf(-40), mpmath.mpf(40)
        for _ in range(iters):
            mid = (lo + hi) / 2
            if mpmath.ncdf(mid) < p:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def test_probit_known_value():
    assert bisect_probit(0.9) == pytest.approx(1.2815515655446004, abs=1e-12)
    assert abs(inverse_normal_cdf(0.9) - 1.281552) <= 1e-5
    assert inverse_normal_cdf(0.9) == pytest.approx(bisect_probit(0.9), abs=1e-12)
    assert inverse_normal_cdf(0.5) == 0.0


@pytest.mark.parametrize("p", [1e-12, 1e-6, 0.01, 0.02425, 0.2, 0.7, 0.97575, 0.999, 1 - 1e-9])
def test_probit_against_bisection(p):
    assert inverse_normal_cdf(p) == pytest.approx(bisect_probit(p), rel=1e-9, abs=1e-9)


def test_probit_grid_roundtrip():
    grid = np.linspace(0.001, 0.999, 1002)[1:-1]
    with mpmath.workdps(30):
        worst = max(abs(float(mpmath.ncdf(inverse_normal_cdf(p))) - p) for p in grid)
    assert worst <= 1e-6
    assert max(abs(normal_cdf(inverse_normal_cdf(p)) - p) for p in grid) <= 1e-6


@given(st.floats(1e-10, 0.5, exclude_max=True))
def test_probit_symmetry(p):
    assert inverse_normal_cdf(p) == pytest.approx(-inverse_normal_cdf(1 - p), abs=1e-7)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_probit_domain(p):
    with pytest.raises(OutOfDomain):
        inverse_normal_cdf(p)


def test_anchor_example():
    a = quantile_anchors(10.0, 2.0, (0.9,))
    assert abs(a.anchors[0] - 12.563103) <= 2e-5
    five = quantile_anchors(10.0, 2.0)
    assert five.anchors[2] == 10.0
    assert list(five.anchors) == sorted(five.anchors)


@given(st.floats(-1e3, 1e3), st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_anchor_shift(mu, sigma, shift):
    a = quantile_anchors(mu, sigma).anchors
    b = quantile_anchors(mu + shift, sigma).anchors
    assert np.allclose(np.array(b) - np.array(a), shift, atol=1e-9 * (1 + abs(mu) + abs(shift)))
    assert all(x < y for x, y in zip(a, a[1:]))


@pytest.mark.parametrize("q", [(), (0.0, 0.5), (0.5, 0.3), (0.2, 0.2), (0.5, 1.0)])
def test_bad_quantiles(q):
    with pytest.raises(BadQuantiles):
        quantile_anchors(0.0, 1.0, q)


def test_fit_gaussian_examples():
    assert fit_gaussian([1, 2, 3, 4]) == (2.5, math.sqrt(1.25))
    assert fit_gaussian([7, 7, 7]) == (7.0, 1.0)
    assert fit_gaussian([3]) == (3.0, 1.0)
    with pytest.raises(EmptyTargets):
        fit_gaussian([])


def _fill(schema, K, skip=()):
    store = GeneratedValueStore(schema, K)
    for c in range(schema.n_classes):
        for k in range(1, K + 1):
            if (c, k, 0) not in skip:
                store.add(GeneratedValue(0, c, k, float(100 * c + k)))
            onehot = np.zeros(schema.features[1].width)
            onehot[(c + k) % len(onehot)] = 1.0
            store.add(GeneratedValue(1, c, k, onehot))
    return store


def test_export_counts_and_values():
    rows = export_augmented(_fill(MIXED, 10), MIXED)
    assert len(rows) == 20
    r = rows[12]
    assert (r.cls, r.k) == (1, 3)
    assert r.vector.tolist() == [103.0, 0.0, 1.0, 0.0]


def test_export_skips_incomplete_rows(caplog):
    rows = export_augmented(_fill(MIXED, 10, skip={(0, 4, 0)}), MIXED)
    assert len(rows) == 19 and (0, 4) not in {(r.cls, r.k) for r in rows}
    assert "skipping" in caplog.text


def test_regression_rows():
    anchors = quantile_anchors(10.0, 2.0)
    rows = build_regression_augmented(_fill(ORDINAL, 1), anchors, ORDINAL)
    assert len(rows) == 5
    assert rows[2].target == 10.0
    assert [r.target for r in rows] == list(anchors.anchors)
    assert len(build_regression_augmented(_fill(ORDINAL, 3), anchors, ORDINAL)) == 15


def test_regression_mismatch():
    with pytest.raises(ClassAnchorMismatch):
        build_regression_augmented(_fill(ORDINAL, 1), quantile_anchors(0, 1, (0.25, 0.5, 0.75)), ORDINAL)
    with pytest.raises(ClassAnchorMismatch):
        build_regression_augmented(_fill(MIXED, 1), quantile_anchors(0, 1, (0.25, 0.75)), MIXED)


def test_csv_roundtrip_bit_exact(tmp_path):
    rows = [AugmentedSample(c, k, np.array([0.1 * k + 1 / 3, 0.2, 0.7, 0.1]), None)
            for c in range(2) for k in range(1, 4)]
    path = tmp_path / "aug.csv"
    write_augmented_csv(path, rows, MIXED)
    assert path.read_text().splitlines()[0] == "class,k,slot_0,slot_1,slot_2,slot_3"
    back = read_augmented_csv(path, MIXED)
    for a, b in zip(rows, back):
        assert (a.cls, a.k, a.target) == (b.cls, b.k, b.target)
        assert a.vector.tobytes() == b.vector.tobytes()


def test_csv_with_targets(tmp_path):
    rows = build_regression_augmented(_fill(ORDINAL, 2), quantile_anchors(10.0, 2.0), ORDINAL)
    path = tmp_path / "aug.csv"
    write_augmented_csv(path, rows, ORDINAL)
    back = read_augmented_csv(path, ORDINAL)
    assert [r.target for r in back] == [r.target for r in rows]


def test_csv_hard_categories(tmp_path):
    rows = [AugmentedSample(1, 1, np.array([2.5, 0.2, 0.5, 0.3]))]
    path = tmp_path / "aug.csv"
    write_augmented_csv(path, rows, MIXED, hard_categories=True)
    assert path.read_text().splitlines() == ["class,k,x,c", "yes,1,2.5,q"]


def test_layout_json():
    lay = layout_json(MIXED)
    assert lay["features"] == [{"name": "x", "offset": 0, "length": 1}, {"name": "c", "offset": 1, "length": 3}]
    assert [s["category"] for s in lay["slots"]] == [None, "p", "q", "r"]
