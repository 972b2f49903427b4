import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _synth import adult_schema_dict
from protollm.dataset import (
    CATEGORICAL,
    NUMERICAL,
    DatasetSchema,
    FeatureSpec,
    RawSample,
    drop_sparse_features,
    encode,
    few_shot_split,
    fit_scaler,
    impute,
    load_csv,
    load_schema,
)
from protollm.errors import (
    AllFeaturesDropped,
    EmptyPool,
    InsufficientClassSamples,
    MalformedSchema,
    MissingCell,
    NonNumeric,
    UnknownCategory,
    UnknownLabel,
)

RELATIONSHIP = ["Own-child", "Husband", "Not-in-family", "Unmarried", "Wife", "Other-relative"]


@pytest.fixture
def small_schema():
    return DatasetSchema(
        "task",
        ("no", "yes"),
        (FeatureSpec("color", "a colour", CATEGORICAL, ("a", "b")), FeatureSpec("size", "a size", NUMERICAL)),
        "label",
    )


def _write(tmp_path, obj, name="schema.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_load_adult_schema(tmp_path):
    schema = load_schema(_write(tmp_path, adult_schema_dict()))
    assert schema.n_classes == 2
    assert schema.class_labels == ("no", "yes")
    rel = schema.features[schema.feature_index("relationship")]
    assert rel.description == "What this individual is relative to others"
    assert rel.value_count_m == 5


def test_load_minimal_schema(tmp_path):
    obj = {"task_description": "t", "class_labels": ["a", "b"], "target_column": "y",
           "features": [{"name": "x", "description": "d", "type": "numerical"}]}
    schema = load_schema(_write(tmp_path, obj))
    assert schema.n_features == 1 and schema.width == 1


@pytest.mark.parametrize("mutate, fragment", [
    (lambda o: o.update(target_column="age"), "target_column"),
    (lambda o: o["features"][1].update(categories=["Private", "Private"]), "workclass"),
    (lambda o: o["features"][0].update(type="ordinal"), "age"),
    (lambda o: o["features"][1].pop("categories"), "workclass"),
    (lambda o: o.pop("class_labels"), "class_labels"),
    (lambda o: o.update(class_labels=["only"]), "class_labels"),
])
def test_malformed_schema(tmp_path, mutate, fragment):
    obj = adult_schema_dict()
    mutate(obj)
    with pytest.raises(MalformedSchema, match=fragment):
        load_schema(_write(tmp_path, obj))


def test_load_csv(tmp_path, small_schema):
    p = tmp_path / "d.csv"
    p.write_text("color,size,label\na,1,no\nb,2.5,yes\na,,yes\n")
    rows = load_csv(p, small_schema)
    assert [r.values for r in rows] == [("a", 1.0), ("b", 2.5), ("a", None)]
    assert [r.label for r in rows] == [0, 1, 1]


@pytest.mark.parametrize("body, exc", [
    ("c,1,no\n", UnknownCategory),
    ("a,1,maybe\n", UnknownLabel),
    ("a,big,no\n", NonNumeric),
])
def test_load_csv_errors(tmp_path, small_schema, body, exc):
    p = tmp_path / "d.csv"
    p.write_text("color,size,label\n" + body)
    with pytest.raises(exc):
        load_csv(p, small_schema)


def test_unknown_category_names_feature(tmp_path):
    schema = DatasetSchema("t", ("no", "yes"), (FeatureSpec("rel", "r", CATEGORICAL, ("Husband", "Wife")),), "y")
    p = tmp_path / "d.csv"
    p.write_text("rel,y\nSpouse,no\n")
    with pytest.raises(UnknownCategory) as info:
        load_csv(p, schema)
    assert info.value.feature == "rel" and info.value.token == "Spouse" and info.value.row == 1


def test_drop_sparse_features(small_schema):
    # size missing in 3 of 10 rows = 30%
    rows = [RawSample(("a", None if i < 3 else float(i)), i % 2) for i in range(10)]
    out, schema = drop_sparse_features(rows, small_schema, 0.20)
    assert [f.name for f in schema.features] == ["color"]
    assert all(r.values == ("a",) for r in out)
    assert schema.layout == ((0, 2),)
    same, schema2 = drop_sparse_features(rows, small_schema, 1.0)
    assert schema2 == small_schema and same == rows


def test_drop_sparse_identity_without_missing(small_schema):
    rows = [RawSample(("b", 1.0), 0), RawSample(("a", 2.0), 1)]
    out, schema = drop_sparse_features(rows, small_schema)
    assert out == rows and schema == small_schema


def test_drop_sparse_all_dropped(small_schema):
    rows = [RawSample((None, None), 0)] * 4
    with pytest.raises(AllFeaturesDropped):
        drop_sparse_features(rows, small_schema)


def test_encode_examples(small_schema):
    rel = DatasetSchema("t", ("no", "yes"), (FeatureSpec("relationship", "r", CATEGORICAL, tuple(RELATIONSHIP)),
                                             FeatureSpec("age", "a", NUMERICAL)), "y")
    enc = encode(RawSample(("Husband", 39.0)), rel)
    assert enc.vector.tolist() == [0, 1, 0, 0, 0, 0, 39.0]
    assert enc.layout == ((0, 6), (6, 1))
    assert encode(RawSample(("a", 5.0)), small_schema).vector.tolist() == [1.0, 0.0, 5.0]
    with pytest.raises(MissingCell):
        encode(RawSample(("a", None)), small_schema)


def _schema_strategy():
    feat = st.one_of(
        st.builds(lambda n: ("num", n), st.just(0)),
        st.builds(lambda n: ("cat", n), st.integers(1, 5)),
    )
    return st.lists(feat, min_size=1, max_size=5)


@st.composite
def schema_and_rows(draw):
    kinds = draw(_schema_strategy())
    feats = []
    for i, (kind, n) in enumerate(kinds):
        if kind == "cat":
            feats.append(FeatureSpec(f"f{i}", "", CATEGORICAL, tuple(f"c{j}" for j in range(n))))
        else:
            feats.append(FeatureSpec(f"f{i}", "", NUMERICAL))
    schema = DatasetSchema("t", ("a", "b"), tuple(feats), "y")

    def cell(f):
        if f.is_categorical:
            return st.sampled_from(f.categories)
        return st.floats(-1e6, 1e6, allow_nan=False)

    row = st.tuples(*[cell(f) for f in feats]).map(lambda v: RawSample(v))
    return schema, draw(row), draw(row)


@given(schema_and_rows())
@settings(max_examples=200)
def test_encode_blocks_and_injective(data):
    schema, r1, r2 = data
    e1, e2 = encode(r1, schema), encode(r2, schema)
    assert len(e1.vector) == sum(length for _, length in schema.layout)
    for f, (off, width) in zip(schema.features, schema.layout):
        if f.is_categorical:
            block = e1.vector[off:off + width]
            assert block.sum() == 1.0 and np.count_nonzero(block) == 1
    if r1.values != r2.values:
        assert not np.array_equal(e1.vector, e2.vector)


def test_fit_scaler_examples():
    schema = DatasetSchema("t", ("a", "b"), (FeatureSpec("x", "", NUMERICAL),), "y")
    pool = lambda vals: [encode(RawSample((v,)), schema) for v in vals]
    s = fit_scaler(pool([2.0, 4.0]), schema)
    assert (s.means[0], s.stds[0]) == (3.0, 1.0)
    s = fit_scaler(pool([5.0, 5.0, 5.0]), schema)
    assert (s.means[0], s.stds[0]) == (5.0, 1.0)
    s = fit_scaler(pool([7.0]), schema)
    assert (s.means[0], s.stds[0]) == (7.0, 1.0)
    with pytest.raises(EmptyPool):
        fit_scaler([], schema)


@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=40))
def test_scaler_standardizes_and_inverts(values):
    schema = DatasetSchema("t", ("a", "b"), (FeatureSpec("x", "", NUMERICAL), FeatureSpec("c", "", CATEGORICAL, ("p", "q"))), "y")
    pool = [encode(RawSample((v, "p")), schema) for v in values]
    scaler = fit_scaler(pool, schema)
    scaled = np.array([scaler.apply(e.vector, schema.layout) for e in pool])
    assert abs(scaled[:, 0].mean()) < 1e-9
    spread = max(values) - min(values)
    if np.std(values) >= 1e-6 and spread > 1e-6:
        assert abs(scaled[:, 0].std() - 1.0) < 1e-9
    assert np.array_equal(scaled[:, 1:], np.array([e.vector[1:] for e in pool]))
    for e, z in zip(pool, scaled):
        back = scaler.invert(z, schema.layout)
        assert back[0] == pytest.approx(e.vector[0], rel=1e-9, abs=1e-9)


def _labeled(n, n_classes=2):
    schema = DatasetSchema("t", tuple(f"c{i}" for i in range(n_classes)), (FeatureSpec("x", "", NUMERICAL),), "y")
    return schema, [RawSample((float(i),), i % n_classes) for i in range(n)]


def test_few_shot_split_protocol():
    schema, rows = _labeled(100)
    train, test = few_shot_split(rows, schema, 8, seed=3)
    assert len(test) == 20
    assert sorted(r.label for r in train) == [0] * 4 + [1] * 4
    assert not {r.values for r in train} & {r.values for r in test}


def test_few_shot_split_zero_shot_and_remainder():
    schema, rows = _labeled(100, 3)
    train, test = few_shot_split(rows, schema, 0, seed=1)
    assert train == [] and len(test) == 20
    train, _ = few_shot_split(rows, schema, 8, seed=1)
    assert [sum(r.label == c for r in train) for c in range(3)] == [3, 3, 2]


def test_few_shot_split_deterministic():
    schema, rows = _labeled(57)
    assert few_shot_split(rows, schema, 6, 11) == few_shot_split(rows, schema, 6, 11)
    assert few_shot_split(rows, schema, 6, 11) != few_shot_split(rows, schema, 6, 12)


def test_few_shot_split_insufficient():
    schema, rows = _labeled(10)
    with pytest.raises(InsufficientClassSamples):
        few_shot_split(rows, schema, 20, 0)


def test_impute_mean_and_mode(small_schema):
    pool = [RawSample(("a", 1.0), 0), RawSample(("b", 3.0), 1), RawSample(("b", None), 1)]
    out = impute([RawSample((None, None), 0)] + pool, small_schema, pool)
    assert out[0].values == ("b", 2.0)
    assert out[3].values == ("b", 2.0)
