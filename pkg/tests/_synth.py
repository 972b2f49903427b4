"""Planted synthetic datasets shared by the test modules."""

import json

import numpy as np

from protollm.dataset import CATEGORICAL, NUMERICAL, DatasetSchema, FeatureSpec, RawSample, write_csv
from protollm.synthetic import CategoricalPlant, NumericPlant, PlantedModel

ADULT_FEATURES = [
    ("age", "the age of an individual(age>16)", None),
    ("workclass", "Employment type", ["Private", "Self-emp", "Government", "Other"]),
    ("fnlwgt", "Final sampling weight", None),
    ("education", "Highest education level", ["HS-grad", "Some-college", "Bachelors", "Masters", "Doctorate"]),
    ("education-num", "Years of education", None),
    ("marital-status", "Marital status", ["Married", "Never-married", "Divorced", "Widowed"]),
    ("occupation", "Occupation", ["Tech", "Sales", "Service", "Manual", "Professional"]),
    ("relationship", "What this individual is relative to others",
     ["Own-child", "Husband", "Not-in-family", "Unmarried", "Wife", "Other-relative"]),
    ("race", "Race", ["White", "Black", "Asian", "Other"]),
    ("sex", "Sex", ["Male", "Female"]),
    ("capital-gain", "Capital gains", None),
    ("capital-loss", "Capital losses", None),
    ("hours-per-week", "Working hours per week", None),
    ("native-country", "Country of origin", ["United-States", "Mexico", "Other"]),
]


def adult_schema_dict():
    feats = []
    for name, desc, cats in ADULT_FEATURES:
        item = {"name": name, "description": desc, "type": CATEGORICAL if cats else NUMERICAL}
        if cats:
            item["categories"] = cats
        feats.append(item)
    return {
        "name": "adult",
        "task_description": "Does this person earn more than 50000 dollars per year? Yes or no?",
        "class_labels": ["no", "yes"],
        "target_column": "income",
        "features": feats,
    }


def planted_problem(n_rows=400, n_num=4, n_cat=2, n_classes=2, sep=2.5, noise=1.0, seed=0,
                    malformation_rate=0.0, llm_noise=None):
    """Class-conditional Gaussian/categorical data and a plant holding its true parameters.

    Numerical class means are ``sep * noise`` apart; class ``c`` favours
    category ``c mod |categories|`` with probability 0.7.
    """
    rng = np.random.default_rng(seed)
    labels = [f"class_{c}" for c in range(n_classes)]
    features, plants = [], {}
    for j in range(n_num):
        offset = float(rng.normal(0, 5))
        means = {lab: offset + c * sep * noise for c, lab in enumerate(labels)}
        features.append(FeatureSpec(f"num{j}", f"numerical feature {j}", NUMERICAL))
        plants[f"num{j}"] = NumericPlant(means, llm_noise)
    for j in range(n_cat):
        cats = tuple(f"v{i}" for i in range(3))
        probs = {}
        for c, lab in enumerate(labels):
            p = [0.15] * 3
            p[c % 3] = 0.7
            probs[lab] = tuple(p)
        features.append(FeatureSpec(f"cat{j}", f"categorical feature {j}", CATEGORICAL, cats))
        plants[f"cat{j}"] = CategoricalPlant(cats, probs)
    schema = DatasetSchema("Which class does this row belong to?", tuple(labels), tuple(features), "target",
                           name="planted")
    samples = []
    for i in range(n_rows):
        c = i % n_classes
        vals = []
        for f in features:
            p = plants[f.name]
            if isinstance(p, NumericPlant):
                vals.append(float(p.means[labels[c]] + noise * rng.normal()))
            else:
                vals.append(p.categories[int(rng.choice(3, p=p.probs[labels[c]]))])
        samples.append(RawSample(tuple(vals), c))
    order = rng.permutation(n_rows)
    samples = [samples[i] for i in order]
    plant = PlantedModel(plants, noise=noise, seed=seed, malformation_rate=malformation_rate)
    return schema, samples, plant


def write_problem(tmp_path, schema, samples, plant=None):
    schema_path = tmp_path / "schema.json"
    schema_path.write_text(json.dumps(schema.to_dict()))
    data_path = tmp_path / "data.csv"
    write_csv(data_path, samples, schema)
    plant_path = None
    if plant is not None:
        plant_path = tmp_path / "plant.json"
        plant_path.write_text(json.dumps(plant.to_dict()))
    return schema_path, data_path, plant_path
