import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmadopt.data import Axis, UserClass
from mmadopt.engine import FeatureMatrix
from mmadopt.experiment import (
    ExperimentSpec,
    InsufficientDataError,
    Task,
    balanced_sample,
    run_experiment,
    run_suite,
    task_label,
)
from mmadopt.gbm import GBMParams
from mmadopt.grammar import enumerate_descriptors

NAMES = [d.name for d in enumerate_descriptors()]
FAST = GBMParams(n_trees=5, max_depth=2)


def _matrix(classes, gender=None, n_cols=40, seed=0, wealth=True):
    n = len(classes)
    rng = np.random.default_rng(seed)
    # spread columns over the whole descriptor list so every category is present
    cols = np.linspace(0, len(NAMES) - 1, n_cols).astype(int)
    values = rng.normal(size=(n, n_cols))
    signal = np.array([c is not UserClass.VOICE_ONLY for c in classes], float)
    values[:, 0] += 2 * signal
    strata = {
        Axis.GENDER: gender or ["Male"] * n,
        Axis.DISTRICT_KIND: ["Urban" if (i // 8) % 2 else "Rural" for i in range(n)],
        Axis.DISTRICT_WEALTH: [("Rich" if (i // 16) % 2 else "Poor") if wealth else None for i in range(n)],
    }
    return FeatureMatrix([f"S{i:04d}" for i in range(n)], [NAMES[c] for c in cols], values, list(classes), strata)


def _classes(n_pos, n_neg, pos=UserClass.REGISTERED):
    return [pos] * n_pos + [UserClass.VOICE_ONLY] * n_neg


def test_task_labels():
    assert task_label(UserClass.VOICE_ONLY, Task.P2P_VS_VOICE) == 0
    assert task_label(UserClass.REGISTERED, Task.ADOPTION_VS_VOICE) == 1
    assert task_label(UserClass.P2P, Task.ADOPTION_VS_VOICE) == 1
    assert task_label(UserClass.REGISTERED, Task.P2P_VS_VOICE) is None
    assert task_label(UserClass.P2P, Task.P2P_VS_VOICE) == 1


def test_sample_10_pos_50_neg():
    m = _matrix(_classes(10, 50))
    idx = balanced_sample(m, ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male", min_n=5))
    labels = [task_label(m.classes[i], Task.ADOPTION_VS_VOICE) for i in idx]
    assert len(idx) == 20 and sum(labels) == 10
    assert set(range(10)) <= set(idx.tolist())


def test_sample_balanced_keeps_all():
    m = _matrix(_classes(30, 30))
    idx = balanced_sample(m, ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male"))
    assert idx.tolist() == list(range(60))


def test_sample_seed_determinism():
    m = _matrix(_classes(25, 90))
    spec = ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male", seed=5)
    a = balanced_sample(m, spec)
    b = balanced_sample(m, spec)
    assert np.array_equal(a, b)
    # frozen draw: numpy's PCG64 streams are platform-independent
    assert a.tolist()[25:] == [30, 33, 35, 40, 41, 44, 45, 46, 47, 50, 57, 58, 59, 61, 68, 69, 82, 84, 87, 90,
                               92, 93, 96, 99, 105]


def test_sample_excludes_registered_for_p2p_and_other_strata():
    classes = [UserClass.P2P] * 25 + [UserClass.REGISTERED] * 30 + [UserClass.VOICE_ONLY] * 40
    gender = ["Male"] * 80 + ["Female"] * 15
    m = _matrix(classes, gender)
    idx = balanced_sample(m, ExperimentSpec(Task.P2P_VS_VOICE, Axis.GENDER, "Male"))
    assert len(idx) == 50
    assert all(m.classes[i] is not UserClass.REGISTERED for i in idx)
    assert all(gender[i] == "Male" for i in idx)


def test_too_few_positives_names_min_n():
    m = _matrix(_classes(5, 50))
    with pytest.raises(InsufficientDataError, match="min_n"):
        run_experiment(ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male"), m)


@settings(max_examples=40, deadline=None)
@given(st.integers(20, 80), st.integers(20, 80), st.integers(0, 2**32 - 1))
def test_balanced_sample_exact(n_pos, n_neg, seed):
    m = _matrix(_classes(n_pos, n_neg), n_cols=2)
    idx = balanced_sample(m, ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male", seed=seed))
    labels = np.array([task_label(m.classes[i], Task.ADOPTION_VS_VOICE) for i in idx])
    assert labels.sum() * 2 == len(labels) == 2 * min(n_pos, n_neg)
    assert len(set(idx.tolist())) == len(idx)


def test_report_shape_and_category_means(tmp_path):
    m = _matrix(_classes(40, 60))
    rep = run_experiment(ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male", params=FAST, repeats=3), m)
    assert len(rep.rows()) == len(m.descriptor_names) + len(rep.categories) + 5 + 2
    cats = m.categories
    for c in rep.categories:
        member = [f.mean for f, cat in zip(rep.features, cats) if cat == c.category]
        assert c.mean == pytest.approx(np.mean(member), abs=1e-15)
        assert c.q25 <= c.median <= c.q75
    p = tmp_path / rep.filename
    rep.write_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["kind", "name", "category", "mean", "std", "median", "q25", "q75"]
    assert len(rows) == len(rep.rows()) + 1
    assert rep.filename == "importance_AdoptionVsVoice_Male.csv"


def test_report_byte_identical_reruns(tmp_path):
    m = _matrix(_classes(40, 60))
    spec = ExperimentSpec(Task.ADOPTION_VS_VOICE, Axis.GENDER, "Male", seed=3, params=FAST, repeats=3)
    run_experiment(spec, m).write_csv(tmp_path / "a.csv")
    run_experiment(spec, m).write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def _suite_classes(n=480):
    cycle = [UserClass.VOICE_ONLY, UserClass.VOICE_ONLY, UserClass.REGISTERED, UserClass.P2P]
    return [cycle[i % 4] for i in range(n)]


def test_suite_complete_gives_twelve(tmp_path):
    classes = _suite_classes()
    gender = ["Male" if (i // 4) % 2 else "Female" for i in range(len(classes))]
    m = _matrix(classes, gender, n_cols=12)
    suite = run_suite(m, seed=1, params=FAST, repeats=2, threads=2)
    assert len(suite.reports) == 12 and not suite.skipped
    suite.write(tmp_path)
    rows = list(csv.reader((tmp_path / "accuracy_summary.csv").open()))
    assert len(rows) == 13
    assert all(0.0 <= float(r[4]) <= 1.0 for r in rows[1:])
    assert len(list(csv.reader((tmp_path / "skipped.csv").open()))) == 1


def test_suite_without_wealth_skips_four():
    classes = _suite_classes()
    gender = ["Male" if (i // 4) % 2 else "Female" for i in range(len(classes))]
    m = _matrix(classes, gender, n_cols=12, wealth=False)
    suite = run_suite(m, seed=1, params=FAST, repeats=2)
    assert len(suite.reports) == 8 and len(suite.skipped) == 4
    assert {s.stratum for s in suite.skipped} == {"Rich", "Poor"}


def test_suite_threads_do_not_change_reports(tmp_path):
    classes = _suite_classes(240)
    gender = ["Male" if (i // 4) % 2 else "Female" for i in range(len(classes))]
    m = _matrix(classes, gender, n_cols=12)
    run_suite(m, seed=2, params=FAST, repeats=2, threads=1).write(tmp_path / "t1")
    run_suite(m, seed=2, params=FAST, repeats=2, threads=3).write(tmp_path / "t3")
    for p in sorted((tmp_path / "t1").iterdir()):
        assert p.read_bytes() == (tmp_path / "t3" / p.name).read_bytes()
