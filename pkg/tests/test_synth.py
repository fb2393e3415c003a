import json

import numpy as np
import pytest

from mmadopt.data import ingest_events, ingest_money, ingest_roster
from mmadopt.synth import ConfigError, LogisticModel, PopulationConfig, TraitDistribution, generate, planted_config


@pytest.fixture(scope="module")
def planted_mobility():
    return generate(planted_config("mobility_range", 3.0, 2000, seed=1))


def test_shape_small():
    pop = generate(PopulationConfig(n_subscribers=100, seed=2))
    assert len(pop.roster) == 100
    assert len(pop.events) > 0


def test_same_seed_byte_identical(tmp_path):
    cfg = PopulationConfig(n_subscribers=60, seed=4, adoption=LogisticModel(0.0, {"network_size": 1.0}))
    a = generate(cfg).write(tmp_path / "a")
    b = generate(PopulationConfig.from_dict(cfg.to_dict())).write(tmp_path / "b")
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()
    c = generate(PopulationConfig(n_subscribers=60, seed=5)).write(tmp_path / "c")
    assert a["cdr"].read_bytes() != c["cdr"].read_bytes()


def test_planted_mobility_correlates_with_label(planted_mobility):
    r = np.corrcoef(planted_mobility.traits["mobility_range"], planted_mobility.adopted.astype(float))[0, 1]
    assert r >= 0.5


def test_strict_ingestion_zero_rejects(tmp_path):
    paths = generate(PopulationConfig(n_subscribers=150, seed=6)).write(tmp_path)
    for fn, key in ((ingest_events, "cdr"), (ingest_money, "mmtr"), (ingest_roster, "roster")):
        _, rep = fn(paths[key], strict=True)
        assert rep.rejected == 0 and rep.accepted > 0


def test_event_counts_match_rates(planted_mobility):
    pop = planted_mobility
    idx = {s.id: i for i, s in enumerate(pop.roster)}
    counts = np.zeros(len(pop.roster))
    for e in pop.events:
        counts[idx[e.caller_id]] += 1
    # weekday and weekend rates average back to activity_rate over whole weeks (28 days)
    expected = pop.traits["activity_rate"] * 28
    assert abs(counts.sum() / expected.sum() - 1) < 0.10
    assert np.median(np.abs(counts / expected - 1)) < 0.10


def test_pools_bound_contacts_and_sites():
    pop = generate(PopulationConfig(n_subscribers=120, seed=8))
    contacts, sites = {}, {}
    for e in pop.events:
        contacts.setdefault(e.caller_id, set()).add(e.recipient_id)
        sites.setdefault(e.caller_id, set()).update((e.caller_location, e.recipient_location))
    for i, s in enumerate(pop.roster):
        assert len(contacts.get(s.id, ())) <= pop.traits["network_size"][i]
        assert len(sites.get(s.id, ())) <= pop.traits["mobility_range"][i]


def test_null_config_roughly_balanced():
    pop = generate(planted_config(None, n_subscribers=1000, seed=3))
    assert 0.4 < pop.adopted.mean() < 0.6


@pytest.mark.parametrize("bad", [
    {"n_subscribers": 1},
    {"gender_proportions": {"Male": 0.7, "Female": 0.2}},
    {"gender_proportions": {"Male": 0.5, "Other": 0.5}},
    {"network_size": TraitDistribution("uniform", {"low": -2.0, "high": -1.0})},
    {"adoption": LogisticModel(0.0, {"charisma": 1.0})},
    {"start_date": "04/01/2016"},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        PopulationConfig(**bad).validate()


def test_from_json_defaults_and_unknown_fields(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_subscribers": 50, "mobility_range": {"kind": "uniform_int",
                                                                      "params": {"low": 2, "high": 3}}}))
    cfg = PopulationConfig.from_json(p)
    assert cfg.n_subscribers == 50 and cfg.window_days == 28
    assert cfg.mobility_range.params == {"low": 2, "high": 3}
    p.write_text(json.dumps({"n_subscriber": 50}))
    with pytest.raises(ConfigError, match="unknown"):
        PopulationConfig.from_json(p)


def test_stratum_offsets_shift_adoption():
    cfg = PopulationConfig(n_subscribers=1500, seed=2, adoption=LogisticModel(-1.0),
                           stratum_offsets={"Female": {"adoption": LogisticModel(2.0)}})
    pop = generate(cfg)
    female = np.array([s.gender.value == "Female" for s in pop.roster])
    assert pop.adopted[female].mean() > pop.adopted[~female].mean() + 0.2
