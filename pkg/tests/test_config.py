import pytest

from sigood.config import ConfigError, RunConfig, from_dict, load_config, override
from sigood.detector import DetectorConfig
from sigood.evaluation import DatasetEntry


def test_empty_document_gives_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg == RunConfig()
    assert cfg.detector == DetectorConfig()
    assert (cfg.detector.beta, cfg.detector.iterations, cfg.detector.lr) == (80.0, 500, 1e-3)


def test_sections_parsed(tmp_path):
    (tmp_path / "c.yaml").write_text(
        "seed: 3\n"
        "synth: {n_graphs: 7, feature_mean: [1, 2]}\n"
        "detector: {beta: 10, mode: per-graph}\n"
        "benchmark:\n"
        "  datasets: [{name: motif-shift}, {name: synth-anomaly, protocol: anomaly}]\n"
        "  methods: [sigood]\n"
        "  seeds: [4, 5]\n"
        "paths: {output_dir: out}\n"
    )
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.synth.n_graphs == 7 and cfg.synth.feature_mean == (1, 2)
    assert cfg.detector.beta == 10 and cfg.detector.mode == "per-graph"
    assert cfg.benchmark.datasets == (DatasetEntry("motif-shift"), DatasetEntry("synth-anomaly", "anomaly"))
    assert cfg.paths.output_dir == "out"
    seeded = cfg.seeded()
    assert seeded.synth.seed == seeded.pretrain.seed == seeded.detector.seed == 3
    assert cfg.benchmark_config().seeds == (3,)
    assert from_dict({"benchmark": {"seeds": [4, 5]}}).benchmark_config().seeds == (4, 5)


@pytest.mark.parametrize("doc", [
    {"detectr": {}},
    {"detector": {"betta": 1}},
    {"benchmark": {"datasets": [{"name": "x", "dir": "y"}]}},
    {"paths": {"out": "x"}},
    {"seed": "zero"},
    {"detector": {"iterations": 0}},
    {"detector": [1, 2]},
])
def test_strict_keys_and_values(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.yaml"):
        load_config(tmp_path / "nope.yaml")
    (tmp_path / "bad.yaml").write_text("detector: {beta: [\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")


def test_override_wins_and_ignores_none():
    cfg = from_dict({"detector": {"beta": 10, "lr": 0.5}})
    out = override(cfg, "detector", beta=2.0, lr=None)
    assert out.detector.beta == 2.0 and out.detector.lr == 0.5
    assert override(cfg, "root", seed=None) is cfg
    assert override(cfg, "root", seed=9).seed == 9
    with pytest.raises(ConfigError):
        override(cfg, "detector", iterations=0)
