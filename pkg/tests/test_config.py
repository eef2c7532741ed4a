"""Configuration defaults, file loading, overrides, and validation."""

import pytest

from aoed.config import OEDConfig, load_config


def test_defaults_pinned():
    cfg = OEDConfig()
    assert cfg.mesh.resolution == 33
    assert cfg.mesh.holes == [[0.25, 0.5, 0.15, 0.4], [0.6, 0.85, 0.6, 0.85]]
    assert cfg.prior.alpha == pytest.approx(8.0e-3)
    assert cfg.prior.beta == pytest.approx(1.0e-2)
    assert cfg.transport.kappa == pytest.approx(1.0e-3)
    assert cfg.transport.t_final == pytest.approx(4.0)
    assert cfg.transport.n_steps == 64
    assert cfg.observation.sensor_spacing == pytest.approx(0.0818)
    assert cfg.observation.n_times == 19
    assert cfg.observation.time_start == pytest.approx(1.0)
    assert cfg.observation.time_end == pytest.approx(4.0)
    assert cfg.observation.noise_sigma == pytest.approx(1.0)
    assert cfg.whitening.mode == "auto"
    assert cfg.whitening.degree == 10
    assert cfg.surrogate.rank == 60
    assert cfg.surrogate.oversampling == 10
    assert cfg.surrogate.power_iters == 1
    assert cfg.surrogate.seed == 2024
    assert cfg.estimator.n_vectors == 100
    assert cfg.estimator.seed == 93
    assert cfg.penalty.kind == "smoothed_l0"
    assert cfg.penalty.gamma == pytest.approx(0.05)
    assert cfg.penalty.eps_steps == 10
    assert cfg.optimizer.max_iter == 150
    assert cfg.optimizer.grad_reduction == pytest.approx(1.0e4)
    assert cfg.optimizer.mode == "projected"
    assert cfg.trace_study.n_vectors == [1, 5, 10, 20, 100]
    assert cfg.output.directory == "aoed-output"
    assert cfg.output.plots is True


def test_defaults_validate():
    assert load_config() is not None


def test_yaml_file_sections_apply(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "mesh:\n"
        "  resolution: 17\n"
        "transport:\n"
        "  kappa: 0.01\n"
        "  n_steps: 32\n"
        "penalty:\n"
        "  kind: l1\n"
        "  gamma: 3.5\n"
    )
    cfg = load_config(path)
    assert cfg.mesh.resolution == 17
    assert cfg.transport.kappa == pytest.approx(0.01)
    assert cfg.transport.n_steps == 32
    assert cfg.penalty.kind == "l1"
    assert cfg.penalty.gamma == pytest.approx(3.5)
    # untouched sections keep defaults
    assert cfg.surrogate.rank == 60


def test_overrides_parse_yaml_literals(tmp_path):
    cfg = load_config(
        overrides=[
            "surrogate.rank=80",
            "output.plots=false",
            "trace_study.n_vectors=[2, 4]",
            "observation.noise_sigma=0.5",
        ]
    )
    assert cfg.surrogate.rank == 80
    assert cfg.output.plots is False
    assert cfg.trace_study.n_vectors == [2, 4]
    assert cfg.observation.noise_sigma == pytest.approx(0.5)


def test_overrides_apply_after_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("surrogate:\n  rank: 30\n")
    cfg = load_config(path, overrides=["surrogate.rank=45"])
    assert cfg.surrogate.rank == 45


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("mesh:\n  resolutionn: 17\n")
    with pytest.raises(KeyError, match="resolutionn"):
        load_config(path)
    with pytest.raises(KeyError):
        load_config(overrides=["mesh.typo=1"])
    with pytest.raises(KeyError):
        load_config(overrides=["nosuchsection.key=1"])
    with pytest.raises(ValueError, match="section.key=value"):
        load_config(overrides=["mesh.resolution"])


def test_section_must_be_mapping(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("mesh: 5\n")
    with pytest.raises(ValueError, match="mapping"):
        load_config(path)


def test_validation_catches_bad_values():
    with pytest.raises(ValueError):
        load_config(overrides=["prior.alpha=-1"])
    with pytest.raises(ValueError):
        load_config(overrides=["observation.time_start=5.0"])  # beyond end
    with pytest.raises(ValueError):
        load_config(overrides=["observation.time_end=9.0"])  # beyond t_final
    with pytest.raises(ValueError):
        load_config(overrides=["penalty.kind=l2"])
    with pytest.raises(ValueError):
        load_config(overrides=["optimizer.mode=newton"])
    with pytest.raises(ValueError):
        load_config(overrides=["surrogate.rank=0"])
    with pytest.raises(ValueError):
        load_config(overrides=["estimator.n_vectors=0"])


def test_dataclasses_use_slots():
    cfg = OEDConfig()
    with pytest.raises(AttributeError):
        cfg.mesh.resolutionn = 5


def test_to_dict_roundtrips_sections():
    d = OEDConfig().to_dict()
    assert d["mesh"]["resolution"] == 33
    assert d["penalty"]["kind"] == "smoothed_l0"
    assert set(d) == {
        "mesh", "prior", "transport", "observation", "whitening",
        "surrogate", "estimator", "penalty", "optimizer", "spectrum",
        "compare", "trace_study", "rank_study", "output",
    }
