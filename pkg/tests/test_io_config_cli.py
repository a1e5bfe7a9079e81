import json

import numpy as np
import pytest
from pydantic import ValidationError

from mlmcmc import experiment as ex
from mlmcmc import io
from mlmcmc.cli import main
from mlmcmc.config import ExperimentConfig
from mlmcmc.mcmc import ChainRecord

TINY = {
    "hierarchy": {
        "n_levels": 2,
        "truncations": {"kl": [6, 12], "wavelet": [16, 40], "las": [16, 64]},
        "tau": [1, 5],
        "n_coarse": 2000,
        "beta": [0.3, 0.3],
    },
    "noise": {"sigma_f": 1e-7},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({**TINY, "output": str(tmp_path / "out")}))
    return path


def test_field_round_trip(tmp_path, rng):
    a = rng.standard_normal((4, 16))
    io.write_field(tmp_path / "f.bin", a, {"note": "x"})
    b, info = io.read_field(tmp_path / "f.bin")
    np.testing.assert_array_equal(a, b)
    assert info["shape"] == [4, 16] and info["note"] == "x"
    assert (tmp_path / "f.bin").stat().st_size == a.size * 8
    # raw file is little-endian float64, row-major
    np.testing.assert_array_equal(np.fromfile(tmp_path / "f.bin", "<f8"), a.ravel())
    raw = bytearray((tmp_path / "f.bin").read_bytes())
    raw[0] ^= 1
    (tmp_path / "f.bin").write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="hash"):
        io.read_field(tmp_path / "f.bin")


def test_bundle_and_chain_csv(tmp_path, rng):
    arrays = {"a": rng.standard_normal(5), "b": rng.standard_normal((2, 3)), "c": np.array(1.5)}
    io.write_bundle(tmp_path / "b.bin", arrays, {"k": 1})
    back, meta = io.read_bundle(tmp_path / "b.bin")
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    q = rng.standard_normal(7)
    rec = ChainRecord(1, np.array([1, 0, 1, 1, 0, 0, 1], bool), q * 2, q * 3, q, np.zeros(7))
    io.write_chain_csv(tmp_path / "c.csv", rec)
    c = io.read_chain_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(c["qoi"], q)
    np.testing.assert_array_equal(c["accepted"], rec.accepted)
    np.testing.assert_array_equal(c["step"], np.arange(1, 8))


def test_config_round_trip_and_validation(tmp_path):
    cfg = ExperimentConfig.model_validate(TINY)
    cfg.save(tmp_path / "c.json")
    again = ExperimentConfig.from_file(tmp_path / "c.json")
    assert again == cfg and again.content_hash() == cfg.content_hash()
    assert ExperimentConfig().hierarchy.truncations["las"] == [64, 256, 1024, 4096]
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"hierarchy": {"n_level": 2}})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"hierarchy": {"truncations": {"kl": [16, 16, 100, 250]}}})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"material": {"poisson": 0.6}})


def test_level_lengths():
    specs = ex.level_specs(ExperimentConfig(), "kl")
    assert specs[0].n_samples == 200_000 and specs[0].burn_in == 20_000
    for l in (1, 2, 3):
        assert specs[l].n_samples == int(specs[l - 1].n_steps // specs[l].tau / 1.1)
        assert specs[l].n_steps * specs[l].tau <= specs[l - 1].n_steps


def test_basis_cache(tmp_path):
    cfg = ExperimentConfig.model_validate(TINY)
    rep, hit = ex.representation(cfg, "kl", tmp_path)
    assert not hit
    rep2, hit = ex.representation(cfg, "kl", tmp_path)
    assert hit
    np.testing.assert_array_equal(rep.eigenfunctions, rep2.eigenfunctions)
    changed = cfg.model_copy(update={"matern": cfg.matern.model_copy(update={"lam": 0.3})})
    rep3, hit = ex.representation(changed, "kl", tmp_path)
    assert not hit and not np.allclose(rep3.eigenvalues, rep.eigenvalues)
    for path in tmp_path.glob("kl_*.bin"):
        meta = io.read_meta(path)
        meta["key"]["truncation"] = -1
        path.with_suffix(".bin.json").write_text(json.dumps(meta))
    with pytest.raises(ex.CacheConflictError):
        ex.representation(cfg, "kl", tmp_path)


@pytest.mark.parametrize("method", ["kl", "wavelet", "las"])
def test_cache_reload_matches_build(tmp_path, method):
    cfg = ExperimentConfig.model_validate(TINY)
    ex.representation(cfg, method, tmp_path)
    cached, hit = ex.representation(cfg, method, tmp_path)
    fresh, _ = ex.representation(cfg, method, None)
    g = ex.level_grids(cfg)[0]
    m = ex.truncations(cfg, method)[0]
    assert hit
    np.testing.assert_allclose(cached.field_matrix(g, m), fresh.field_matrix(g, m), atol=1e-14)


def test_cli_end_to_end(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["precompute", "--config", str(tiny_config), "--method", "kl"]) == 0
    assert main(["synth-data", "--config", str(tiny_config)]) == 0
    assert main(["run", "--config", str(tiny_config), "--method", "kl"]) == 0
    first = (out / "runs" / "kl" / "chain_L1_R00.csv").read_text()
    assert main(["run", "--config", str(tiny_config), "--method", "kl"]) == 0
    assert (out / "runs" / "kl" / "chain_L1_R00.csv").read_text() == first
    assert main(["run", "--config", str(tiny_config), "--method", "kl", "--seed", "3"]) == 0
    assert (out / "runs" / "kl" / "chain_L1_R00.csv").read_text() != first
    assert main(["report", "--config", str(tiny_config)]) == 0
    for name in ("fig10_costs.csv", "fig11_rates_error.csv", "table2_var_iat.csv", "post_mean_kl.bin"):
        assert (out / "report" / name).exists()
    meta = json.loads((out / "runs" / "kl" / "run.json").read_text())
    assert len(meta["levels"]) == 2 and meta["epsilon"] > 0
    obs, _ = io.read_field(out / "data" / "observations.bin")
    assert obs.size == 4 * (2 * 32 + 1)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["report", str(tmp_path / "empty")]) == ex.EXIT_NOTHING_TO_REPORT
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"unknown": 1}))
    assert main(["run", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["run", "--method", "fourier"])
    assert e.value.code == 2
