import csv
import json

import numpy as np
import pytest

from robust_selfmodel.arm_world import Manifest
from robust_selfmodel.bench import cli
from robust_selfmodel.bench.config import ConfigError, FilterSpec, load_config
from robust_selfmodel.bench.pipeline import conditions, run_lock, DataError
from robust_selfmodel.image_core import load_image, load_mask
from robust_selfmodel.metrics import f1_from_iou

SMALL = """\
[corpus]
n = 12
[segmenter]
epochs = 60
[denoiser]
patch_images = 4
samples_per_class = 60
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- filter strings and config ----------------------------------------------

def test_filter_spec_parsing():
    f = FilterSpec.parse("wiener:nsr=1e-3")
    assert f.kind == "wiener" and f.options == {"nsr": 1e-3}
    assert str(FilterSpec.parse("median:k=1")) == "median:k=1"
    nlm = FilterSpec.parse("nlm:h=0.04,patch=3,window=10")
    assert nlm.options == {"h": 0.04, "patch": 3.0, "window": 10.0}
    a = FilterSpec.parse("nlm+iftsvm:alpha_edge=0.6,model=models/p.txt")
    b = FilterSpec.parse("nlm-iftsvm:alpha_edge=0.6,model=models/p.txt")
    assert a == b and a.options["model"] == "models/p.txt"
    assert str(a) == "nlm+iftsvm:alpha_edge=0.6,model=models/p.txt"
    for bad in ("sharpen:x=1", "median:q=2", "median:k=big", "wiener:nsr"):
        with pytest.raises(ConfigError):
            FilterSpec.parse(bad)


def test_default_config():
    cfg = load_config(environ={})
    assert cfg.n == 600 and cfg.size == (100, 100) and cfg.seed == 0
    assert [s.label for s in cfg.noise] == ["blur:sigma=2,k=6", "sp:p=0.1", "gauss:sigma=25"]
    assert set(cfg.filters) == {"blur", "sp", "gauss"}
    assert len(conditions(cfg)) == 7
    assert len(conditions(cfg, denoise=False)) == 4


def test_config_errors(tmp_path):
    def load(text):
        p = tmp_path / "c.ini"
        p.write_text(text)
        return load_config(p, environ={})

    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini", environ={})
    with pytest.raises(ConfigError, match="unknown section"):
        load("[bogus]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load("[corpus]\nsize = 3\n")
    with pytest.raises(ConfigError, match="not a valid int"):
        load("[corpus]\nn = many\n")
    with pytest.raises(ConfigError, match="n must be"):
        load("[corpus]\nn = 0\n")
    with pytest.raises(ConfigError, match="duplicate"):
        load("[noise]\nspecs = sp:p=0.1; sp:p=0.1\n")
    with pytest.raises(ConfigError, match="bindings"):
        load("[filters]\nsp =\n")
    cfg = load("[filters]\nsp =\n[evaluate]\ndenoise = false\n")
    assert not cfg.denoise


def test_env_and_explicit_overrides():
    cfg = load_config(environ={"RSM_CORPUS_N": "30", "RSM_RUN_SEED": "9"})
    assert (cfg.n, cfg.seed) == (30, 9)
    cfg = load_config(environ={"RSM_CORPUS_N": "30"}, overrides={("corpus", "n"): 40})
    assert cfg.n == 40
    with pytest.raises(ConfigError):
        load_config(environ={}, overrides={("corpus", "colour"): 1})


# --- CLI exit codes ----------------------------------------------------------

def test_cli_config_error_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RSM_CORPUS_N", "0")
    assert cli.main(["generate", "--out", str(tmp_path / "run")]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    monkeypatch.delenv("RSM_CORPUS_N")
    assert cli.main(["generate", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


def test_cli_data_error_exit_code(tmp_path, capsys):
    assert cli.main(["evaluate", "--out", str(tmp_path / "empty")]) == cli.EXIT_DATA
    assert "generate" in capsys.readouterr().err


def test_lock_blocks_concurrent_runs(tmp_path):
    out = tmp_path / "run"
    with run_lock(out):
        with pytest.raises(DataError, match="locked"):
            with run_lock(out):
                pass
        assert cli.main(["generate", "--out", str(out)]) == cli.EXIT_DATA
    assert not (out / ".lock").exists()


def test_selftest_passes(tmp_path):
    assert cli.main(["selftest", "--out", str(tmp_path / "st")]) == cli.EXIT_OK


def test_selftest_reports_failed_checks(tmp_path):
    out = tmp_path / "st"
    out.mkdir()
    (out / "report.json").write_text(json.dumps({"checks": {"pipeline_lt_nn": False}}))
    assert cli.main(["selftest", "--out", str(out)]) == cli.EXIT_INVARIANT


# --- a small end-to-end run ----------------------------------------------------

@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    out = root / "run"
    assert cli.main(["pipeline", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_OK
    return out


def test_pipeline_report_shape(small_run):
    rows = _rows(small_run / "report.csv")
    assert list(rows[0]) == ["condition", "filter", "seed", "mse", "iou", "precision",
                             "recall", "f1", "psnr"]
    assert len(rows) == 7
    pairs = {(r["condition"], r["filter"]) for r in rows}
    assert len(pairs) == 7 and ("clean", "none") in pairs
    report = json.loads((small_run / "report.json").read_text())
    assert set(report["wall_time"]) == {"generate", "corrupt", "denoise", "segment", "evaluate"}
    assert report["test_images"] == 2
    assert (small_run / "config.ini").is_file()
    long_rows = _rows(small_run / "report_long.csv")
    assert {r["metric"] for r in long_rows} >= {"mse", "iou", "f1", "psnr", "nn_mse", "random_mse"}


def test_pipeline_corruption_outputs(small_run):
    corpus = Manifest.read(small_run / "corpus/manifest.csv")
    assert len(corpus.entries) == 12 and len(corpus.split("test")) == 2
    dirs = sorted((small_run / "corrupted/r0").iterdir())
    assert len(dirs) == 3
    assert sum(len(list((d / "images").iterdir())) for d in dirs) == 3 * 2
    sp = small_run / "corrupted/r0/sp_p-0.1"
    hits = total = 0
    for e in corpus.split("test"):
        noisy = load_image(sp / "images" / f"img_{e.index:05d}.ppm")
        extreme = np.all(noisy == 0, axis=2) | np.all(noisy == 1, axis=2)
        hits += extreme.sum()
        total += extreme.size
    assert abs(hits / total - 0.1) <= 0.01
    assert (sp / "noise.txt").read_text().startswith("sp:p=0.1")


def test_pipeline_segment_metrics(small_run):
    for metrics in (small_run / "segment").rglob("metrics.csv"):
        for r in _rows(metrics):
            assert float(r["f1"]) == pytest.approx(f1_from_iou(float(r["iou"])), abs=1e-12)
    clean = small_run / "segment/clean"
    mask = load_mask(next((clean / "masks").iterdir()))
    assert set(np.unique(mask)) <= {0, 1}


def test_pipeline_denoise_logs_psnr(small_run):
    rows = _rows(small_run / "denoised/r0/sp_p-0.1/psnr.csv")
    assert len(rows) == 2
    assert all(float(r["psnr_restored"]) > float(r["psnr_corrupted"]) for r in rows)


def test_skip_denoise_drops_three_groups(tmp_path, small_config):
    out = tmp_path / "run"
    code = cli.main(["pipeline", "--config", str(small_config), "--out", str(out),
                     "--skip-denoise"])
    assert code == cli.EXIT_OK
    rows = _rows(out / "report.csv")
    assert len(rows) == 4 and all(r["filter"] == "none" for r in rows)
    assert not (out / "denoised").exists()


def test_denoise_with_explicit_patch_model(tmp_path, small_run):
    out = tmp_path / "run"
    (tmp_path / "c.ini").write_text(
        SMALL + "[filters]\ngauss = nlm+iftsvm:window=5,model="
        + str(small_run / "models/patch_model.txt") + "\n")
    args = ["--config", str(tmp_path / "c.ini"), "--out", str(out)]
    assert cli.main(["generate", *args]) == cli.EXIT_OK
    assert cli.main(["corrupt", *args]) == cli.EXIT_OK
    assert cli.main(["denoise", *args]) == cli.EXIT_OK
    assert not (out / "models/patch_model.txt").exists()
    (tmp_path / "c.ini").write_text(SMALL + "[filters]\ngauss = nlm+iftsvm:model=/no/such\n")
    assert cli.main(["denoise", *args]) == cli.EXIT_DATA
