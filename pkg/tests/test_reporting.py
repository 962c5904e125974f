import json
import os

import pytest

from brwlab.experiments import ExperimentConfig, estimate_volume, run_blocks
from brwlab.events import BlockConfig
from brwlab.reporting import format_csv, format_value, write_report


def test_format_value():
    assert format_value(True) == "1"
    assert format_value(False) == "0"
    assert format_value(float("nan")) == "nan"
    assert format_value(0.1) == "0.1"
    assert format_value(1.0 / 3.0) == "0.3333333333"
    assert format_value(None) == ""
    assert format_value(7) == "7"


def test_format_csv_field_order():
    rows = [{"a": 1, "b": 2.5}, {"b": 3.0}]
    text = format_csv(rows, ["a", "b"])
    assert text == "a,b\n1,2.5\n,3\n"


def test_write_report_artifacts(tmp_path, binary):
    cfg = ExperimentConfig(d=1, n_values=(8, 16), replicas=5, seed=1)
    rep = estimate_volume(cfg)
    paths = write_report(rep, str(tmp_path), "volume")
    assert os.path.exists(paths["records"])
    assert os.path.exists(paths["summary"])
    assert os.path.exists(paths["figure"])
    with open(paths["manifest"]) as fh:
        manifest = json.load(fh)
    assert manifest["kind"] == "volume"
    assert set(manifest["digests"]) == {"records", "summary", "figure"}
    with open(paths["records"]) as fh:
        header = fh.readline().strip()
    assert header == "d,n,replica,seed,resistance,tree_size,sites,solver_iters,residual,status"


def test_write_report_byte_stable(tmp_path, binary):
    cfg = ExperimentConfig(d=1, n_values=(8,), replicas=5, seed=1)
    outs = []
    for name in ("a", "b"):
        rep = estimate_volume(cfg)
        paths = write_report(rep, str(tmp_path), name)
        with open(paths["records"], "rb") as fh:
            outs.append(fh.read())
    assert outs[0] == outs[1]


def test_blocks_report_figure(tmp_path, binary):
    cfg = BlockConfig(n=48, delta=0.125, K=2)
    rep = run_blocks(cfg, 2000, 3, d=2)
    paths = write_report(rep, str(tmp_path), "blocks")
    assert os.path.exists(paths["figure"])
    with open(paths["summary"]) as fh:
        header = fh.readline().strip()
    assert header.startswith("reps,good,tree_good,tree_checked")
