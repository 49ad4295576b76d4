import filecmp
import json

import numpy as np
import pytest

from avturn import dsp
from avturn.cli import format_ablation, main

from conftest import tiny_config, write_config


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    return write_config(tiny_config(steps=2, eval_every=2), tmp_path_factory.mktemp("cfg") / "tiny.json")


def test_gen_data_is_reproducible(tmp_path, cfg_file):
    for name in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg_file), "--clips", "2", "--seed", "4",
                     "--out", str(tmp_path / name)]) == 0
    assert _same_tree(tmp_path / "a", tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and len(manifest["clips"]) == 2


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--bogus"]) == 2
    assert main([]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1, "model": {"lr": -1}}')
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_data_exit_3(tmp_path, cfg_file):
    assert main(["train", "--config", str(cfg_file), "--data", str(tmp_path / "none"),
                 "--out", str(tmp_path / "run")]) == 3
    assert main(["eval", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "run")]) == 3


def test_train_eval_separate_localize(tmp_path, cfg_file, tiny_data, capsys):
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--data", str(tiny_data), "--out", str(run)]) == 0
    assert (run / "checkpoint.avtt").exists()
    capsys.readouterr()
    assert main(["eval", "--data", str(tiny_data), "--out", str(run)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert {"accuracy", "f1", "si_sdr"} <= set(summary)

    clip = tiny_data / "clip_00000"
    assert main(["separate", str(clip), "--out", str(run)]) == 0
    wav = dsp.read_wav(run / "clip_00000_separated.wav")
    assert len(wav) == len(dsp.read_wav(clip / "mix.wav"))
    assert np.isfinite(wav.samples).all()

    capsys.readouterr()
    assert main(["localize", str(clip), "--out", str(run)]) == 0
    lines = [json.loads(s) for s in capsys.readouterr().out.splitlines()]
    assert [r["segment"] for r in lines] == [0, 1]
    assert all(0 <= r["sroi"] < 9 for r in lines)


def test_ablate_prints_two_column_table(tmp_path, cfg_file, tiny_data, capsys):
    assert main(["ablate", "--config", str(cfg_file), "--data", str(tiny_data), "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split() == ["condition", "w/o", "L_align", "w/", "L_align"]
    assert len(lines) >= 2
    for row in lines[1:]:
        cells = row.split()
        assert len(cells) == 3
        float(cells[1]), float(cells[2])
    assert (tmp_path / "seed0_with" / "checkpoint.avtt").exists()
    assert (tmp_path / "seed0_without" / "checkpoint.avtt").exists()


def test_format_ablation():
    text = format_ablation({"2S": (3.14159, 5.0)})
    assert text.splitlines()[1].split() == ["2S", "3.14", "5.00"]
