import hashlib
import json
from pathlib import Path

import pytest

from spatial_psl.harness import ConfigError, ExperimentConfig, parse_config
from spatial_psl.harness import pipeline as P
from spatial_psl.harness.cli import LOCK_NAME, main
from spatial_psl.nn.train import write_trace

TINY = """
[experiment]
seed = 3
sweep_pis = 0.5
[data]
train_scenes = 10
val_scenes = 2
test_scenes = 2
[model]
grid = 4
embed_dim = 4
g_widths = 8, 8, 8, 8
f_widths = 8, 8
[train]
epochs = 1
"""

PAIR_PROGRAM = "open y(item).\n2.0: y(a).\n1.0: !y(a).\n"


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix != ".png"
    }


# configuration -------------------------------------------------------------


def test_default_config_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(cfg.to_ini()) == cfg
    assert cfg.data.splits() == {"train": 9800, "val": 200, "test": 200}
    assert cfg.data.questions_per_scene == 10


def test_custom_config_round_trip():
    cfg = parse_config(TINY)
    assert cfg.train.seed == 3
    assert cfg.model.g_widths == (8, 8, 8, 8)
    assert parse_config(cfg.to_ini()) == cfg


@pytest.mark.parametrize(
    "text, where",
    [
        ("[data]\ntrain_scenes = many\n", "data.train_scenes"),
        ("[data]\nbogus = 1\n", "data.bogus"),
        ("[nowhere]\nx = 1\n", "nowhere"),
        ("[experiment]\nvariant = giant\n", "experiment.variant"),
        ("[experiment]\nsweep_pis = 1.5\n", "experiment.sweep_pis"),
        ("[model]\ngrid = 0\n", "model"),
        ("[train]\nlr = 0\n", "train"),
    ],
)
def test_config_errors_name_the_key(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


# dataset -------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "tiny.ini").write_text(TINY)
    assert main(["gen", "--config", str(root / "tiny.ini"), "--out", str(root / "out")]) == 0
    return root


def test_gen_layout(tiny_root):
    data = tiny_root / "out" / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["schema"] == P.DATASET_SCHEMA
    assert {k: len(v) for k, v in manifest["splits"].items()} == {"train": 10, "val": 2, "test": 2}
    assert len((data / "scenes.jsonl").read_text().splitlines()) == 14
    assert len((data / "questions.jsonl").read_text().splitlines()) == 140
    assert len(list((data / "images").glob("*.ppm"))) == 14
    files = P.load_dataset(data)
    assert len(files.split_questions("train")) == 100
    assert not (tiny_root / "out" / LOCK_NAME).exists()


def test_gen_is_byte_identical(tiny_root):
    again = tiny_root / "again"
    assert main(["gen", "--config", str(tiny_root / "tiny.ini"), "--out", str(again)]) == 0
    assert tree_digest(again / "data") == tree_digest(tiny_root / "out" / "data")


def test_seed_override_changes_data(tiny_root):
    other = tiny_root / "other"
    assert main(["gen", "--config", str(tiny_root / "tiny.ini"), "--seed", "4", "--out", str(other)]) == 0
    assert (other / "data" / "scenes.jsonl").read_bytes() != (tiny_root / "out" / "data" / "scenes.jsonl").read_bytes()


def test_schema_mismatch_rejected(tiny_root, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for name in ("scenes.jsonl", "questions.jsonl"):
        (data / name).write_bytes((tiny_root / "out" / "data" / name).read_bytes())
    manifest = json.loads((tiny_root / "out" / "data" / "manifest.json").read_text())
    manifest["schema"] = "something/else"
    (data / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(P.InputError, match="schema"):
        P.load_dataset(data)


def test_scene_seeds_are_distinct():
    seeds = {P.scene_seed(0, s, i) for s in P.SPLITS for i in range(200)}
    assert len(seeds) == 600


# full pipeline -------------------------------------------------------------


def test_pipeline_end_to_end(tiny_root, capsys):
    out = tiny_root / "out"
    cfg = ["--config", str(tiny_root / "tiny.ini"), "--out", str(out)]
    assert main(["masks", *cfg]) == 0
    assert len(list((out / "masks").glob("*.pgm"))) == 140
    assert (out / "masks" / "matching.csv").read_text().splitlines()[-1].startswith("ALL,")
    for variant in ("baseline", "teacher-external-mask", "teacher-attention", "student-external", "student-attention"):
        assert main(["train", "--variant", variant, *cfg]) == 0
        assert (out / "runs" / f"{variant}.ckpt").exists()
        assert (out / "runs" / f"{variant}.ini").exists()
    capsys.readouterr()
    assert main(["report", *cfg]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in printed] == list(P.REPORT_ROWS)
    report = (out / "report" / "report.csv").read_text().splitlines()
    assert report[0] == "architecture,test_accuracy,delta_vs_baseline"
    assert report[1].endswith(",+0.0000")
    for png in ("report.png", "curves.png"):
        assert (out / "report" / png).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert main(["sweep", *cfg]) == 0
    sweep = (out / "report" / "sweep.csv").read_text().splitlines()
    assert sweep[0] == "pi,test_accuracy,delta_vs_baseline" and sweep[1].startswith("0.5,")
    assert (out / "report" / "sweep.png").exists()


def test_student_needs_teacher(tiny_root, tmp_path):
    out = tmp_path / "out"
    (out / "data").mkdir(parents=True)
    for p in (tiny_root / "out" / "data").rglob("*"):
        if p.is_file():
            dest = out / "data" / p.relative_to(tiny_root / "out" / "data")
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(p.read_bytes())
    code = main(["train", "--variant", "student-attention", "--config", str(tiny_root / "tiny.ini"), "--out", str(out)])
    assert code == 3


# report --------------------------------------------------------------------


def test_report_student_equal_to_baseline(tmp_path):
    trace = [{"epoch": 1, "split": "val", "accuracy": 0.5, "loss": 1.0}, {"epoch": 1, "split": "test", "accuracy": 0.625, "loss": 1.0}]
    for name in ("baseline", "student-external"):
        write_trace(tmp_path / f"{name}.csv", trace)
    table = P.build_report(P.collect_traces(tmp_path))
    assert table.rows() == [("baseline", 0.625, 0.0), ("student-external", 0.625, 0.0)]
    with pytest.raises(P.InputError):
        P.build_report({"student-external": trace})


# psl -----------------------------------------------------------------------


def test_psl_weighted_pair(tmp_path):
    (tmp_path / "p.psl").write_text(PAIR_PROGRAM)
    (tmp_path / "e.txt").write_text("")
    out = tmp_path / "res" / "interp.txt"
    code = main(["psl", "solve", "--program", str(tmp_path / "p.psl"), "--evidence", str(tmp_path / "e.txt"), "--out", str(out)])
    assert code == 0
    atom, value = out.read_text().split()
    assert atom == "y(a)" and float(value) == pytest.approx(1.0, abs=1e-6)
    assert main(["psl", "--program", str(tmp_path / "p.psl"), "--evidence", str(tmp_path / "e.txt"), "--out", str(tmp_path / "dir")]) == 0
    assert (tmp_path / "dir" / "interpretation.txt").exists()


def test_exit_codes(tmp_path):
    (tmp_path / "p.psl").write_text(PAIR_PROGRAM)
    (tmp_path / "e.txt").write_text("")
    (tmp_path / "bad.ini").write_text("[data]\nbogus = 1\n")
    psl = ["psl", "--program", str(tmp_path / "p.psl"), "--out", str(tmp_path / "o")]
    assert main([*psl, "--evidence", str(tmp_path / "missing.txt")]) == 3
    assert main([*psl, "--evidence", str(tmp_path / "e.txt"), "--config", str(tmp_path / "bad.ini")]) == 2
    (tmp_path / "syntax.psl").write_text("1.0 y(a)")
    assert main(["psl", "--program", str(tmp_path / "syntax.psl"), "--evidence", str(tmp_path / "e.txt"), "--out", str(tmp_path / "o")]) == 3
    (tmp_path / "strict.ini").write_text("[experiment]\nstrict = true\n[solver]\nmax_iters = 4\n")
    (tmp_path / "hard.psl").write_text("open y(item). open z(item).\n1.0: y(a) | z(a).\n1.5: !y(a).\n0.3: !z(a).\n")
    code = main(["psl", "--program", str(tmp_path / "hard.psl"), "--evidence", str(tmp_path / "e.txt"), "--config", str(tmp_path / "strict.ini"), "--out", str(tmp_path / "o")])
    assert code == 4
    assert main(["train", "--out", str(tmp_path / "nodata")]) == 3


def test_locked_output_root_is_refused(tmp_path):
    (tmp_path / "out").mkdir()
    (tmp_path / "out" / LOCK_NAME).write_text("1")
    assert main(["gen", "--out", str(tmp_path / "out")]) == 3
    assert not (tmp_path / "out" / "data").exists()
