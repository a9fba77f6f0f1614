"""File-level pipeline steps shared by the CLI and the experiment tests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..grounding import ground
from ..inference import SolverConfig, solve_map
from ..matching import MatchingEvaluation, evaluate_matching, mask_filename, render_mask, write_mask, write_matching_csv
from ..netpbm import read_pgm, read_ppm, write_ppm
from ..nn.features import N_FEATURES, QADataset
from ..nn.losses import cross_entropy
from ..nn.model import ModelSpec, RNModel, load_checkpoint, save_checkpoint
from ..nn.train import predict, read_trace, train, write_trace
from ..questions import (
    ANSWERS,
    CLEVR_ANSWERS,
    CLEVR_VOCAB,
    COLORS,
    SORT_VOCAB,
    TEMPLATES,
    generate_clevr_lite_questions,
    generate_questions,
    read_questions,
    write_questions,
)
from ..rules import parse_evidence, parse_program
from ..scenes import SORT_OF_CLEVR, generate_scene, read_scenes, render, write_scenes
from .config import ExperimentConfig

__all__ = [
    "DATASET_SCHEMA",
    "REPORT_ROWS",
    "SPLITS",
    "DatasetFiles",
    "InputError",
    "NonConvergenceError",
    "ReportTable",
    "build_report",
    "build_split",
    "compute_masks",
    "generate_dataset",
    "load_dataset",
    "run_variant",
    "scene_seed",
]

log = logging.getLogger("spatial_psl")

SPLITS = ("train", "val", "test")
DATASET_SCHEMA = "spatial-psl/dataset/1"
# report rows and the trace file each one is read from
REPORT_ROWS = {
    "baseline": "baseline",
    "teacher-external": "teacher-external-mask",
    "teacher-attention": "teacher-attention",
    "student-external": "student-external",
    "student-attention": "student-attention",
}


class InputError(RuntimeError):
    """Missing or malformed input files."""


class NonConvergenceError(RuntimeError):
    pass


def scene_seed(seed: int, split: str, index: int) -> int:
    """Per-scene seed derived from the experiment seed, split and position."""
    return int(np.random.SeedSequence([seed, SPLITS.index(split), index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def generate_dataset(cfg: ExperimentConfig, out_dir) -> dict:
    """Write ``scenes.jsonl``, ``questions.jsonl``, ``manifest.json`` and (Sort-of-Clevr) ``images/*.ppm``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    scenes, questions, splits = [], [], {}
    for split, n in d.splits().items():
        ids = []
        for i in range(n):
            s = scene_seed(cfg.seed, split, i)
            scene = generate_scene(s, d.mode, d.scene_config(), scene_id=f"{split}-{i:05d}")
            if d.mode == SORT_OF_CLEVR:
                qs = generate_questions(scene, s, d.questions_per_scene)
            else:
                qs = generate_clevr_lite_questions(scene, s, d.questions_per_scene)
            scenes.append(scene)
            questions.extend(qs)
            ids.append(scene.scene_id)
        splits[split] = ids
    write_scenes(out / "scenes.jsonl", scenes)
    write_questions(out / "questions.jsonl", questions)
    if d.mode == SORT_OF_CLEVR:
        (out / "images").mkdir(exist_ok=True)
        for scene in scenes:
            write_ppm(out / "images" / f"{scene.scene_id}.ppm", render(scene))
    manifest = {
        "schema": DATASET_SCHEMA,
        "mode": d.mode,
        "seed": cfg.seed,
        "questions_per_scene": d.questions_per_scene,
        "split_sizes": {k: len(v) for k, v in splits.items()},
        "splits": splits,
        "templates": [t.name for t in TEMPLATES] if d.mode == SORT_OF_CLEVR else ["chain"],
        "answers": list(ANSWERS if d.mode == SORT_OF_CLEVR else CLEVR_ANSWERS),
        "answer_vocabulary_size": len(ANSWERS if d.mode == SORT_OF_CLEVR else CLEVR_ANSWERS),
        "vocabulary": list(SORT_VOCAB if d.mode == SORT_OF_CLEVR else CLEVR_VOCAB),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


@dataclass
class DatasetFiles:
    root: Path
    manifest: dict
    scenes: dict
    questions: list

    @property
    def mode(self) -> str:
        return self.manifest["mode"]

    def split_questions(self, split: str) -> list:
        ids = set(self.manifest["splits"][split])
        return [q for q in self.questions if q.scene_id in ids]

    def image(self, scene_id: str) -> np.ndarray:
        path = self.root / "images" / f"{scene_id}.ppm"
        try:
            return read_ppm(path)
        except FileNotFoundError:
            raise InputError(f"missing image {path}") from None


def load_dataset(data_dir) -> DatasetFiles:
    """Read the files written by :func:`generate_dataset`, checking schemas and cross references."""
    root = Path(data_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        if manifest.get("schema") != DATASET_SCHEMA:
            raise InputError(f"{root / 'manifest.json'}: schema {manifest.get('schema')!r}, expected {DATASET_SCHEMA!r}")
        scenes = {s.scene_id: s for s in read_scenes(root / "scenes.jsonl")}
        questions = read_questions(root / "questions.jsonl")
    except FileNotFoundError as exc:
        raise InputError(f"missing dataset file {exc.filename}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"{root}: {exc}") from None
    for split in SPLITS:
        for sid in manifest["splits"].get(split, []):
            if sid not in scenes:
                raise InputError(f"manifest lists unknown scene {sid!r}")
    for q in questions:
        if q.scene_id not in scenes:
            raise InputError(f"question refers to unknown scene {q.scene_id!r}")
    return DatasetFiles(root, manifest, scenes, questions)


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def compute_masks(cfg: ExperimentConfig, files: DatasetFiles, out_dir, splits=SPLITS) -> MatchingEvaluation:
    """Match every question, write one PGM mask per question and ``matching.csv``.

    Raises:
        NonConvergenceError: in strict mode, when a MAP solve did not converge.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mcfg = cfg.match_config()
    items = [(q, files.scenes[q.scene_id]) for split in splits for q in files.split_questions(split)]
    evaluation = evaluate_matching(items, mcfg)
    for (q, scene), row in zip(items, evaluation.rows):
        if cfg.strict and not row["converged"]:
            raise NonConvergenceError(f"MAP inference did not converge for {q.scene_id} question {q.q_index}")
        write_mask(out / mask_filename(q.scene_id, q.q_index), render_mask(scene, row["selected"], mcfg.decay_scale))
    write_matching_csv(out / "matching.csv", evaluation)
    log.info("matching precision %.4f recall %.4f over %d questions", evaluation.precision, evaluation.recall, len(items))
    return evaluation


def _read_mask(masks_dir: Path, q) -> np.ndarray:
    path = masks_dir / mask_filename(q.scene_id, q.q_index)
    try:
        return read_pgm(path) / 255.0
    except FileNotFoundError:
        raise InputError(f"missing mask {path}") from None


# ---------------------------------------------------------------------------
# Training runs
# ---------------------------------------------------------------------------


def build_split(cfg: ExperimentConfig, files: DatasetFiles, split: str, masks_dir=None) -> QADataset:
    if files.mode != SORT_OF_CLEVR:
        raise InputError("training needs rendered sort-of-clevr images")
    questions = files.split_questions(split)
    images = {sid: files.image(sid) for sid in files.manifest["splits"][split]}
    masks = None
    if masks_dir is not None:
        masks = {(q.scene_id, q.q_index): _read_mask(Path(masks_dir), q) for q in questions}
    return QADataset.build(files.scenes, questions, images, cfg.model.grid, masks, cfg.model.encoding)


def model_spec(cfg: ExperimentConfig, n_question: int, attention: bool) -> ModelSpec:
    m = cfg.model
    return ModelSpec(
        N_FEATURES, m.grid * m.grid, n_question, len(ANSWERS), m.embed_dim, m.g_widths, m.f_widths, attention
    )


def _question_dim(cfg: ExperimentConfig) -> int:
    if cfg.model.encoding == "onehot":
        return len(COLORS) * len(TEMPLATES)
    return len(SORT_VOCAB)


def _with_test_row(model: RNModel, trace: list, test: QADataset, epoch: int) -> list:
    logits = predict(model, test)
    loss, _ = cross_entropy(logits, test.y)
    acc = float((logits.argmax(axis=1) == test.y).mean())
    return trace + [{"epoch": epoch, "split": "test", "accuracy": acc, "loss": loss}]


_TEACHER_OF = {"student-external": "teacher-external-mask", "student-attention": "teacher-attention"}


def run_variant(
    cfg: ExperimentConfig,
    files: DatasetFiles,
    variant: str,
    runs_dir,
    masks_dir=None,
    name: str | None = None,
    pi: float | None = None,
    data_cache: dict | None = None,
):
    """Train one variant, write ``<name>.ckpt`` and ``<name>.csv`` (trace with a final test row).

    Students load their teacher's checkpoint from ``runs_dir``.

    Returns:
        ``(model, trace)``.
    """
    runs = Path(runs_dir)
    runs.mkdir(parents=True, exist_ok=True)
    name = name or variant
    cache = data_cache if data_cache is not None else {}

    def split(which, masked):
        key = (which, masked)
        if key not in cache:
            if masked and masks_dir is None:
                raise InputError(f"{variant} needs masks; run the masks command first")
            cache[key] = build_split(cfg, files, which, masks_dir if masked else None)
        return cache[key]

    masked = variant == "teacher-external-mask"
    attention = variant == "teacher-attention"
    train_ds, val_ds, test_ds = split("train", masked), split("val", masked), split("test", masked)
    spec = model_spec(cfg, _question_dim(cfg), attention)
    model = RNModel.init(spec, cfg.seed).fit_inputs(train_ds.X)
    kwargs = {}
    train_variant = variant
    if variant in _TEACHER_OF:
        teacher_name = _TEACHER_OF[variant]
        ckpt = runs / f"{teacher_name}.ckpt"
        if not ckpt.exists():
            raise InputError(f"missing teacher checkpoint {ckpt}; train {teacher_name} first")
        teacher = load_checkpoint(ckpt)
        distill = cfg.distill if pi is None else type(cfg.distill)(**{**cfg.distill.__dict__, "pi": pi})
        kwargs = {
            "teacher": teacher,
            "teacher_data": split("train", teacher_name == "teacher-external-mask"),
            "distill": distill,
        }
        train_variant = "student"

    def progress(rows):
        for r in rows:
            log.info("%s epoch %d %s accuracy %.4f loss %.4f", name, r["epoch"], r["split"], r["accuracy"], r["loss"])

    model, trace = train(model, train_ds, cfg.train, train_variant, val=val_ds, log=progress, **kwargs)
    trace = _with_test_row(model, trace, test_ds, cfg.train.epochs)
    save_checkpoint(runs / f"{name}.ckpt", model)
    write_trace(runs / f"{name}.csv", trace)
    return model, trace


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def final_accuracy(trace: list, split: str = "test") -> float:
    rows = [r for r in trace if r["split"] == split]
    if not rows:
        raise InputError(f"trace has no {split} rows")
    return rows[-1]["accuracy"]


@dataclass
class ReportTable:
    """Test accuracy per architecture; ``delta`` is computed from the baseline on demand."""

    accuracy: dict[str, float]

    def delta(self, row: str) -> float:
        return self.accuracy[row] - self.accuracy["baseline"]

    def rows(self) -> list[tuple[str, float, float]]:
        return [(r, self.accuracy[r], self.delta(r)) for r in REPORT_ROWS if r in self.accuracy]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            f.write("architecture,test_accuracy,delta_vs_baseline\n")
            for r, acc, d in self.rows():
                f.write(f"{r},{acc:.4f},{d:+.4f}\n")
        return path


def build_report(traces: dict[str, list]) -> ReportTable:
    """Report table from traces keyed by report row name; a baseline trace is required."""
    if "baseline" not in traces:
        raise InputError("report needs a baseline trace")
    unknown = set(traces) - set(REPORT_ROWS)
    if unknown:
        raise InputError(f"unknown report rows: {', '.join(sorted(unknown))}")
    return ReportTable({row: final_accuracy(t) for row, t in traces.items()})


def collect_traces(runs_dir) -> dict[str, list]:
    runs = Path(runs_dir)
    out = {}
    for row, stem in REPORT_ROWS.items():
        path = runs / f"{stem}.csv"
        if path.exists():
            out[row] = read_trace(path)
    return out


def sweep_name(pi: float) -> str:
    return f"student-external-pi{pi:g}"


def run_sweep(cfg: ExperimentConfig, files: DatasetFiles, runs_dir, masks_dir) -> list[tuple[float, float]]:
    """Distil one external-mask student per imitation value in ``cfg.sweep_pis``.

    Traces and checkpoints go to ``runs_dir/sweep``; returns ``(pi, test accuracy)`` pairs.
    """
    runs = Path(runs_dir)
    teacher = runs / "teacher-external-mask.ckpt"
    if not teacher.exists():
        raise InputError(f"missing teacher checkpoint {teacher}; train teacher-external-mask first")
    sweep_dir = runs / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "teacher-external-mask.ckpt").write_bytes(teacher.read_bytes())
    cache: dict = {}
    out = []
    for pi in cfg.sweep_pis:
        _, trace = run_variant(cfg, files, "student-external", sweep_dir, masks_dir, name=sweep_name(pi), pi=pi, data_cache=cache)
        out.append((pi, final_accuracy(trace)))
    return out


def write_sweep_csv(path, results, baseline: float | None = None) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write("pi,test_accuracy,delta_vs_baseline\n")
        for pi, acc in results:
            delta = "" if baseline is None else f"{acc - baseline:+.4f}"
            f.write(f"{pi:g},{acc:.4f},{delta}\n")
    return path


def solve_program(program_text: str, evidence_text: str, solver: SolverConfig):
    """Parse, ground and solve a rule program; returns ``(potentials, y, report)``."""
    program = parse_program(program_text)
    evidence = parse_evidence(evidence_text)
    potentials = ground(program, evidence)
    y, report = solve_map(potentials, solver)
    return potentials, y, report


def format_interpretation(potentials, y) -> str:
    """One ``atom value`` line per free atom, sorted lexicographically by atom text."""
    lines = sorted((str(potentials.atom(i)), float(y[i])) for i in range(potentials.n_free))
    return "".join(f"{atom} {value!r}\n" for atom, value in lines)


__all__ += [
    "collect_traces",
    "final_accuracy",
    "format_interpretation",
    "model_spec",
    "run_sweep",
    "solve_program",
    "sweep_name",
    "write_sweep_csv",
]
