"""Ground question mentions to scene objects with PSL and turn matches into masks.

Mentions come from inverting the question templates. The matching program
pulls ``candidate(M, O)`` up for agreeing attributes and for objects standing
in the mentioned relation to an already matched object, and pushes it down for
conflicting attributes, for inconsistent pairings and through a weak prior.
"""

from __future__ import annotations

import csv
import functools
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grounding import ground
from .inference import SolveReport, SolverConfig, solve_map
from .netpbm import write_pgm
from .questions import CLEVR_RELATIONS, TEMPLATES, QuestionRecord
from .rules import EvidenceSet, Program, parse_program
from .scenes import CLEVR_SHAPES, COLORS, MATERIALS, SIZES, Scene, spatial_relations

__all__ = [
    "MatchConfig",
    "MatchProblem",
    "MatchResult",
    "MatchingEvaluation",
    "Mention",
    "anchor_mention",
    "apply_mask",
    "build_psl_problem",
    "evaluate_matching",
    "extract_mentions",
    "mask_filename",
    "match",
    "match_question",
    "render_mask",
    "score_selections",
    "write_mask",
    "write_matching_csv",
]

# relation names that are not directional scene relations
SAME_SHAPE = "same_shape"


@dataclass(frozen=True)
class Mention:
    """A noun phrase of the question.

    ``select`` is ``"argmax"`` for referring mentions (one object) and
    ``"set"`` for mentions standing for every qualifying object.
    """

    id: str
    constraints: tuple[tuple[str, str], ...] = ()
    relations: tuple[tuple[str, str], ...] = ()
    select: str = "argmax"

    def __post_init__(self):
        if not self.constraints and not self.relations:
            raise ValueError(f"mention {self.id} needs a constraint or a relation")
        if self.select not in ("argmax", "set"):
            raise ValueError(f"unknown selection mode {self.select!r}")


@dataclass(frozen=True)
class MatchConfig:
    """Rule weights, selection threshold and mask shape.

    ``w1`` rewards each attribute an anchor mention (one without an outgoing
    relation) shares with an object. ``w2`` propagates a match along a
    relation to compatible objects. ``conflict`` must outweigh three agreeing
    attributes so that partial matches lose; ``exclusion`` penalises pairs of
    candidates whose relation fails.
    """

    w1: float = 1.0
    w2: float = 1.0
    prior: float = 0.1
    conflict: float = 4.0
    exclusion: float = 1.0
    select_threshold: float = 0.5
    decay_scale: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        for name in ("w1", "w2", "prior", "conflict", "exclusion"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.select_threshold <= 1:
            raise ValueError("select_threshold must lie in (0, 1]")
        if not self.decay_scale > 0:
            raise ValueError("decay_scale must be > 0")


# ---------------------------------------------------------------------------
# Mention extraction
# ---------------------------------------------------------------------------

_SORT_PATTERNS = [(t, re.compile("^" + re.escape(t.pattern).replace(r"\{color\}", "([a-z]+)") + "$")) for t in TEMPLATES]
_CHAIN_RE = re.compile(r"^what is the (size|color|material|shape) of (.+)\?$")
_REL_PHRASES = sorted(((v.split(), k) for k, v in CLEVR_RELATIONS.items()), key=lambda p: -len(p[0]))
_ATTR_OF = {**{v: "shape" for v in CLEVR_SHAPES}, **{v: "color" for v in COLORS}}
_ATTR_OF.update({v: "size" for v in SIZES})
_ATTR_OF.update({v: "material" for v in MATERIALS})


def _sort_mentions(template: str, color: str) -> list[Mention]:
    anchor = (("color", color),)
    if template in ("shape", "horizontal", "vertical"):
        return [Mention("x0", anchor)]
    if template in ("closest", "furthest"):
        return [Mention("x0", (), ((template, "x1"),)), Mention("x1", anchor)]
    if template == "count":
        return [Mention("x0", (), ((SAME_SHAPE, "x1"),), select="set"), Mention("x1", anchor)]
    raise KeyError(f"unknown template {template!r}")


def _chain_mentions(body: str) -> list[Mention]:
    words = body.split()
    phrases: list[tuple[list[str], str | None]] = []  # (description words, relation to next)
    current: list[str] = []
    i = 0
    while i < len(words):
        for phrase, name in _REL_PHRASES:
            if words[i : i + len(phrase)] == phrase:
                phrases.append((current, name))
                current = []
                i += len(phrase)
                break
        else:
            current.append(words[i])
            i += 1
    phrases.append((current, None))
    mentions = []
    for k, (desc, rel) in enumerate(phrases):
        if not desc or desc[0] != "the" or len(desc) < 2:
            raise ValueError(f"cannot parse referring phrase {' '.join(desc)!r}")
        constraints = []
        words_ = desc[1:-1] if desc[-1] == "object" else desc[1:]
        for w in words_:
            if w not in _ATTR_OF:
                raise ValueError(f"unknown attribute word {w!r}")
            constraints.append((_ATTR_OF[w], w))
        relations = ((rel, f"x{k + 1}"),) if rel is not None else ()
        mentions.append(Mention(f"x{k}", tuple(constraints), relations))
    return mentions


def extract_mentions(q: QuestionRecord) -> list[Mention]:
    """Invert the generating template: recover mentions from the question text.

    Raises:
        KeyError: the text matches no known template.
    """
    if q.template == "chain":
        m = _CHAIN_RE.match(q.text)
        if m is None:
            raise KeyError(f"question does not match the chain template: {q.text!r}")
        return _chain_mentions(m.group(2))
    for template, regex in _SORT_PATTERNS:
        m = regex.match(q.text)
        if m is not None and m.group(1) in COLORS:
            return _sort_mentions(template.name, m.group(1))
    raise KeyError(f"question matches no known template: {q.text!r}")


def anchor_mention(mentions: list[Mention]) -> Mention:
    """The mention with no outgoing relation (the end of the referring chain)."""
    ends = [m for m in mentions if not m.relations]
    if len(ends) != 1:
        raise ValueError("mentions do not form a chain with a single anchor")
    return ends[0]


# ---------------------------------------------------------------------------
# PSL problem
# ---------------------------------------------------------------------------


@dataclass
class MatchProblem:
    mentions: list[Mention]
    objects: list[str]
    attr_m: dict[tuple[str, str, str], float]
    attr_o: dict[tuple[str, str, str], float]
    compatible: dict[tuple[str, str], float]
    consistent: dict[tuple[str, str, str, str, str], float]
    config: MatchConfig

    def program(self) -> Program:
        c = self.config
        return _parse_program_cached(
            f"""
closed object(obj).
closed mention(men).
closed attr_o(obj, attr, val).
closed attr_m(men, attr, val).
closed compatible(men, obj).
closed anchor(men).
closed related(rel, men, men).
open consistent(rel, obj, obj, men, men).
open candidate(men, obj).
{c.w1!r}: candidate(M, O) <- object(O) & anchor(M) & attr_o(O, A, V) & attr_m(M, A, V).
{c.w2!r}: candidate(M, O) <- compatible(M, O) & candidate(M1, O1) & consistent(R, O, O1, M, M1) & related(R, M, M1) & object(O1).
{c.conflict!r}: !candidate(M, O) <- object(O) & mention(M) & attr_m(M, A, V) & !attr_o(O, A, V).
{c.exclusion!r}: !candidate(M, O) | !candidate(M1, O1) <- related(R, M, M1) & compatible(M, O) & compatible(M1, O1) & !consistent(R, O, O1, M, M1).
{c.prior!r}: !candidate(M, O) <- object(O) & mention(M).
"""
        )

    def evidence(self, negatives: bool = True) -> EvidenceSet:
        """Observed atoms; ``negatives=False`` leaves the 0.0 consistency tuples out (free)."""
        ev = EvidenceSet()
        for o in self.objects:
            ev.add("object", (o,), 1.0)
        for m in self.mentions:
            ev.add("mention", (m.id,), 1.0)
            if not m.relations:
                ev.add("anchor", (m.id,), 1.0)
            for rel, other in m.relations:
                ev.add("related", (rel, m.id, other), 1.0)
        for key, v in self.attr_o.items():
            ev.add("attr_o", key, v)
        for key, v in self.attr_m.items():
            ev.add("attr_m", key, v)
        for key, v in self.compatible.items():
            ev.add("compatible", key, v)
        for key, v in self.consistent.items():
            if negatives or v > 0.0:
                ev.add("consistent", key, v)
        return ev


# the program text only varies with the rule weights
_parse_program_cached = functools.lru_cache(maxsize=16)(parse_program)


def _holds(scene: Scene, table, relation: str, a: str, b: str) -> bool:
    if relation == SAME_SHAPE:
        return scene.object(a).shape == scene.object(b).shape
    return table.holds(relation, a, b)


def build_psl_problem(mentions: list[Mention], scene: Scene, config: MatchConfig | None = None):
    """Collect the evidence of the matching program.

    Every (relation, object pair, mention pair) tuple is emitted, with 1.0
    where the pair satisfies the relation and 0.0 otherwise.

    Returns:
        ``(problem, program, evidence)``.
    """
    if not mentions:
        raise ValueError("need at least one mention")
    config = config or MatchConfig()
    ids = {m.id for m in mentions}
    for m in mentions:
        for rel, other in m.relations:
            if other not in ids:
                raise ValueError(f"mention {m.id} relates to missing mention {other!r}")
    table = spatial_relations(scene)
    objects = [o.id for o in scene.objects]
    attr_o = {(o.id, a, v): 1.0 for o in scene.objects for a, v in sorted(o.attributes().items())}
    attr_m = {(m.id, a, v): 1.0 for m in mentions for a, v in m.constraints}
    # compatible(M, O): O satisfies every constraint of M (mentions without constraints fit all)
    compatible = {
        (m.id, o.id): 1.0 for m in mentions for o in scene.objects if all(o.attributes().get(a) == v for a, v in m.constraints)
    }
    consistent = {}
    for m in mentions:
        for rel, other in m.relations:
            for o in objects:
                for o1 in objects:
                    consistent[(rel, o, o1, m.id, other)] = 1.0 if _holds(scene, table, rel, o, o1) else 0.0
    problem = MatchProblem(list(mentions), objects, attr_m, attr_o, compatible, consistent, config)
    return problem, problem.program(), problem.evidence()


# ---------------------------------------------------------------------------
# Inference and selection
# ---------------------------------------------------------------------------


@dataclass
class MatchResult:
    mentions: list[str]
    objects: list[str]
    confidence: np.ndarray  # (n_mentions, n_objects)
    selected: dict[str, tuple[str, ...]]
    report: SolveReport

    def selected_objects(self) -> tuple[str, ...]:
        """Union of the per-mention selections, in scene order."""
        chosen = {o for ids in self.selected.values() for o in ids}
        return tuple(o for o in self.objects if o in chosen)

    def score(self, mention: str, obj: str) -> float:
        return float(self.confidence[self.mentions.index(mention), self.objects.index(obj)])


def match(problem: MatchProblem, negatives: bool = True) -> MatchResult:
    """Ground the program, run MAP inference and read off candidate confidences."""
    ps = ground(problem.program(), problem.evidence(negatives))
    y, report = solve_map(ps, problem.config.solver)
    m_ids = [m.id for m in problem.mentions]
    conf = np.zeros((len(m_ids), len(problem.objects)))
    for i, m in enumerate(m_ids):
        for j, o in enumerate(problem.objects):
            idx = ps.get_index("candidate", (m, o))
            if idx is not None:
                conf[i, j] = y[idx]
    thr = problem.config.select_threshold
    selected = {}
    for i, m in enumerate(problem.mentions):
        row = conf[i]
        if m.select == "set":
            selected[m.id] = tuple(o for o, c in zip(problem.objects, row) if c >= thr)
        else:
            j = int(np.argmax(row))
            selected[m.id] = (problem.objects[j],) if row[j] >= thr else ()
    return MatchResult(m_ids, list(problem.objects), conf, selected, report)


def match_question(q: QuestionRecord, scene: Scene, config: MatchConfig | None = None):
    """Full pipeline for one question: ``(mentions, result)``."""
    mentions = extract_mentions(q)
    problem, _, _ = build_psl_problem(mentions, scene, config)
    return mentions, match(problem)


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def render_mask(scene: Scene, selected, decay_scale: float = 1.0) -> np.ndarray:
    """Union of Gaussian heatmaps centred on the selected objects.

    Each object contributes ``exp(-|p - c|^2 / (2 sigma^2))`` with
    ``sigma = decay_scale * radius``; the union is the pointwise max.

    Raises:
        KeyError: for an id not in the scene.
    """
    s = scene.image_size
    mask = np.zeros((s, s))
    yy, xx = np.mgrid[0:s, 0:s]
    for oid in selected:
        o = scene.object(oid)
        sigma = decay_scale * o.radius
        d2 = (xx - o.center[0]) ** 2 + (yy - o.center[1]) ** 2
        np.maximum(mask, np.exp(-d2 / (2.0 * sigma * sigma)), out=mask)
    return mask


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Scale each channel by the mask, rounding half up to 8 bits."""
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=float)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {image.shape[:2]}")
    scaled = np.floor(image.astype(float) * mask[..., None] + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def mask_filename(scene_id: str, q_index: int) -> str:
    return f"{scene_id}_{q_index}.pgm"


def write_mask(path, mask: np.ndarray) -> None:
    """Quantise to 8 bits and write as binary PGM."""
    write_pgm(path, np.floor(np.clip(mask, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class MatchingEvaluation:
    precision: float
    recall: float
    rows: list[dict] = field(default_factory=list)


def score_selections(pairs) -> tuple[float, float]:
    """Micro-averaged precision and recall over ``(selected, relevant)`` pairs.

    Precision is 0 when nothing was selected at all.
    """
    tp = n_sel = n_rel = 0
    count = 0
    for selected, relevant in pairs:
        s, r = set(selected), set(relevant)
        tp += len(s & r)
        n_sel += len(s)
        n_rel += len(r)
        count += 1
    if count == 0:
        raise ValueError("empty dataset")
    precision = tp / n_sel if n_sel else 0.0
    recall = tp / n_rel if n_rel else 0.0
    return precision, recall


def evaluate_matching(items, config: MatchConfig | None = None) -> MatchingEvaluation:
    """Run the matcher on ``(question, scene)`` pairs and score it against the relevant objects."""
    rows = []
    for q, scene in items:
        mentions, result = match_question(q, scene, config)
        sel = result.selected_objects()
        conf = ";".join(f"{m}:{o}={result.score(m, o):.4f}" for m, ids in result.selected.items() for o in ids)
        rows.append(
            {
                "scene_id": q.scene_id,
                "q_index": q.q_index,
                "template": q.template,
                "selected": sel,
                "relevant": tuple(q.relevant_objects),
                "confidences": conf,
                "converged": result.report.converged,
            }
        )
    if not rows:
        raise ValueError("empty dataset")
    p, r = score_selections((row["selected"], row["relevant"]) for row in rows)
    return MatchingEvaluation(p, r, rows)


def write_matching_csv(path, evaluation: MatchingEvaluation) -> Path:
    """Per-question rows plus an ``ALL`` summary row with micro P/R."""
    path = Path(path)
    cols = ["scene_id", "q_index", "template", "selected", "relevant", "confidences", "precision", "recall"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in evaluation.rows:
            p, r = score_selections([(row["selected"], row["relevant"])])
            w.writerow(
                [row["scene_id"], row["q_index"], row["template"], " ".join(row["selected"]),
                 " ".join(row["relevant"]), row["confidences"], f"{p:.4f}", f"{r:.4f}"]
            )  # fmt: skip
        w.writerow(["ALL", "", "", "", "", "", f"{evaluation.precision:.4f}", f"{evaluation.recall:.4f}"])
    return path

