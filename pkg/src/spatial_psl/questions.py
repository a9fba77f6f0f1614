"""Templated questions with answers, relevant-object traces and encodings.

Sort-of-Clevr uses six question families, three non-relational and three
relational, each anchored on one of the six (unique) object colors. CLEVR-lite
questions are 2-3 mention referring chains such as
``what is the color of the sphere left of the red cube?``.
"""

from __future__ import annotations

import itertools
import json
import random
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .scenes import (
    CLEVR_LITE,
    CLEVR_SHAPES,
    COLORS,
    MATERIALS,
    SIZES,
    SORT_OF_CLEVR,
    Scene,
    spatial_relations,
)

__all__ = [
    "ANSWERS",
    "CLEVR_ANSWERS",
    "CLEVR_VOCAB",
    "QUESTION_SCHEMA",
    "SORT_VOCAB",
    "TEMPLATES",
    "QuestionGenerationError",
    "QuestionRecord",
    "Vocabulary",
    "encode_question",
    "evaluate",
    "generate_clevr_lite_questions",
    "generate_questions",
    "onehot_index",
    "read_questions",
    "tokenize",
    "write_questions",
]

QUESTION_SCHEMA = "spatial-psl/question/1"

# answer class ids are positions in this tuple
ANSWERS = ("circle", "rectangle", "1", "2", "3", "4", "5", "6", "left", "right", "top", "bottom")
CLEVR_ANSWERS = CLEVR_SHAPES + COLORS + SIZES + MATERIALS


@dataclass(frozen=True)
class Template:
    id: int
    name: str
    kind: str
    pattern: str


TEMPLATES = (
    Template(0, "shape", "non-relational", "what is the shape of the {color} object?"),
    Template(1, "horizontal", "non-relational", "is the {color} object on the left or right of the image?"),
    Template(2, "vertical", "non-relational", "is the {color} object on the top or bottom of the image?"),
    Template(3, "closest", "relational", "what is the shape of the object closest to the {color} object?"),
    Template(4, "furthest", "relational", "what is the shape of the object furthest from the {color} object?"),
    Template(5, "count", "relational", "how many objects have the same shape as the {color} object?"),
)
_BY_NAME = {t.name: t for t in TEMPLATES}
NON_RELATIONAL = tuple(t for t in TEMPLATES if t.kind == "non-relational")
RELATIONAL = tuple(t for t in TEMPLATES if t.kind == "relational")

# closed token vocabularies; index 0 is reserved for padding
SORT_VOCAB = (
    "<pad>", "?", "as", "blue", "bottom", "closest", "furthest", "from", "gray", "green", "have",
    "how", "image", "is", "left", "many", "object", "objects", "of", "on", "or", "orange", "red", "right",
    "same", "shape", "the", "to", "top", "what", "yellow",
)  # fmt: skip
CLEVR_VOCAB = (
    "<pad>", "?", "behind", "blue", "color", "cube", "cylinder", "front", "gray", "green", "in", "is",
    "large", "left", "material", "matte", "metal", "object", "of", "orange", "red", "right", "shape",
    "size", "small", "sphere", "the", "what", "yellow",
)  # fmt: skip

CLEVR_RELATIONS = {"left": "left of", "right": "right of", "front": "in front of", "behind": "behind"}
CLEVR_ATTRS = ("size", "color", "material", "shape")  # surface order inside a description


class QuestionGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuestionRecord:
    scene_id: str
    q_index: int
    text: str
    kind: str
    template: str
    slots: dict
    answer: str
    relevant_objects: tuple[str, ...]
    onehot: tuple[int, ...] | None = None
    mode: str = SORT_OF_CLEVR

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relevant_objects"] = list(self.relevant_objects)
        d["onehot"] = None if self.onehot is None else list(self.onehot)
        d["schema"] = QUESTION_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: dict) -> QuestionRecord:
        if d.get("schema") != QUESTION_SCHEMA:
            raise ValueError(f"unsupported question schema {d.get('schema')!r}, expected {QUESTION_SCHEMA!r}")
        return cls(
            scene_id=d["scene_id"],
            q_index=int(d["q_index"]),
            text=d["text"],
            kind=d["kind"],
            template=d["template"],
            slots=d["slots"],
            answer=d["answer"],
            relevant_objects=tuple(d["relevant_objects"]),
            onehot=None if d.get("onehot") is None else tuple(d["onehot"]),
            mode=d.get("mode", SORT_OF_CLEVR),
        )


# ---------------------------------------------------------------------------
# Functional evaluation
# ---------------------------------------------------------------------------


def _matches(obj, attrs: dict) -> bool:
    own = obj.attributes()
    return all(own.get(k) == v for k, v in attrs.items())


def _resolve_chain(scene: Scene, chain: list[dict], relations=None) -> list[str] | None:
    """Resolve a referring chain from its last mention; None if any hop is not unique."""
    rel = relations or spatial_relations(scene)
    referents: list[str] = []
    ref = None
    for hop in reversed(chain):
        cands = [o.id for o in scene.objects if _matches(o, hop["attrs"])]
        if hop.get("relation") is not None:
            cands = [c for c in cands if rel.holds(hop["relation"], c, ref)]
        if len(cands) != 1:
            return None
        ref = cands[0]
        referents.append(ref)
    return referents[::-1]


def evaluate(scene: Scene, template: str, slots: dict) -> tuple[str, tuple[str, ...]]:
    """Run a question's functional program.

    Returns ``(answer, relevant_objects)`` where the relevant objects are the
    ones the program touches, sorted by scene order.
    """
    order = {o.id: i for i, o in enumerate(scene.objects)}
    if template == "chain":
        refs = _resolve_chain(scene, slots["chain"])
        if refs is None:
            raise ValueError("referring chain has no unique referent")
        target = scene.object(refs[0])
        return target.attributes()[slots["query"]], tuple(sorted(set(refs), key=order.get))

    anchor = scene.by_color(slots["color"])
    half = scene.image_size / 2
    if template == "shape":
        return anchor.shape, (anchor.id,)
    if template == "horizontal":
        return ("left" if anchor.center[0] < half else "right"), (anchor.id,)
    if template == "vertical":
        return ("top" if anchor.center[1] < half else "bottom"), (anchor.id,)
    rel = spatial_relations(scene)
    if template in ("closest", "furthest"):
        other = scene.object(rel.closest(anchor.id) if template == "closest" else rel.furthest(anchor.id))
        return other.shape, tuple(sorted({anchor.id, other.id}, key=order.get))
    if template == "count":
        same = [o.id for o in scene.objects if o.shape == anchor.shape]
        return str(len(same)), tuple(same)
    raise KeyError(f"unknown template {template!r}")


def onehot_index(color: str, template: str) -> int:
    return COLORS.index(color) * len(TEMPLATES) + _BY_NAME[template].id


def _ranking_tied(scene: Scene, color: str, template: str) -> bool:
    if template not in ("closest", "furthest"):
        return False
    rel = spatial_relations(scene)
    i = [o.id for o in scene.objects].index(scene.by_color(color).id)
    d = sorted(rel.distance[i, j] for j in range(len(scene.objects)) if j != i)
    pair = d[:2] if template == "closest" else d[-2:]
    return pair[0] == pair[1]


def generate_questions(scene: Scene, seed: int, k: int = 10) -> list[QuestionRecord]:
    """``k`` Sort-of-Clevr questions alternating non-relational / relational."""
    if scene.mode != SORT_OF_CLEVR:
        raise ValueError("generate_questions needs a sort-of-clevr scene")
    if sorted(o.color for o in scene.objects) != sorted(COLORS):
        raise ValueError("scene lacks the six uniquely colored objects")
    rng = random.Random(seed)
    out = []
    for q in range(k):
        family = NON_RELATIONAL if q % 2 == 0 else RELATIONAL
        for _ in range(100):
            template = rng.choice(family)
            color = rng.choice(COLORS)
            if not _ranking_tied(scene, color, template.name):
                break
        else:
            raise QuestionGenerationError(f"scene {scene.scene_id}: only tied rankings available")
        slots = {"color": color}
        answer, relevant = evaluate(scene, template.name, slots)
        onehot = [0] * (len(COLORS) * len(TEMPLATES))
        onehot[onehot_index(color, template.name)] = 1
        out.append(
            QuestionRecord(
                scene.scene_id,
                q,
                template.pattern.format(color=color),
                template.kind,
                template.name,
                slots,
                answer,
                relevant,
                tuple(onehot),
            )
        )
    return out


# ---------------------------------------------------------------------------
# CLEVR-lite referring chains
# ---------------------------------------------------------------------------


def describe(attrs: dict) -> str:
    words = [attrs[a] for a in ("size", "color", "material") if a in attrs]
    words.append(attrs.get("shape", "object"))
    return " ".join(words)


def chain_text(chain: list[dict]) -> str:
    parts = []
    prev_rel = None
    for hop in chain:
        if parts:
            parts.append(CLEVR_RELATIONS[prev_rel])
        parts.append("the " + describe(hop["attrs"]))
        prev_rel = hop.get("relation")
    return " ".join(parts)


def _tied(scene: Scene, relation: str, ref: str) -> bool:
    axis = 0 if relation in ("left", "right") else 1
    c = scene.object(ref).center[axis]
    return sum(1 for o in scene.objects if o.center[axis] == c) > 1


def _unique_desc(rng, obj, pool, allowed) -> dict | None:
    """Random smallest attribute subset of ``obj`` that singles it out of ``pool``."""
    own = obj.attributes()
    for size in range(1, len(allowed) + 1):
        subsets = list(itertools.combinations(allowed, size))
        rng.shuffle(subsets)
        for sub in subsets:
            attrs = {a: own[a] for a in sub}
            if [o.id for o in pool if _matches(o, attrs)] == [obj.id]:
                return attrs
    return None


def _make_chain(rng, scene: Scene, hops: int, query: str, relations):
    anchor = rng.choice(scene.objects)
    attrs = _unique_desc(rng, anchor, scene.objects, CLEVR_ATTRS)
    if attrs is None:
        return None
    chain = [{"attrs": attrs, "relation": None}]
    used = {anchor.id}
    ref = anchor
    for h in range(hops - 1):
        relation = rng.choice(tuple(CLEVR_RELATIONS))
        if _tied(scene, relation, ref.id):
            return None
        pool = [o for o in scene.objects if relations.holds(relation, o.id, ref.id)]
        if not pool:
            return None
        target = rng.choice([o for o in pool if o.id not in used] or [None])
        if target is None:
            return None
        used.add(target.id)
        last = h == hops - 2
        allowed = tuple(a for a in CLEVR_ATTRS if not (last and a == query))
        attrs = _unique_desc(rng, target, pool, allowed)
        if attrs is None:
            return None
        chain.insert(0, {"attrs": attrs, "relation": relation})
        ref = target
    return chain


def generate_clevr_lite_questions(scene: Scene, seed: int, k: int = 10, max_retries: int = 200):
    """Referring-chain questions with 2-3 mentions and a unique referent per hop."""
    if scene.mode != CLEVR_LITE:
        raise ValueError("generate_clevr_lite_questions needs a clevr-lite scene")
    rng = random.Random(seed)
    relations = spatial_relations(scene)
    out = []
    for q in range(k):
        for _ in range(max_retries):
            query = rng.choice(CLEVR_ATTRS)
            chain = _make_chain(rng, scene, rng.choice((2, 3)), query, relations)
            if chain is not None and _resolve_chain(scene, chain, relations) is not None:
                break
        else:
            raise QuestionGenerationError(f"scene {scene.scene_id}: no uniquely resolvable chain found")
        slots = {"query": query, "chain": chain}
        answer, relevant = evaluate(scene, "chain", slots)
        text = f"what is the {query} of {chain_text(chain)}?"
        out.append(QuestionRecord(scene.scene_id, q, text, "relational", "chain", slots, answer, relevant, None, CLEVR_LITE))
    return out


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+|\?")


def tokenize(text: str) -> list[str]:
    tokens = _TOKEN_RE.findall(text)
    if " ".join(tokens).replace(" ?", "?") != text:
        raise ValueError(f"text is not in canonical template form: {text!r}")
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids).replace(" ?", "?")

    @classmethod
    def for_mode(cls, mode: str) -> Vocabulary:
        return cls(SORT_VOCAB if mode == SORT_OF_CLEVR else CLEVR_VOCAB)


def encode_question(text: str, vocab: Vocabulary) -> tuple[list[int], np.ndarray]:
    """Token ids and the bag-of-words vector (counts normalised to sum 1).

    Raises:
        KeyError: for a token outside the closed vocabulary.
    """
    ids = []
    for tok in tokenize(text):
        if tok not in vocab.index:
            raise KeyError(f"out-of-vocabulary token {tok!r}")
        ids.append(vocab.index[tok])
    bow = np.zeros(len(vocab))
    np.add.at(bow, ids, 1.0)
    if ids:
        bow /= len(ids)
    return ids, bow


def write_questions(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_questions(path) -> list[QuestionRecord]:
    with open(path, encoding="utf-8") as f:
        return [QuestionRecord.from_dict(json.loads(line)) for line in f if line.strip()]
