"""Deterministic generators and scorers for IQ-style synthetic tasks.

Four groups of task families probe different capabilities without leaning
on memorized knowledge: symbolic mapping (classification with freshly
invented label symbols), rule understanding (counting and string
replacement), pattern mining (induce a hidden rule from demonstrations),
and anti-interference (retrieve or track facts through distractor text).

Prompt formats are versioned by this module (format v1) and pinned by the
test oracles: each family's gold is recomputable from the prompt text
alone by an independent interpreter of the stated rule. Generation
partitions the seed space per instance (root seed, family code, index), so
instance i is byte-identical no matter how many instances are generated or
in what order.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

TASK_FAMILIES = (
    "symbolic_mapping",
    "counting",
    "replace_lowercase",
    "replace_word",
    "head_tail",
    "full_repeating",
    "head_slicing",
    "multiple_key_retrieval",
    "single_supporting_fact",
    "two_supporting_facts",
)

RULE_KINDS = ("counting", "replace_lowercase", "replace_word")
PATTERN_KINDS = ("head_tail", "full_repeating", "head_slicing")
ANTI_INTERFERENCE_KINDS = ("multiple_key_retrieval", "single_supporting_fact",
                           "two_supporting_facts")

DEFAULT_SHOTS = {
    "symbolic_mapping": 1,
    "counting": 0,
    "replace_lowercase": 4,
    "replace_word": 4,
    "head_tail": 5,
    "full_repeating": 5,
    "head_slicing": 5,
    "multiple_key_retrieval": 0,
    "single_supporting_fact": 0,
    "two_supporting_facts": 0,
}

_FAMILY_CODE = {name: i for i, name in enumerate(TASK_FAMILIES)}

_SYMBOL_ALPHABET = string.ascii_letters + "!@#$%^&*+=~?"
_ANIMALS = ("cat", "dog", "bird", "fox", "cow", "horse", "rabbit", "owl")
_PLACES = ("garden", "kitchen", "office", "bathroom", "hallway", "bedroom",
           "cellar", "balcony")
_NAMES = ("Mary", "John", "Sandra", "Daniel", "Emma", "Victor")
_OBJECTS = ("ball", "apple", "book", "bottle", "key")
_MOVE_VERBS = ("went to", "moved to", "travelled to")
_WORDS = ("apple", "mango", "pear", "stone", "river", "cloud", "table",
          "lamp", "violet", "window", "paper", "candle", "basket", "road",
          "clock", "boat")
_ADJECTIVES = ("gray", "quiet", "bright", "old", "narrow", "round")
_DISTRACTOR_NOUNS = ("bird", "road", "window", "clock", "boat", "lantern")
_DISTRACTOR_VERBS = ("faced", "circled", "followed", "passed")


@dataclass(frozen=True)
class TaskInstance:
    family: str
    shots: int
    prompt: str
    gold: str
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in TASK_FAMILIES:
            raise ConfigError(f"unknown task family: {self.family!r}")
        if self.shots < 0:
            raise ConfigError("shots must be >= 0")


def _rng(seed: int, family: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, _FAMILY_CODE[family], index])


def _pick(rng, pool):
    return pool[int(rng.integers(len(pool)))]


def _pick_other(rng, pool, taken):
    value = _pick(rng, pool)
    while value == taken:
        value = _pick(rng, pool)
    return value


def _syllable(rng) -> str:
    return _pick(rng, "bcdfgklmnprstvz") + _pick(rng, "aeiou")


def _symbol(rng) -> str:
    length = int(rng.integers(3, 6))
    return "".join(_pick(rng, _SYMBOL_ALPHABET) for _ in range(length))


def _distractor_sentence(rng) -> str:
    return (f"The {_pick(rng, _ADJECTIVES)} {_pick(rng, _DISTRACTOR_NOUNS)} "
            f"{_pick(rng, _DISTRACTOR_VERBS)} the "
            f"{_pick(rng, _DISTRACTOR_NOUNS)}.")


# ---------------------------------------------------------------------------
# Symbolic mapping.


def _symbolic_pair(rng, truth: bool):
    animal = _pick(rng, _ANIMALS)
    place = _pick(rng, _PLACES)
    hyp_place = place if truth else _pick_other(rng, _PLACES, place)
    premise = f"The {animal} is in the {place}."
    hypothesis = f"The {animal} is in the {hyp_place}."
    return premise, hypothesis


def gen_symbolic_mapping(n: int, shots: int, seed: int) -> list:
    """Entailment-style pairs labeled with fresh random symbols.

    Each instance invents two distinct symbol strings (length 3 to 5) for
    yes and no, shows `shots` solved demonstrations per label, and asks for
    the label of a final pair. The labels carry no prior meaning, so only
    the in-context mapping determines the answer.
    """
    if n < 1 or shots < 1:
        raise ConfigError("n and shots must be >= 1")
    instances = []
    for i in range(n):
        rng = _rng(seed, "symbolic_mapping", i)
        sym_yes = _symbol(rng)
        sym_no = _symbol(rng)
        while sym_no == sym_yes:
            sym_no = _symbol(rng)
        demos = [True] * shots + [False] * shots
        order = rng.permutation(len(demos))
        lines = ["Decide whether the hypothesis follows from the premise. "
                 "Answer with the symbol for yes or no."]
        for j in order:
            truth = demos[int(j)]
            premise, hypothesis = _symbolic_pair(rng, truth)
            label = sym_yes if truth else sym_no
            lines.append(f"Premise: {premise} Hypothesis: {hypothesis} "
                         f"Answer: {label}")
        query_truth = bool(rng.integers(2))
        premise, hypothesis = _symbolic_pair(rng, query_truth)
        lines.append(f"Premise: {premise} Hypothesis: {hypothesis} Answer:")
        instances.append(TaskInstance(
            family="symbolic_mapping", shots=shots, prompt="\n".join(lines),
            gold=sym_yes if query_truth else sym_no, seed=seed,
            metadata={"index": i, "symbol_yes": sym_yes,
                      "symbol_no": sym_no}))
    return instances


# ---------------------------------------------------------------------------
# Rule understanding.


def _gen_counting(n, shots, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "counting", i)
        lines = ["Count how many times the word is repeated."]
        for _ in range(shots):
            word = _pick(rng, _WORDS)
            k = int(rng.integers(3, 16))
            lines.append("Words: " + " ".join([word] * k))
            lines.append(f"Answer: {k}")
        word = _pick(rng, _WORDS)
        k = int(rng.integers(3, 16))
        lines.append("Words: " + " ".join([word] * k))
        lines.append("Answer:")
        instances.append(TaskInstance(
            family="counting", shots=shots, prompt="\n".join(lines),
            gold=str(k), seed=seed,
            metadata={"index": i, "k": k, "word": word}))
    return instances


def _mixed_case(rng, word: str) -> str:
    return "".join(c.upper() if rng.integers(2) else c for c in word)


def _gen_replace_lowercase(n, shots, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "replace_lowercase", i)
        lines = ["Rewrite the text in lowercase."]

        def scrambled():
            words = [_pick(rng, _WORDS) for _ in range(int(rng.integers(2, 5)))]
            text = " ".join(_mixed_case(rng, w) for w in words)
            while text == text.lower():  # force at least one uppercase char
                text = " ".join(_mixed_case(rng, w) for w in words)
            return text

        for _ in range(shots):
            demo = scrambled()
            lines.append(f"Input: {demo}")
            lines.append(f"Output: {demo.lower()}")
        query = scrambled()
        lines.append(f"Input: {query}")
        lines.append("Output:")
        instances.append(TaskInstance(
            family="replace_lowercase", shots=shots, prompt="\n".join(lines),
            gold=query.lower(), seed=seed, metadata={"index": i}))
    return instances


def _replacement_sentence(rng, src: str, dst: str) -> str:
    # Whole-token substitution; keep dst out of the input so the rewrite
    # is unambiguous.
    length = int(rng.integers(5, 9))
    words = []
    for _ in range(length):
        w = _pick(rng, _WORDS)
        while w in (src, dst):
            w = _pick(rng, _WORDS)
        words.append(w)
    n_src = int(rng.integers(1, 4))
    positions = rng.choice(length, size=min(n_src, length), replace=False)
    for p in positions:
        words[int(p)] = src
    return " ".join(words)


def _apply_replacement(text: str, src: str, dst: str) -> str:
    return " ".join(dst if w == src else w for w in text.split())


def _gen_replace_word(n, shots, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "replace_word", i)
        src = _pick(rng, _WORDS)
        dst = _pick_other(rng, _WORDS, src)
        lines = [f'Replace every "{src}" with "{dst}".']
        for _ in range(shots):
            demo = _replacement_sentence(rng, src, dst)
            lines.append(f"Input: {demo}")
            lines.append(f"Output: {_apply_replacement(demo, src, dst)}")
        query = _replacement_sentence(rng, src, dst)
        lines.append(f"Input: {query}")
        lines.append("Output:")
        instances.append(TaskInstance(
            family="replace_word", shots=shots, prompt="\n".join(lines),
            gold=_apply_replacement(query, src, dst), seed=seed,
            metadata={"index": i, "source": src, "target": dst}))
    return instances


def gen_rule_understanding(kind: str, n: int, shots=None, seed: int = 0) -> list:
    """Counting (0-shot by default) and string replacement (4-shot)."""
    if kind not in RULE_KINDS:
        raise ConfigError(f"unknown rule kind: {kind!r}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if shots is None:
        shots = DEFAULT_SHOTS[kind]
    if shots < 0:
        raise ConfigError("shots must be >= 0")
    if kind == "counting":
        return _gen_counting(n, shots, seed)
    if shots < 1:
        raise ConfigError("replacement tasks need at least one shot")
    if kind == "replace_lowercase":
        return _gen_replace_lowercase(n, shots, seed)
    return _gen_replace_word(n, shots, seed)


# ---------------------------------------------------------------------------
# Pattern mining.


def _token_list(rng, lo: int, hi: int) -> list:
    return [_syllable(rng) for _ in range(int(rng.integers(lo, hi + 1)))]


def _gen_head_tail(n, shots, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "head_tail", i)
        lines = ["Apply the hidden rule."]
        for _ in range(shots):
            tokens = _token_list(rng, 3, 8)
            lines.append("Input: " + " ".join(tokens))
            lines.append(f"Output: {tokens[0]} {tokens[-1]}")
        tokens = _token_list(rng, 3, 8)
        lines.append("Input: " + " ".join(tokens))
        lines.append("Output:")
        instances.append(TaskInstance(
            family="head_tail", shots=shots, prompt="\n".join(lines),
            gold=f"{tokens[0]} {tokens[-1]}", seed=seed,
            metadata={"index": i}))
    return instances


def _gen_full_repeating(n, shots, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "full_repeating", i)
        lines = ["Apply the hidden rule."]
        for _ in range(shots):
            tokens = _token_list(rng, 2, 5)
            lines.append("Input: " + " ".join(tokens))
            lines.append("Output: " + " ".join(tokens + tokens))
        tokens = _token_list(rng, 2, 5)
        lines.append("Input: " + " ".join(tokens))
        lines.append("Output:")
        instances.append(TaskInstance(
            family="full_repeating", shots=shots, prompt="\n".join(lines),
            gold=" ".join(tokens + tokens), seed=seed,
            metadata={"index": i}))
    return instances


def _letter_string(rng, length: int) -> str:
    return "".join(_pick(rng, string.ascii_lowercase) for _ in range(length))


def _gen_head_slicing(n, shots, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "head_slicing", i)
        k = int(rng.integers(2, 7))  # fixed within the instance
        lines = ["Apply the hidden rule."]
        for _ in range(shots):
            text = _letter_string(rng, k + int(rng.integers(1, 7)))
            lines.append(f"Input: {text}")
            lines.append(f"Output: {text[:k]}")
        text = _letter_string(rng, k + int(rng.integers(1, 7)))
        lines.append(f"Input: {text}")
        lines.append("Output:")
        instances.append(TaskInstance(
            family="head_slicing", shots=shots, prompt="\n".join(lines),
            gold=text[:k], seed=seed, metadata={"index": i, "k": k}))
    return instances


def gen_pattern_mining(kind: str, n: int, shots: int = 5, seed: int = 0) -> list:
    """Induce a hidden input-to-output rule from solved demonstrations."""
    if kind not in PATTERN_KINDS:
        raise ConfigError(f"unknown pattern kind: {kind!r}")
    if n < 1 or shots < 1:
        raise ConfigError("n and shots must be >= 1")
    if kind == "head_tail":
        return _gen_head_tail(n, shots, seed)
    if kind == "full_repeating":
        return _gen_full_repeating(n, shots, seed)
    return _gen_head_slicing(n, shots, seed)


# ---------------------------------------------------------------------------
# Anti-interference.


def _gen_multiple_key_retrieval(n, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "multiple_key_retrieval", i)
        n_keys = int(rng.integers(2, 6))
        keys = []
        while len(keys) < n_keys:
            key = _syllable(rng) + _syllable(rng)
            if key not in keys:
                keys.append(key)
        values = [str(int(rng.integers(1, 1000))) for _ in keys]
        lines = []
        for key, value in zip(keys, values):
            lines.append(f'Remember: the key "{key}" maps to "{value}".')
            for _ in range(int(rng.integers(0, 3))):
                lines.append(_distractor_sentence(rng))
        pick = int(rng.integers(n_keys))
        lines.append(f'Question: What does the key "{keys[pick]}" map to?')
        lines.append("Answer:")
        instances.append(TaskInstance(
            family="multiple_key_retrieval", shots=0,
            prompt="\n".join(lines), gold=values[pick], seed=seed,
            metadata={"index": i, "n_keys": n_keys}))
    return instances


def _gen_single_supporting_fact(n, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "single_supporting_fact", i)
        n_entities = int(rng.integers(2, 5))
        entities = list(rng.permutation(_NAMES)[:n_entities])
        target = _pick(rng, entities)
        n_statements = int(rng.integers(3, 9))
        movers = [_pick(rng, entities) for _ in range(n_statements)]
        if target not in movers:
            movers[int(rng.integers(n_statements))] = target
        lines = []
        last_place = {}
        for who in movers:
            place = _pick(rng, _PLACES)
            lines.append(f"{who} {_pick(rng, _MOVE_VERBS)} the {place}.")
            last_place[who] = place
        lines.append(f"Question: Where is {target}?")
        lines.append("Answer:")
        instances.append(TaskInstance(
            family="single_supporting_fact", shots=0,
            prompt="\n".join(lines), gold=last_place[target], seed=seed,
            metadata={"index": i, "target": target}))
    return instances


def _gen_two_supporting_facts(n, seed):
    instances = []
    for i in range(n):
        rng = _rng(seed, "two_supporting_facts", i)
        n_entities = int(rng.integers(2, 5))
        entities = list(rng.permutation(_NAMES)[:n_entities])
        holder = _pick(rng, entities)
        obj = _pick(rng, _OBJECTS)
        # The holder moves at least once; the object follows the holder,
        # so the answer composes "who took it" with "where they ended up".
        events = [("take", holder)]
        events.append(("move", holder))
        for _ in range(int(rng.integers(2, 6))):
            events.append(("move", _pick(rng, entities)))
        order = rng.permutation(len(events))
        lines = []
        last_place = {}
        for j in order:
            kind, who = events[int(j)]
            if kind == "take":
                lines.append(f"{who} took the {obj}.")
            else:
                place = _pick(rng, _PLACES)
                lines.append(f"{who} {_pick(rng, _MOVE_VERBS)} the {place}.")
                last_place[who] = place
        lines.append(f"Question: Where is the {obj}?")
        lines.append("Answer:")
        instances.append(TaskInstance(
            family="two_supporting_facts", shots=0, prompt="\n".join(lines),
            gold=last_place[holder], seed=seed,
            metadata={"index": i, "holder": holder, "object": obj}))
    return instances


def gen_anti_interference(kind: str, n: int, seed: int = 0) -> list:
    """Retrieve or track facts through interleaved distractor text."""
    if kind not in ANTI_INTERFERENCE_KINDS:
        raise ConfigError(f"unknown anti-interference kind: {kind!r}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if kind == "multiple_key_retrieval":
        return _gen_multiple_key_retrieval(n, seed)
    if kind == "single_supporting_fact":
        return _gen_single_supporting_fact(n, seed)
    return _gen_two_supporting_facts(n, seed)


def generate_family(family: str, n: int, seed: int, shots=None) -> list:
    """Uniform dispatch over all ten families."""
    if family == "symbolic_mapping":
        return gen_symbolic_mapping(
            n, DEFAULT_SHOTS[family] if shots is None else shots, seed)
    if family in RULE_KINDS:
        return gen_rule_understanding(family, n, shots=shots, seed=seed)
    if family in PATTERN_KINDS:
        return gen_pattern_mining(
            family, n,
            shots=DEFAULT_SHOTS[family] if shots is None else shots,
            seed=seed)
    if family in ANTI_INTERFERENCE_KINDS:
        if shots not in (None, 0):
            raise ConfigError("anti-interference tasks are zero-shot")
        return gen_anti_interference(family, n, seed=seed)
    raise ConfigError(f"unknown task family: {family!r}")


# ---------------------------------------------------------------------------
# Scoring.


def normalize_answer(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class EvalReport:
    matching: str
    families: tuple        # family names in first-seen order
    correct: dict          # family -> correct count
    total: dict            # family -> instance count
    verdicts: tuple        # per-instance booleans, input order

    def accuracy(self, family=None) -> float:
        if family is not None:
            if family not in self.total:
                raise ConfigError(f"no instances for family {family!r}")
            return self.correct[family] / self.total[family]
        return sum(self.correct.values()) / sum(self.total.values())

    def describe(self) -> str:
        lines = [f"{'family':<24} {'correct':>8} {'total':>6} {'accuracy':>9}"]
        for fam in self.families:
            lines.append(f"{fam:<24} {self.correct[fam]:>8} "
                         f"{self.total[fam]:>6} {self.accuracy(fam):>9.3f}")
        lines.append(f"{'overall':<24} {sum(self.correct.values()):>8} "
                     f"{sum(self.total.values()):>6} {self.accuracy():>9.3f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        rows = ["family,correct,total,accuracy"]
        for fam in self.families:
            rows.append(f"{fam},{self.correct[fam]},{self.total[fam]},"
                        f"{self.accuracy(fam):.6f}")
        rows.append(f"overall,{sum(self.correct.values())},"
                    f"{sum(self.total.values())},{self.accuracy():.6f}")
        return "\n".join(rows) + "\n"


def score(instances, outputs, matching: str = "exact") -> EvalReport:
    """Compare model outputs with golds, exactly or case/space-insensitively."""
    if matching not in ("exact", "normalized"):
        raise ConfigError(f"unknown matching mode: {matching!r}")
    instances = list(instances)
    outputs = list(outputs)
    if len(instances) != len(outputs):
        raise ConfigError(f"got {len(outputs)} outputs for "
                          f"{len(instances)} instances")
    if not instances:
        raise ConfigError("nothing to score")
    families = []
    correct = {}
    total = {}
    verdicts = []
    for inst, out in zip(instances, outputs):
        if inst.family not in total:
            families.append(inst.family)
            total[inst.family] = 0
            correct[inst.family] = 0
        if matching == "exact":
            ok = out == inst.gold
        else:
            ok = normalize_answer(out) == normalize_answer(inst.gold)
        total[inst.family] += 1
        correct[inst.family] += int(ok)
        verdicts.append(bool(ok))
    return EvalReport(matching=matching, families=tuple(families),
                      correct=correct, total=total, verdicts=tuple(verdicts))


# ---------------------------------------------------------------------------
# Serialization: one JSON record per line.


def write_instances(path, instances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(
                {"family": inst.family, "shots": inst.shots,
                 "prompt": inst.prompt, "gold": inst.gold,
                 "seed": inst.seed, "metadata": inst.metadata},
                ensure_ascii=False, sort_keys=True) + "\n")


def read_instances(path) -> list:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                instances.append(TaskInstance(
                    family=rec["family"], shots=rec["shots"],
                    prompt=rec["prompt"], gold=rec["gold"],
                    seed=rec["seed"], metadata=rec.get("metadata", {})))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ConfigError(
                    f"{path}: bad instance record on line {line_no}: {exc}")
    return instances
