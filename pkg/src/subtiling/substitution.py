"""Substitution rules on finite alphabets and the words they generate.

Letters are stored as integer ids (position in the alphabet); display
strings are single codepoints.  Words are numpy uint8 arrays so that
subword search can go through ``bytes.find`` and population counts
through ``bincount``.
"""
from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

__all__ = [
    "ConfigError",
    "LengthCapError",
    "NotInLanguageError",
    "Substitution",
    "TwoSidedWord",
    "AccordionForm",
    "parse_substitution",
    "load_substitution",
    "word_from_str",
    "word_to_str",
    "apply",
    "iterate",
    "power",
    "population_vector",
    "substitution_matrix",
    "in_language",
    "fixed_point_seeds",
    "orbit_generate",
    "accordion_decompose",
]

LENGTH_CAP = 10**8


class ConfigError(ValueError):
    """Raised when a substitution config is malformed."""


class LengthCapError(RuntimeError):
    """Raised when an iterated word would exceed the length cap."""


class NotInLanguageError(ValueError):
    """Raised when a word admits no supertile witness within the depth bound."""


# ---- substitution type and parsing ----

@dataclass(frozen=True, eq=False)
class Substitution:
    letters: tuple[str, ...]
    dim: int
    images: tuple[np.ndarray, ...]          # dim=1: 1-d uint8 arrays
    grids: tuple[np.ndarray, ...] = ()      # dim=2: q x q uint8 arrays, rows top to bottom
    q: int = 0
    source: str = ""

    @property
    def n_letters(self) -> int:
        return len(self.letters)

    def letter_id(self, s: str) -> int:
        try:
            return self.letters.index(s)
        except ValueError:
            raise ConfigError(f"unknown letter {s!r}") from None

    def image(self, a: int) -> np.ndarray:
        return self.images[a]

    def grid(self, a: int) -> np.ndarray:
        return self.grids[a]

    @property
    def rule_lengths(self) -> np.ndarray:
        return np.array([len(im) for im in self.images], dtype=np.int64)

    @property
    def max_rule_len(self) -> int:
        if self.dim == 1:
            return int(self.rule_lengths.max())
        return self.q * self.q


def _as_word(ids: Iterable[int]) -> np.ndarray:
    w = np.asarray(list(ids), dtype=np.uint8)
    w.flags.writeable = False
    return w


def parse_substitution(text: str, source: str = "<string>") -> Substitution:
    """Parse a JSON substitution config.

    Schema: ``{"alphabet": [letter...], "dim": 1|2, "rules": {letter: image}}``
    where an image is a string (dim 1) or an array of q strings of length q,
    rows listed top to bottom (dim 2).  ``dim`` defaults to 1.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{source}: JSON syntax error at line {e.lineno} column {e.colno}: {e.msg}"
        ) from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be an object")
    if "alphabet" not in doc or "rules" not in doc:
        raise ConfigError(f"{source}: required keys: alphabet, rules")
    alphabet = doc["alphabet"]
    if (not isinstance(alphabet, list) or not alphabet
            or not all(isinstance(a, str) for a in alphabet)):
        raise ConfigError(f"{source}: alphabet must be a non-empty list of strings")
    for a in alphabet:
        if len(a) != 1:
            raise ConfigError(f"{source}: letters must be single codepoints, got {a!r}")
    if len(set(alphabet)) != len(alphabet):
        raise ConfigError(f"{source}: duplicate letters in alphabet")
    if len(alphabet) > 64:
        raise ConfigError(f"{source}: at most 64 letters supported")
    dim = doc.get("dim", 1)
    if dim not in (1, 2):
        raise ConfigError(f"{source}: dim must be 1 or 2, got {dim!r}")
    rules = doc["rules"]
    if not isinstance(rules, dict):
        raise ConfigError(f"{source}: rules must be an object")
    missing = [a for a in alphabet if a not in rules]
    if missing:
        raise ConfigError(f"{source}: missing rules for letters {missing}")
    extra = [a for a in rules if a not in alphabet]
    if extra:
        raise ConfigError(f"{source}: rules for letters not in alphabet: {extra}")
    index = {a: i for i, a in enumerate(alphabet)}

    def encode(s: str, where: str) -> list[int]:
        ids = []
        for ch in s:
            if ch not in index:
                raise ConfigError(f"{source}: {where}: letter {ch!r} not in alphabet")
            ids.append(index[ch])
        return ids

    if dim == 1:
        images = []
        for a in alphabet:
            img = rules[a]
            if not isinstance(img, str) or not img:
                raise ConfigError(f"{source}: rule for {a!r} must be a non-empty string")
            images.append(_as_word(encode(img, f"rule for {a!r}")))
        return Substitution(tuple(alphabet), 1, tuple(images), source=source)

    # dim == 2: every rule is a q x q grid, same q for all letters
    q = None
    grids = []
    images = []
    for a in alphabet:
        rows = rules[a]
        if not isinstance(rows, list) or not rows or not all(isinstance(r, str) for r in rows):
            raise ConfigError(f"{source}: rule for {a!r} must be a list of strings")
        if q is None:
            q = len(rows)
            if q < 2:
                raise ConfigError(f"{source}: grid side must be at least 2")
        if len(rows) != q or any(len(r) != q for r in rows):
            raise ConfigError(f"{source}: rule for {a!r} must be {q} rows of length {q}")
        g = np.array([encode(r, f"rule for {a!r}") for r in rows], dtype=np.uint8)
        g.flags.writeable = False
        grids.append(g)
        images.append(_as_word(g.ravel()))
    return Substitution(tuple(alphabet), 2, tuple(images), tuple(grids), q=q, source=source)


def load_substitution(path: str) -> Substitution:
    with open(path, encoding="utf-8") as f:
        return parse_substitution(f.read(), source=path)


def word_from_str(sub: Substitution, s: str) -> np.ndarray:
    return _as_word(sub.letter_id(ch) for ch in s)


def word_to_str(sub: Substitution, w: np.ndarray) -> str:
    return "".join(sub.letters[int(a)] for a in w)


# ---- applying and iterating ----

def apply(sub: Substitution, w: np.ndarray) -> np.ndarray:
    """One substitution step on a word (dim 1)."""
    if sub.dim != 1:
        raise ValueError("apply works on 1-d words; use tiling.grid_patch for dim 2")
    if len(w) == 0:
        return _as_word([])
    out = np.concatenate([sub.images[int(a)] for a in w])
    out.flags.writeable = False
    return out


def _predicted_lengths(sub: Substitution, a: int, n: int) -> int:
    # exact integer arithmetic; lengths can exceed int64 long before the cap check
    counts = [0] * sub.n_letters
    counts[a] = 1
    M = substitution_matrix(sub)
    for _ in range(n):
        counts = [sum(int(M[i, j]) * counts[j] for j in range(sub.n_letters))
                  for i in range(sub.n_letters)]
        if sum(counts) > 100 * LENGTH_CAP:
            break
    return sum(counts)


def iterate(sub: Substitution, a: int, n: int, cap: int = LENGTH_CAP) -> np.ndarray:
    """sigma^n(a) as a word (dim 1).  Raises LengthCapError beyond ``cap``."""
    if sub.dim != 1:
        raise ValueError("iterate works on 1-d words")
    if n < 0:
        raise ValueError("n must be >= 0")
    predicted = _predicted_lengths(sub, a, n)
    if predicted > cap:
        raise LengthCapError(
            f"sigma^{n}({sub.letters[a]}) has length {predicted} > cap {cap}")
    w = _as_word([a])
    for _ in range(n):
        w = apply(sub, w)
    return w


def power(sub: Substitution, k: int, cap: int = LENGTH_CAP) -> Substitution:
    """The substitution sigma^k (rule images iterated k times)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if sub.dim == 1:
        images = tuple(iterate(sub, a, k, cap=cap) for a in range(sub.n_letters))
        return Substitution(sub.letters, 1, images, source=sub.source)
    grids = []
    for a in range(sub.n_letters):
        g = sub.grids[a]
        for _ in range(k - 1):
            g = expand_grid(sub, g)
        if g.shape[0] > 10**5:
            raise LengthCapError(f"grid side {g.shape[0]} too large")
        g = g.copy()
        g.flags.writeable = False
        grids.append(g)
    images = tuple(_as_word(g.ravel()) for g in grids)
    return Substitution(sub.letters, 2, images, tuple(grids), q=sub.q ** k,
                        source=sub.source)


def expand_grid(sub: Substitution, labels: np.ndarray) -> np.ndarray:
    """Replace every cell of a label grid by its q x q rule image."""
    if sub.dim != 2:
        raise ValueError("expand_grid needs a 2-d substitution")
    q = sub.q
    stack = np.stack(sub.grids)              # (N, q, q)
    h, w = labels.shape
    out = stack[labels]                      # (h, w, q, q)
    return out.transpose(0, 2, 1, 3).reshape(h * q, w * q)


# ---- counting ----

def population_vector(sub: Substitution, w: np.ndarray) -> np.ndarray:
    """Letter counts ell(w) as exact int64."""
    return np.bincount(np.asarray(w, dtype=np.int64).ravel(),
                       minlength=sub.n_letters)


def substitution_matrix(sub: Substitution) -> np.ndarray:
    """M[a, b] = number of occurrences of a in the image of b (int64)."""
    n = sub.n_letters
    M = np.zeros((n, n), dtype=np.int64)
    for b in range(n):
        M[:, b] = population_vector(sub, sub.images[b])
    return M


# ---- language membership ----

def in_language(sub: Substitution, w: np.ndarray, max_depth: int = 8,
                cap: int = LENGTH_CAP) -> tuple[bool, Optional[tuple[int, int]]]:
    """Breadth-first witness search: is w a subword of some sigma^n(a)?

    Scans n = 1..max_depth, letters in alphabet order; returns
    (True, (letter, depth)) for the first witness, else (False, None).
    """
    if sub.dim != 1:
        raise ValueError("in_language works on 1-d words")
    if len(w) == 0:
        return True, None
    target = np.asarray(w, dtype=np.uint8).tobytes()
    level = [sub.images[a] for a in range(sub.n_letters)]
    for n in range(1, max_depth + 1):
        for a in range(sub.n_letters):
            if level[a].tobytes().find(target) >= 0:
                return True, (a, n)
        if n < max_depth:
            if max(len(v) for v in level) * sub.max_rule_len > cap:
                break
            level = [apply(sub, v) for v in level]
    return False, None


def _occurrence_witness(sub: Substitution, w: np.ndarray, max_depth: int,
                        cap: int = LENGTH_CAP) -> tuple[int, int, int]:
    """(letter, depth, leftmost offset) for the first BFS witness."""
    target = np.asarray(w, dtype=np.uint8).tobytes()
    level = [sub.images[a] for a in range(sub.n_letters)]
    for n in range(1, max_depth + 1):
        for a in range(sub.n_letters):
            p = level[a].tobytes().find(target)
            if p >= 0:
                return a, n, p
        if n < max_depth:
            if max(len(v) for v in level) * sub.max_rule_len > cap:
                break
            level = [apply(sub, v) for v in level]
    raise NotInLanguageError(
        f"no supertile witness within depth {max_depth} for a word of length {len(w)}")


# ---- fixed points and orbits ----

def fixed_point_seeds(sub: Substitution, depth: int = 8) -> list[tuple[int, int]]:
    """Seeds (a, b): sigma(a) ends with a, sigma(b) starts with b, ab in the language."""
    if sub.dim != 1:
        raise ValueError("fixed_point_seeds works on 1-d substitutions")
    out = []
    for a in range(sub.n_letters):
        if int(sub.images[a][-1]) != a:
            continue
        for b in range(sub.n_letters):
            if int(sub.images[b][0]) != b:
                continue
            ok, _ = in_language(sub, _as_word([a, b]), max_depth=depth)
            if ok:
                out.append((a, b))
    return out


@dataclass(frozen=True, eq=False)
class TwoSidedWord:
    """A window of a two-sided fixed point: x(-len(left)) ... x(-1) . x(0) x(1) ...

    ``left`` is stored in natural reading order, so x(-1) = left[-1].
    """
    left: np.ndarray
    right: np.ndarray

    def __getitem__(self, i: int) -> int:
        if i >= 0:
            return int(self.right[i])
        return int(self.left[len(self.left) + i])

    def slice(self, lo: int, hi: int) -> np.ndarray:
        """Letters x(lo) ... x(hi-1) as one array; requires lo <= 0 <= hi."""
        if lo > 0 or hi < 0:
            raise ValueError("slice must straddle the origin")
        if -lo > len(self.left) or hi > len(self.right):
            raise IndexError("window exceeds generated orbit")
        parts = []
        if lo < 0:
            parts.append(self.left[len(self.left) + lo:])
        parts.append(self.right[:hi])
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


def orbit_generate(sub: Substitution, seed: tuple[int, int], n: int,
                   cap: int = LENGTH_CAP) -> TwoSidedWord:
    """Two-sided orbit blocks (sigma^n(a), sigma^n(b)) for a seed (a, b)."""
    a, b = seed
    return TwoSidedWord(iterate(sub, a, n, cap=cap), iterate(sub, b, n, cap=cap))


# ---- accordion decomposition ----

@dataclass
class AccordionForm:
    """w = u_0 sigma(u_1) ... sigma^m(u_m) sigma^m(v_m) ... sigma(v_1) v_0."""
    m: int
    u: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def pieces(self) -> list[np.ndarray]:
        return list(self.u) + list(self.v)

    def reconstruct(self, sub: Substitution) -> np.ndarray:
        parts = []
        for i, piece in enumerate(self.u):
            p = piece
            for _ in range(i):
                p = apply(sub, p)
            parts.append(p)
        for i in range(len(self.v) - 1, -1, -1):
            p = self.v[i]
            for _ in range(i):
                p = apply(sub, p)
            parts.append(p)
        parts = [p for p in parts if len(p)]
        if not parts:
            return _as_word([])
        return np.concatenate(parts)


def _occurs_in_some_image(sub: Substitution, w: np.ndarray) -> bool:
    t = np.asarray(w, dtype=np.uint8).tobytes()
    return any(im.tobytes().find(t) >= 0 for im in sub.images)


_levels_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _supertile_levels(sub: Substitution, a: int, k: int) -> list[np.ndarray]:
    """sigma^j(a) for j = 0..k, cached per substitution instance."""
    per_sub = _levels_cache.setdefault(sub, {})
    levels = per_sub.get(a)
    if levels is None:
        levels = [_as_word([a])]
        per_sub[a] = levels
    while len(levels) <= k:
        if len(levels[-1]) * sub.max_rule_len > LENGTH_CAP:
            raise LengthCapError("supertile exceeds length cap")
        levels.append(apply(sub, levels[-1]))
    return levels[:k + 1]


def accordion_decompose(sub: Substitution, w: np.ndarray, max_depth: int = 24,
                        hint: Optional[tuple[int, int, int]] = None) -> AccordionForm:
    """Canonical accordion decomposition of a language word.

    ``hint`` is (letter, depth, offset) locating w inside sigma^depth(letter);
    without it the first breadth-first witness is used.  The peel maximizes
    the number of substitution levels, so a window equal to sigma^k(a)
    collapses to a single deep piece.
    """
    if sub.dim != 1:
        raise ValueError("accordion_decompose works on 1-d words")
    w = np.asarray(w, dtype=np.uint8)
    if len(w) == 0:
        return AccordionForm(0, [_as_word([])], [_as_word([])])
    if hint is not None:
        a, k, p = hint
        levels = _supertile_levels(sub, a, k)
        big = levels[k]
        if p < 0 or p + len(w) > len(big) or not np.array_equal(big[p:p + len(w)], w):
            raise ValueError("hint does not locate the window")
    else:
        a, k, p = _occurrence_witness(sub, w, max_depth)
        levels = _supertile_levels(sub, a, k)

    rl = sub.rule_lengths
    u: list[np.ndarray] = []
    v: list[np.ndarray] = []
    lo, hi = p, p + len(w)
    i = 0
    while True:
        W = levels[k - i]          # current window lives in this word
        if i == k:
            # apex: window is the single seed letter
            u.append(W[lo:hi])
            v.append(_as_word([]))
            break
        P = levels[k - i - 1]
        bounds = np.concatenate([[0], np.cumsum(rl[P])])
        j0 = int(np.searchsorted(bounds, lo, side="right")) - 1
        j1 = int(np.searchsorted(bounds, hi - 1, side="right")) - 1
        if j0 == j1:
            aligned = lo == bounds[j0] and hi == bounds[j0 + 1]
            if aligned and not (i + 1 == k and not _occurs_in_some_image(sub, levels[0])):
                u.append(_as_word([]))
                v.append(_as_word([]))
                lo, hi = j0, j0 + 1
                i += 1
                continue
            u.append(W[lo:hi])
            v.append(_as_word([]))
            break
        head_partial = lo > bounds[j0]
        tail_partial = hi < bounds[j1 + 1]
        ui = W[lo:bounds[j0 + 1]] if head_partial else _as_word([])
        vi = W[bounds[j1]:hi] if tail_partial else _as_word([])
        u.append(ui)
        v.append(vi)
        jstart = j0 + 1 if head_partial else j0
        jend = j1 - 1 if tail_partial else j1
        if jstart > jend:
            break
        lo, hi = jstart, jend + 1
        i += 1
    return AccordionForm(len(u) - 1, u, v)
