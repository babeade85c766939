"""Corpus construction, balancing, normalization, splitting and window sampling."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import signal

from utils.error_handler import ArgumentError, CorpusError, ValidationError, require
from utils.logger import get_logger

logger = get_logger('datapipe')

BALANCE_THRESHOLD = 0.15
BALANCE_TOLERANCE = 0.02
DEFAULT_TEST_FRACTION = 0.05
MIN_SERIES_PER_SOURCE = 20


@dataclass(frozen=True)
class SeriesRecord:
    """One univariate series tagged with the source it came from."""

    source: str
    id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise ArgumentError(f'series {self.id!r} is empty')
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @property
    def length(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class Corpus:
    records: tuple[SeriesRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SeriesRecord]:
        return iter(self.records)

    @property
    def total_points(self) -> int:
        return sum(r.length for r in self.records)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([r.length for r in self.records], dtype=np.int64)

    def sources(self) -> list[str]:
        return sorted({r.source for r in self.records})

    def by_source(self, source: str) -> list[SeriesRecord]:
        return [r for r in self.records if r.source == source]


@dataclass(frozen=True)
class SourceSpec:
    """One manifest entry: a label, a kind (``synth`` or ``csv``) and its options."""

    label: str
    kind: str
    options: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CorpusManifest:
    sources: tuple[SourceSpec, ...]
    seq_len: int = 256
    f_d: float = 1.0
    split_seed: int = 0
    test_fraction: float = DEFAULT_TEST_FRACTION

    def __post_init__(self):
        require(len(self.sources) > 0, 'sources', self.sources, 'at least one source is required')
        require(self.seq_len >= 2, 'seq_len', self.seq_len, 'must be >= 2')
        require(0 < self.f_d <= 1, 'f_d', self.f_d, 'must lie in (0, 1]')
        require(
            0 < self.test_fraction < 1,
            'test_fraction',
            self.test_fraction,
            'must lie in (0, 1)',
        )
        labels = [s.label for s in self.sources]
        dupes = sorted(k for k, v in Counter(labels).items() if v > 1)
        require(not dupes, 'sources', dupes, 'source labels must be unique')


@dataclass(frozen=True)
class WindowDraw:
    series_index: int
    start: int
    window: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class WindowBatch:
    """Inputs and one-step-ahead targets, both [B, seq_len], plus a loss mask."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_windows(cls, windows: np.ndarray, valid: np.ndarray) -> WindowBatch:
        return cls(
            inputs=windows[:, :-1],
            targets=windows[:, 1:],
            mask=valid[:, 1:] & valid[:, :-1],
        )

    @property
    def batch_size(self) -> int:
        return int(self.inputs.shape[0])


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256('/'.join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], 'little') >> 1


def normalize(series) -> np.ndarray:
    """Zero mean, unit population std; constant series become all zeros."""
    values = np.asarray(series, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ArgumentError('cannot normalize an empty series')
    if np.ptp(values) == 0:
        return np.zeros_like(values)
    centered = values - values.mean()
    return centered / values.std()


def normalize_corpus(corpus: Corpus) -> Corpus:
    return Corpus(tuple(replace(r, values=normalize(r.values)) for r in corpus))


def split(
    corpus: Corpus, seed: int, test_fraction: float = DEFAULT_TEST_FRACTION
) -> tuple[Corpus, Corpus]:
    """Per-source split by whole series; deterministic in ``seed``."""
    if not 0 < test_fraction < 1:
        raise ArgumentError(f'test_fraction must lie in (0, 1), got {test_fraction}')
    test_ids: set[str] = set()
    for source in corpus.sources():
        records = corpus.by_source(source)
        n = len(records)
        if n < MIN_SERIES_PER_SOURCE:
            logger.warning(
                f'Source {source!r} has only {n} series; the train/test split will be coarse'
            )
        n_test = int(math.floor(n * test_fraction + 0.5))
        if n >= 2:
            n_test = min(max(n_test, 1), n - 1)
        else:
            n_test = 0
        rng = np.random.default_rng(derive_seed(seed, 'split', source))
        chosen = rng.choice(n, size=n_test, replace=False) if n_test else []
        test_ids.update(records[i].id for i in chosen)
    train = Corpus(tuple(r for r in corpus if r.id not in test_ids))
    test = Corpus(tuple(r for r in corpus if r.id in test_ids))
    logger.info(f'Split {len(corpus)} series into {len(train)} train / {len(test)} test')
    return train, test


def _padded_window(values: np.ndarray, start: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    window = np.zeros(width)
    valid = np.zeros(width, dtype=bool)
    piece = values[start : start + width]
    window[width - piece.size :] = piece
    valid[width - piece.size :] = True
    return window, valid


class WindowSampler:
    """Length-proportional series choice with a fresh random start per visit.

    Series shorter than ``seq_len + 1`` are left-padded with zeros; the
    returned ``valid`` mask marks the real values.
    """

    def __init__(self, corpus: Corpus, seq_len: int, rng: np.random.Generator):
        if len(corpus) == 0:
            raise CorpusError('cannot sample windows from an empty corpus')
        self.corpus = corpus
        self.seq_len = seq_len
        self.rng = rng
        self._cumulative = np.cumsum(corpus.lengths)

    def draw(self) -> WindowDraw:
        width = self.seq_len + 1
        point = self.rng.integers(0, int(self._cumulative[-1]))
        index = int(np.searchsorted(self._cumulative, point, side='right'))
        values = self.corpus.records[index].values
        if values.size >= width:
            start = int(self.rng.integers(0, values.size - width + 1))
        else:
            start = 0
        window, valid = _padded_window(values, start, width)
        return WindowDraw(series_index=index, start=start, window=window, valid=valid)

    def batch(self, batch_size: int) -> WindowBatch:
        draws = [self.draw() for _ in range(batch_size)]
        windows = np.stack([d.window for d in draws])
        valid = np.stack([d.valid for d in draws])
        logger.debug(f'Sampled batch of {batch_size} windows')
        return WindowBatch.from_windows(windows, valid)


def sample_window(corpus: Corpus, rng: np.random.Generator, seq_len: int) -> WindowDraw:
    """Draw a single window of ``seq_len + 1`` points."""
    return WindowSampler(corpus, seq_len, rng).draw()


def tile_windows(corpus: Corpus, seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Cover every series with consecutive ``seq_len + 1`` windows.

    Consecutive windows share one point so each target is scored once; the
    last window is aligned to the series end.
    """
    width = seq_len + 1
    windows: list[np.ndarray] = []
    valids: list[np.ndarray] = []
    for record in corpus:
        t = record.length
        if t < width:
            starts = [0]
        else:
            starts = list(range(0, t - width + 1, seq_len))
            if starts[-1] != t - width:
                starts.append(t - width)
        for start in starts:
            window, valid = _padded_window(record.values, start, width)
            windows.append(window)
            valids.append(valid)
    if not windows:
        raise CorpusError('cannot tile windows over an empty corpus')
    return np.stack(windows), np.stack(valids)


def scale_dataset(
    corpus: Corpus, f_d: float, rng: np.random.Generator, seq_len: int
) -> Corpus:
    """Keep a contiguous ``ceil(f_d * t)`` segment of long series; drop short ones w.p. 1 - f_d."""
    if not 0 < f_d <= 1:
        raise ArgumentError(f'f_d must lie in (0, 1], got {f_d}')
    if f_d == 1:
        return corpus
    kept: list[SeriesRecord] = []
    for record in corpus:
        t = record.length
        cut = math.ceil(f_d * t)
        if cut >= seq_len + 1:
            offset = int(rng.integers(0, t - cut + 1))
            kept.append(replace(record, values=record.values[offset : offset + cut]))
        elif rng.random() < f_d:
            kept.append(record)
    scaled = Corpus(tuple(kept))
    logger.info(
        f'Scaled corpus with f_d={f_d}: {corpus.total_points} -> {scaled.total_points} points'
    )
    return scaled


def _ar2(a1_range, a2_range):
    def generate(n: int, rng: np.random.Generator) -> np.ndarray:
        a1 = rng.uniform(*a1_range)
        a2 = rng.uniform(*a2_range)
        noise = rng.standard_normal(n)
        return signal.lfilter([1.0], [1.0, -a1, -a2], noise)

    return generate


def _sines(period_range):
    def generate(n: int, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(n, dtype=np.float64)
        out = 0.1 * rng.standard_normal(n)
        for _ in range(int(rng.integers(1, 4))):
            period = rng.uniform(*period_range)
            phase = rng.uniform(0, 2 * np.pi)
            out += rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * t / period + phase)
        return out

    return generate


def _random_walk(max_drift: float):
    def generate(n: int, rng: np.random.Generator) -> np.ndarray:
        drift = rng.uniform(-max_drift, max_drift)
        return np.cumsum(drift + rng.standard_normal(n))

    return generate


def _bursts(draw: Callable[[np.random.Generator, int], np.ndarray]):
    def generate(n: int, rng: np.random.Generator) -> np.ndarray:
        out = rng.standard_normal(n)
        for _ in range(max(1, n // 200)):
            start = int(rng.integers(0, n))
            width = int(rng.integers(1, 20))
            segment = out[start : start + width]
            segment += draw(rng, segment.size)
        return np.clip(out, -1e3, 1e3)

    return generate


SYNTH_FAMILIES: dict[str, Callable[[int, np.random.Generator], np.ndarray]] = {
    'ar2_persistent': _ar2((0.5, 0.9), (-0.2, 0.05)),
    'ar2_oscillatory': _ar2((0.3, 1.2), (-0.9, -0.4)),
    'sine_slow': _sines((50.0, 400.0)),
    'sine_fast': _sines((4.0, 40.0)),
    'random_walk': _random_walk(0.0),
    'random_walk_drift': _random_walk(0.05),
    'student_t_bursts': _bursts(lambda rng, k: 5.0 * rng.standard_t(2.0, size=k)),
    'cauchy_bursts': _bursts(lambda rng, k: rng.standard_cauchy(size=k)),
}


@dataclass(frozen=True)
class SynthSpec:
    """Generator families and the exact number of points to produce."""

    total_points: int
    families: tuple[str, ...] = tuple(SYNTH_FAMILIES)
    min_length: int = 300
    max_length: int = 2000

    def __post_init__(self):
        require(self.total_points >= 1, 'total_points', self.total_points, 'must be >= 1')
        require(len(self.families) > 0, 'families', self.families, 'at least one family')
        unknown = [f for f in self.families if f not in SYNTH_FAMILIES]
        require(not unknown, 'families', unknown, f'known families: {sorted(SYNTH_FAMILIES)}')
        require(
            1 <= self.min_length <= self.max_length,
            'min_length',
            (self.min_length, self.max_length),
            'need 1 <= min_length <= max_length',
        )


def synth_spec_from_options(options: dict[str, Any]) -> tuple[SynthSpec, int | None]:
    """Build a SynthSpec from manifest options; the optional ``seed`` is returned apart."""
    options = dict(options)
    seed = options.pop('seed', None)
    if 'families' in options:
        options['families'] = tuple(options['families'])
    unknown = sorted(set(options) - set(SynthSpec.__dataclass_fields__))
    if unknown:
        raise ValidationError('options', unknown, f'unknown synth options {unknown}')
    return SynthSpec(**options), None if seed is None else int(seed)


def synth_corpus(recipe: SynthSpec, seed: int) -> Corpus:
    """Deterministic synthetic corpus; each family gets an equal share of points.

    Each record's source label is its family name, so the default eight
    families sit at 12.5% apiece. A tail shorter than ``min_length`` is folded
    into the family's last record, which can then run up to
    ``max_length + min_length - 1`` points.
    """
    n_families = len(recipe.families)
    base, remainder = divmod(recipe.total_points, n_families)
    records: list[SeriesRecord] = []
    for i, family in enumerate(recipe.families):
        budget = base + (1 if i < remainder else 0)
        rng = np.random.default_rng(derive_seed(seed, 'synth', family))
        generate = SYNTH_FAMILIES[family]
        produced = 0
        k = 0
        while produced < budget:
            length = int(rng.integers(recipe.min_length, recipe.max_length + 1))
            rest = budget - produced
            if rest - length < recipe.min_length:
                length = rest
            records.append(SeriesRecord(family, f'{family}-{k:05d}', generate(length, rng)))
            produced += length
            k += 1
    corpus = Corpus(tuple(records))
    logger.info(f'Generated synthetic corpus: {len(corpus)} series, {corpus.total_points} points')
    return corpus


@dataclass(frozen=True)
class BalanceReport:
    counts: dict[str, int]
    fractions: dict[str, float]
    total: int
    warnings: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            'total_points': self.total,
            'sources': {
                s: {'points': self.counts[s], 'fraction': self.fractions[s]}
                for s in self.counts
            },
            'warnings': list(self.warnings),
        }


def balance_report(
    corpus: Corpus,
    threshold: float = BALANCE_THRESHOLD,
    tolerance: float = BALANCE_TOLERANCE,
) -> BalanceReport:
    """Exact per-source point counts plus a warning for every source over the limit."""
    counts: dict[str, int] = {}
    for record in corpus:
        counts[record.source] = counts.get(record.source, 0) + record.length
    counts = dict(sorted(counts.items()))
    total = sum(counts.values())
    fractions = {s: (c / total if total else 0.0) for s, c in counts.items()}
    warnings = [
        f'source {s!r} holds {f:.1%} of all points (limit {threshold:.0%})'
        for s, f in fractions.items()
        if f > threshold + tolerance
    ]
    for message in warnings:
        logger.warning(message)
    return BalanceReport(counts=counts, fractions=fractions, total=total, warnings=warnings)


def _timestamp_order(timestamps: pd.Series, path: Path) -> pd.Series:
    """Sortable timestamps: numbers stay numbers, anything else is parsed as a date."""
    if pd.api.types.is_numeric_dtype(timestamps):
        return timestamps
    try:
        return pd.to_datetime(timestamps, format='mixed')
    except (ValueError, TypeError) as e:
        raise ValidationError('timestamp', path.name, f'unparseable timestamps: {e}') from e


def load_csv_series(
    path: str | Path,
    source: str,
    fmt: str = 'wide',
    column: str | None = None,
) -> list[SeriesRecord]:
    """Read series from CSV.

    ``wide``: every numeric column (or just ``column``) is one series.
    ``long``: columns ``id,timestamp,value``; rows are ordered by timestamp,
    compared as numbers when the column is numeric and as dates otherwise.
    Missing values are dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f'CSV source {str(path)!r} does not exist')
    frame = pd.read_csv(path)
    records: list[SeriesRecord] = []
    if fmt == 'wide':
        columns = [column] if column else list(frame.select_dtypes('number').columns)
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise ValidationError('column', missing, f'not found in {path.name}')
        for name in columns:
            values = frame[name].dropna().to_numpy(dtype=np.float64)
            if values.size:
                records.append(SeriesRecord(source, f'{source}/{name}', values))
    elif fmt == 'long':
        required = {'id', 'timestamp', 'value'}
        if not required.issubset(frame.columns):
            raise ValidationError('format', sorted(frame.columns), 'long CSV needs id,timestamp,value')
        frame = frame.dropna(subset=['value'])
        frame = frame.assign(timestamp=_timestamp_order(frame['timestamp'], path))
        frame = frame.sort_values(['id', 'timestamp'], kind='stable')
        for series_id, group in frame.groupby('id', sort=True):
            records.append(
                SeriesRecord(source, f'{source}/{series_id}', group['value'].to_numpy(np.float64))
            )
    else:
        raise ValidationError('format', fmt, "expected 'wide' or 'long'")
    if not records:
        raise CorpusError(f'no series found in {str(path)!r}')
    logger.info(f'Loaded {len(records)} series from {path.name} as source {source!r}')
    return records


def read_series_csv(path: str | Path, column: str | None = None) -> np.ndarray:
    """Load one series: the ``value`` column, ``column`` if given, else the first numeric column."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f'series file {str(path)!r} does not exist')
    frame = pd.read_csv(path)
    if column is None:
        numeric = list(frame.select_dtypes('number').columns)
        column = 'value' if 'value' in frame.columns else (numeric[0] if numeric else None)
    if column is None or column not in frame.columns:
        raise ValidationError('column', column, f'no usable numeric column in {path.name}')
    values = frame[column].dropna().to_numpy(dtype=np.float64)
    if values.size == 0:
        raise CorpusError(f'series file {str(path)!r} has no values')
    return values


def build_corpus(manifest: CorpusManifest, base_dir: str | Path = '.') -> Corpus:
    """Materialize every manifest source and normalize each series."""
    base_dir = Path(base_dir)
    records: list[SeriesRecord] = []
    for source in manifest.sources:
        if source.kind == 'synth':
            recipe, seed = synth_spec_from_options(source.options)
            synth = synth_corpus(recipe, manifest.split_seed if seed is None else seed)
            # one source label per family keeps the balance rule meaningful
            records.extend(
                replace(r, source=f'{source.label}.{r.source}', id=f'{source.label}/{r.id}')
                for r in synth
            )
        elif source.kind == 'csv':
            options = source.options
            csv_path = Path(options['path'])
            if not csv_path.is_absolute():
                csv_path = base_dir / csv_path
            records.extend(
                load_csv_series(
                    csv_path,
                    source.label,
                    fmt=options.get('format', 'wide'),
                    column=options.get('column'),
                )
            )
        else:
            raise ValidationError('kind', source.kind, "expected 'synth' or 'csv'")
    corpus = normalize_corpus(Corpus(tuple(records)))
    if len(corpus) == 0:
        raise CorpusError('manifest produced an empty corpus')
    return corpus
